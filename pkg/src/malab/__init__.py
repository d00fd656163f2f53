"""Numerical laboratory for the complex Monge-Ampere Dirichlet problem on
pseudoconvex grid domains: certification, barriers, envelopes, densities,
capacities, and Holder-regularity probes."""

__version__ = "0.1.0"

from .domain import (CertificationReport, DefiningFunction, DomainError, GridDomain,
                     Piece, ball_defining_function, certify_psh_type, discretize,
                     erode, subgrid_from_mask)
from .field import GridField, field_from_callable, field_from_interior, read_snapshot, write_snapshot
from .calculus import (MANormalization, ball_average, complex_hessian, jensen_mass_identity,
                       laplacian_mass, ma_density, psh_defect, sup_regularize)
from .barrier import (BarrierFamily, BoundaryData, barrier_family, barrier_psh_check,
                      boundary_constant, boundary_data_from_callable, envelope_bounds)
from .solve import (BoundBoundary, ComparisonVerdict, Density, ExhaustionRun, GlueConstruction,
                    SolveError, SolveReport, bind_boundary, bind_to_field, build_subsolution,
                    comparison_check, density_from_callable, exhaustion_solve, rho_field,
                    scheme_density, solve_density, solve_homogeneous, subsolution_glue)
from .stencil import ma_constant, make_stencil
