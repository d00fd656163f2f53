"""Monotone wide-stencil solvers for the Monge-Ampere Dirichlet problem.

All solvers relax the same per-node scheme: with the neighbor values frozen,
each complex direction contributes an affine directional value
L_d(t) = A_d - C_d * t at center value t, and the node equation is

    c_n * min over frames of  prod_d max(L_d(t) / 4, 0)  =  f(node).

The scheme value is non-increasing in t, so the update is the smallest root;
for n <= 2 the per-frame equation is linear/quadratic and solved in closed
form (a bisection reference lives alongside for cross-checking).  The
homogeneous problem is the same relaxation with f = 0 projected under the
barrier obstacle min(U, M); it converges to the largest discretely
plurisubharmonic function below the obstacle with pinned boundary values.
Sweeps are red-black over the lattice parity; nested grids (halved spacing)
provide deterministic coarse-to-fine initialization.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .barrier import BoundaryData, barrier_family, envelope_bounds
from .domain import DomainError, GridDomain, discretize, erode, subgrid_from_mask
from .field import GridField, field_from_interior
from .stencil import ma_constant

DEFAULT_MAX_SWEEPS = 100_000
DEFAULT_TOL_FACTOR = 1e-8  # of the boundary-data oscillation (floored at 1)


class SolveError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Boundary binding and gather tables
# ---------------------------------------------------------------------------

@dataclass
class BoundBoundary:
    """Numeric pinned-arm contributions for one grid + boundary data pair."""

    grid: GridDomain
    pin_B: list  # per direction (K_d,) sums of w * value(crossing)
    ring_values: np.ndarray

    def ring_value_field(self, interior_values: np.ndarray) -> GridField:
        return field_from_interior(self.grid, interior_values, self.ring_values)


def bind_boundary(grid: GridDomain, value_at) -> BoundBoundary:
    """Evaluate boundary data at every pinned-arm crossing point."""
    pin_B = []
    arms = grid.arms
    for d_i in range(len(grid.stencil.directions)):
        K = arms.fix_pos[d_i].size
        acc = np.zeros(K)
        for a_i in range(4):
            pinned = arms.fix_int[d_i][a_i] < 0
            if pinned.any():
                pts = arms.fix_xi[d_i][a_i][pinned]
                acc[pinned] += arms.fix_w[d_i][a_i][pinned] * np.asarray(value_at(pts), dtype=float)
        pin_B.append(acc)
    ring_values = (np.asarray(value_at(grid.ring_xi), dtype=float)
                   if grid.ring_flat.size else np.zeros(0))
    return BoundBoundary(grid, pin_B, ring_values)


def bind_to_field(grid: GridDomain, parent: GridField) -> BoundBoundary:
    """Bind a lattice-flavor subgrid to values of a field on the parent grid."""
    def value_at(points):
        flat = parent.domain.flat_of_points(points)
        return parent.values.ravel()[flat]
    return bind_boundary(grid, value_at)


class _SolveTables:
    """Per-color gather tables; built once per grid and cached on it."""

    def __init__(self, grid: GridDomain):
        arms = grid.arms
        ndir = len(grid.stencil.directions)
        self.ndir = ndir
        self.colors = grid.color_pos
        self.nbr_c = [[arms.nbr[d][:, pos] for pos in self.colors] for d in range(ndir)]
        self.C_c = []
        self.fix_sel = []  # row numbers into the fix tables, per direction/color
        self.fix_where = []  # positions within the color ordering to overwrite
        self.fw_int = []  # weights zeroed on pinned arms
        self.fnbr_safe = []
        pos_rank = np.empty(grid.n_interior, dtype=np.int64)
        for c, pos in enumerate(self.colors):
            pos_rank[pos] = np.arange(pos.size)
        color_of = np.empty(grid.n_interior, dtype=np.int8)
        color_of[self.colors[0]] = 0
        color_of[self.colors[1]] = 1
        for d in range(ndir):
            C_by_color = []
            sel_by_color = []
            where_by_color = []
            fp = arms.fix_pos[d]
            for c, pos in enumerate(self.colors):
                C = np.full(pos.size, arms.uniform_C[d])
                in_c = color_of[fp] == c
                rows = np.flatnonzero(in_c)
                where = pos_rank[fp[rows]]
                C[where] = arms.fix_C[d][rows]
                C_by_color.append(C)
                sel_by_color.append(rows.astype(np.int64))
                where_by_color.append(where.astype(np.int64))
            self.C_c.append(C_by_color)
            self.fix_sel.append(sel_by_color)
            self.fix_where.append(where_by_color)
            pinned = arms.fix_int[d] < 0
            self.fw_int.append(np.where(pinned, 0.0, arms.fix_w[d]))
            self.fnbr_safe.append(np.where(pinned, 0, arms.fix_int[d]).astype(np.int32))


def _tables(grid: GridDomain) -> _SolveTables:
    cache = getattr(grid, "_solve_tables", None)
    if cache is None:
        cache = _SolveTables(grid)
        grid._solve_tables = cache
    return cache


def _collect_color(grid, tables, bound, u, d, c):
    """Directional (A, C) at color-c nodes with neighbor values frozen."""
    arms = grid.arms
    g = u[tables.nbr_c[d][c]]
    A = arms.uniform_w[d] * g.sum(axis=0)
    rows = tables.fix_sel[d][c]
    if rows.size:
        gi = u[tables.fnbr_safe[d][:, rows]]
        A_fix = (tables.fw_int[d][:, rows] * gi).sum(axis=0) + bound.pin_B[d][rows]
        A[tables.fix_where[d][c]] = A_fix
    return A, tables.C_c[d][c]


def _collect_all(grid, bound, u):
    """Directional (A, C) at every interior node (for residual evaluation)."""
    arms = grid.arms
    ndir = len(grid.stencil.directions)
    A = np.empty((ndir, grid.n_interior))
    C = np.empty((ndir, grid.n_interior))
    for d in range(ndir):
        g = u[arms.nbr[d]]
        A[d] = arms.uniform_w[d] * g.sum(axis=0)
        C[d] = arms.uniform_C[d]
        rows = np.arange(arms.fix_pos[d].size)
        if rows.size:
            pinned = arms.fix_int[d] < 0
            fw = np.where(pinned, 0.0, grid.arms.fix_w[d])
            fnbr = np.where(pinned, 0, arms.fix_int[d])
            A_fix = (fw * u[fnbr]).sum(axis=0) + bound.pin_B[d]
            A[d][arms.fix_pos[d]] = A_fix
            C[d][arms.fix_pos[d]] = arms.fix_C[d]
    return A, C


# ---------------------------------------------------------------------------
# Per-node roots
# ---------------------------------------------------------------------------

def _root_from_AC(A, C, f, n, frames, cn):
    """Smallest t with c_n min_F prod max((A-C t)/4, 0) <= f, vectorized."""
    if n == 1:
        return (A[0] - 4.0 * f / cn) / C[0]
    best = None
    S = 16.0 * f / cn
    for (a, b) in frames:
        Q = C[a] * C[b]
        P = A[a] * C[b] + A[b] * C[a]
        disc = (A[a] * C[b] - A[b] * C[a]) ** 2 + 4.0 * Q * S
        sq = np.sqrt(disc)
        Rc = A[a] * A[b] - S
        pos = P > 0
        denom = np.where(pos, P + sq, 1.0)
        t = np.where(pos, 2.0 * Rc / denom, (P - sq) / (2.0 * Q))
        best = t if best is None else np.minimum(best, t)
    return best


def _scheme_value(A, C, t, n, frames, cn):
    """c_n min over frames of the clamped directional product at value t."""
    L4 = np.maximum((A - C * t[None, :]) / 4.0, 0.0)
    best = None
    for frame in frames:
        prod = np.ones_like(t)
        for d in frame:
            prod = prod * L4[d]
        best = prod if best is None else np.minimum(best, prod)
    return cn * best


def node_root_bisection(A, C, f, n, frames, cn, iters: int = 200):
    """Reference bisection for the per-node scheme root (scalar inputs)."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    hi = float(max((A / C)))
    s = 4.0 / C.min() * (f / cn) ** (1.0 / n)
    lo = float(min(A / C)) - s - 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        val = _scheme_value(A[:, None], C[:, None], np.array([mid]), n, frames, cn)[0]
        if val <= f:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _sweeps(grid, bound, f_int, obstacle_int, u0_int, tol, max_sweeps, omega: float = 1.0):
    """Red-black relaxation until the largest pointwise move drops below tol.

    f_int None means the homogeneous envelope update (pure quarter-average
    minimum); obstacle_int, when given, caps every update (projected sweep).
    omega > 1 over-relaxes the nodal move; the fixed point is unchanged and
    the final state is always polished by plain sweeps before acceptance.
    """
    tables = _tables(grid)
    frames = grid.stencil.frames
    n = grid.n
    cn = ma_constant(n)
    u = u0_int.copy()
    last = np.inf
    relaxing = omega != 1.0
    prev_check = np.inf
    for sweep in range(1, max_sweeps + 1):
        last = 0.0
        for c, pos in enumerate(tables.colors):
            if pos.size == 0:
                continue
            A = np.empty((tables.ndir, pos.size))
            C = np.empty((tables.ndir, pos.size))
            for d in range(tables.ndir):
                A[d], C[d] = _collect_color(grid, tables, bound, u, d, c)
            if f_int is None:
                t = (A / C).min(axis=0)
            else:
                t = _root_from_AC(A, C, f_int[pos], n, frames, cn)
            if relaxing:
                t = u[pos] + omega * (t - u[pos])
            if obstacle_int is not None:
                t = np.minimum(t, obstacle_int[pos])
            move = np.abs(u[pos] - t).max()
            last = max(last, float(move))
            u[pos] = t
        if relaxing:
            # over-relaxation can limit-cycle near clamp switches: once close
            # to tolerance (or stalled), plain Gauss-Seidel has the final word
            stalled = sweep % 50 == 0 and last > 0.9 * prev_check
            if sweep % 50 == 0:
                prev_check = last
            if last < 50.0 * tol or stalled:
                u2, s2, l2 = _sweeps(grid, bound, f_int, obstacle_int, u, tol,
                                     max_sweeps - sweep, omega=1.0)
                return u2, sweep + s2, l2
        elif last < tol:
            return u, sweep, last
    raise SolveError(
        f"iteration budget {max_sweeps} exceeded: last sweep moved {last:.3e} > tol {tol:.3e}")


def scheme_line_values(grid, bound, u_int):
    """Directional L_d u at every interior node under the solve stencil."""
    A, C = _collect_all(grid, bound, u_int)
    return A - C * u_int[None, :]


def scheme_density(grid, bound, u_int):
    """Monge-Ampere density of the state under the solve stencil."""
    L = scheme_line_values(grid, bound, u_int)
    cn = ma_constant(grid.n)
    fac = np.maximum(L / 4.0, 0.0)
    best = None
    for frame in grid.stencil.frames:
        prod = np.ones(u_int.size)
        for d in frame:
            prod = prod * fac[d]
        best = prod if best is None else np.minimum(best, prod)
    return cn * best


def scheme_psh_defect(grid, bound, u_int) -> float:
    return float(scheme_line_values(grid, bound, u_int).min())


# ---------------------------------------------------------------------------
# Coarse-to-fine initialization
# ---------------------------------------------------------------------------

def _can_coarsen(grid: GridDomain) -> bool:
    if grid.flavor != "levelset":
        return False
    for lo, hi in grid.box:
        count = (hi - lo) / grid.h
        if int(round(count)) % 2:
            return False
    return all(s >= 9 for s in grid.shape)


def _coarsen(grid: GridDomain) -> GridDomain | None:
    try:
        return discretize(grid.fn, 2 * grid.h, grid.box)
    except DomainError:
        return None


def _fill_exterior(dom: GridDomain, values: np.ndarray) -> np.ndarray:
    covered = np.zeros(int(np.prod(dom.shape)), dtype=bool)
    covered[dom.interior_flat] = True
    covered[dom.ring_flat] = True
    covered = covered.reshape(dom.shape)
    if covered.all():
        return values
    idx = ndimage.distance_transform_edt(~covered, return_distances=False, return_indices=True)
    return values[tuple(idx)]


def _prolong(coarse: GridDomain, fine: GridDomain, coarse_field_full: np.ndarray) -> np.ndarray:
    """Nested-grid linear interpolation of a full-box coarse array."""
    out = _fill_exterior(coarse, coarse_field_full)
    for axis in range(out.ndim):
        shape = list(out.shape)
        shape[axis] = 2 * shape[axis] - 1
        new = np.empty(shape)
        sl_even = [slice(None)] * out.ndim
        sl_even[axis] = slice(0, None, 2)
        new[tuple(sl_even)] = out
        sl_odd = [slice(None)] * out.ndim
        sl_odd[axis] = slice(1, None, 2)
        sl_lo = [slice(None)] * out.ndim
        sl_lo[axis] = slice(0, -1)
        sl_hi = [slice(None)] * out.ndim
        sl_hi[axis] = slice(1, None)
        new[tuple(sl_odd)] = 0.5 * (out[tuple(sl_lo)] + out[tuple(sl_hi)])
        out = new
    if out.shape != fine.shape:
        raise SolveError("coarse and fine grids do not nest")
    return out


# ---------------------------------------------------------------------------
# Reports and public solves
# ---------------------------------------------------------------------------

@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    psh_defect: float
    boundary_mismatch: float
    wall_seconds: float
    notes: str = ""


def solve_tolerance(osc: float, tol: float | None) -> float:
    if tol is not None:
        return tol
    return DEFAULT_TOL_FACTOR * max(osc, 1.0)


def solve_homogeneous(grid: GridDomain, data: BoundaryData, tol: float | None = None,
                      max_sweeps: int = DEFAULT_MAX_SWEEPS, cascade: bool = True,
                      _as_state: bool = False):
    """Perron envelope for the homogeneous problem.

    Iterates the projected quarter-average relaxation from the barrier
    obstacle min(U, M) down to the largest discretely psh function below it;
    the converged field is maximal (scheme density ~ 0 off the contact set).
    """
    t0 = time.perf_counter()
    fam = barrier_family(grid, data)
    L, U = envelope_bounds(data, fam, grid)
    obstacle = np.minimum(U.interior, data.M)
    bound = bind_boundary(grid, lambda pts: np.asarray(data.phi(pts), dtype=float))
    tol_eff = solve_tolerance(float(np.ptp(bound.ring_values)) if bound.ring_values.size else 0.0, tol)
    init = obstacle.copy()
    note = ""
    # the pinned-data harmonic state dominates the envelope, so starting at
    # min(obstacle, harmonic) keeps the projected sweep monotone from above
    state = _linear_laplace_state(grid, bound, np.zeros(grid.n_interior))
    if state is not None:
        init = np.minimum(init, state)
        note = "harmonic-init"
    elif cascade and _can_coarsen(grid):
        coarse = _coarsen(grid)
        if coarse is not None and coarse.n_interior:
            cu = solve_homogeneous(coarse, data, tol=tol_eff, max_sweeps=max_sweeps,
                                   cascade=True, _as_state=True)
            full = np.full(int(np.prod(coarse.shape)), np.nan)
            full[coarse.interior_flat] = cu
            full[coarse.ring_flat] = np.asarray(data.phi(coarse.ring_xi), dtype=float)
            init = np.minimum(_prolong(coarse, grid, full.reshape(coarse.shape))
                              .ravel()[grid.interior_flat], obstacle)
            note = "cascade"
    u, sweeps, last = _sweeps(grid, bound, None, obstacle, init, tol_eff, max_sweeps)
    if _as_state:
        return u
    report = SolveReport(sweeps, last, scheme_psh_defect(grid, bound, u), 0.0,
                         time.perf_counter() - t0, note)
    return bound.ring_value_field(u), report


@dataclass
class Density:
    """Nonnegative L^p density on a grid."""

    field: GridField
    p: float
    support: np.ndarray  # flat indices of {f > 0}
    norm_p: float

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)


def density_from_callable(grid: GridDomain, func, p: float) -> Density:
    if p <= 1.0:
        raise SolveError(f"integrability exponent p={p} must exceed 1")
    vals = np.asarray(func(grid.node_points(grid.interior_flat)), dtype=float)
    if (vals < 0).any():
        raise SolveError("density must be nonnegative")
    fld = field_from_interior(grid, vals)
    support = grid.interior_flat[vals > 0]
    norm = float((grid.h ** (2 * grid.n) * (vals**p).sum()) ** (1.0 / p))
    return Density(fld, p, support, norm)


def solve_density(grid: GridDomain, data_or_bound, f: Density, tol: float | None = None,
                  max_sweeps: int = DEFAULT_MAX_SWEEPS, cascade: bool = True,
                  init: np.ndarray | None = None, omega: float = 1.0,
                  _as_state: bool = False):
    """Dirichlet solve of the inhomogeneous scheme by red-black relaxation.

    ``data_or_bound`` is BoundaryData for level-set grids or a prebuilt
    BoundBoundary (lattice grids bind their ring to a parent field).  On
    level-set grids a nested coarse solve initializes the fine sweep.
    """
    t0 = time.perf_counter()
    if isinstance(data_or_bound, BoundBoundary):
        bound = data_or_bound
        data = None
    else:
        data = data_or_bound
        bound = bind_boundary(grid, lambda pts: np.asarray(data.phi(pts), dtype=float))
    f_int = f.field.interior
    if (f_int < 0).any():
        raise SolveError("density must be nonnegative")
    tol_eff = solve_tolerance(float(np.ptp(bound.ring_values)) if bound.ring_values.size else 0.0, tol)
    note = ""
    cn = ma_constant(grid.n)
    if grid.n == 1 or init is None:
        # n=1: the clamp is inactive for f >= 0, so the sparse linear solve
        # lands on the scheme solution and sweeps below just verify it.
        # n=2: the isotropic surrogate (axis-line operator = 4n (f/c_n)^{1/n})
        # is a deterministic initializer; correctness comes from the sweeps.
        rhs = 4.0 * grid.n * (f_int / cn) ** (1.0 / grid.n)
        state = _linear_laplace_state(grid, bound, rhs)
        if state is not None:
            init = state
            note = "linear" if grid.n == 1 else "linear-init"
    if init is None:
        if cascade and data is not None and _can_coarsen(grid):
            coarse = _coarsen(grid)
            if coarse is not None and coarse.n_interior:
                cf = density_from_callable(
                    coarse, lambda pts: _resample_density(f, pts), f.p)
                cu = solve_density(coarse, data, cf, tol=tol_eff, max_sweeps=max_sweeps,
                                   cascade=True, omega=omega, _as_state=True)
                full = np.full(int(np.prod(coarse.shape)), np.nan)
                full[coarse.interior_flat] = cu
                full[coarse.ring_flat] = np.asarray(data.phi(coarse.ring_xi), dtype=float)
                init = _prolong(coarse, grid, full.reshape(coarse.shape)).ravel()[grid.interior_flat]
                note = "cascade"
        if init is None:
            init = np.full(grid.n_interior, float(bound.ring_values.min()) if bound.ring_values.size else 0.0)
    u, sweeps, last = _sweeps(grid, bound, f_int, None, init, tol_eff, max_sweeps,
                              omega=1.0 if grid.n == 1 else omega)
    if _as_state:
        return u
    resid = float(np.abs(scheme_density(grid, bound, u) - f_int).max())
    report = SolveReport(iterations=sweeps, final_residual=resid,
                         psh_defect=scheme_psh_defect(grid, bound, u),
                         boundary_mismatch=0.0,
                         wall_seconds=time.perf_counter() - t0, notes=note)
    return bound.ring_value_field(u), report


def _laplace_system(grid: GridDomain, bound: BoundBoundary):
    """Sparse real-Laplacian system (sum of axis-line operators) and its
    pinned-arm right-hand-side contribution."""
    from scipy.sparse import coo_matrix

    arms = grid.arms
    N = grid.n_interior
    diag = np.zeros(N)
    B = np.zeros(N)
    rows, cols, vals = [], [], []
    for d in range(grid.n):
        dd = np.full(N, arms.uniform_C[d])
        dd[arms.fix_pos[d]] = arms.fix_C[d]
        diag += dd
        B[arms.fix_pos[d]] += bound.pin_B[d]
        uniform_rows = np.flatnonzero(~arms.is_fix[d])
        for a in range(4):
            rows.append(uniform_rows)
            cols.append(arms.nbr[d][a][uniform_rows])
            vals.append(np.full(uniform_rows.size, -arms.uniform_w[d]))
            ok = arms.fix_int[d][a] >= 0
            rows.append(arms.fix_pos[d][ok])
            cols.append(arms.fix_int[d][a][ok])
            vals.append(-arms.fix_w[d][a][ok])
    rows.append(np.arange(N)); cols.append(np.arange(N)); vals.append(diag)
    mat = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                     shape=(N, N)).tocsr()
    return mat, B


def _linear_laplace_state(grid: GridDomain, bound: BoundBoundary,
                          rhs_int: np.ndarray) -> np.ndarray | None:
    """Solve (sum of axis-line operators) u = rhs with the pinned data.

    For n = 1 and nonnegative rhs this IS the scheme solution (the clamp is
    inactive); for n = 2 it is the isotropic surrogate used purely as a sweep
    initializer (algebraic multigrid, deterministic setup).  Returns None if
    no sparse path is available.
    """
    from scipy.sparse.linalg import spsolve

    mat, B = _laplace_system(grid, bound)
    b = B - rhs_int
    if grid.n == 1:
        return spsolve(mat, b)
    try:
        from scipy.sparse.linalg import LinearOperator, bicgstab

        inv_diag = 1.0 / mat.diagonal()
        precond = LinearOperator(mat.shape, matvec=lambda v: inv_diag * v)
        x, info = bicgstab(mat, b, rtol=1e-10, atol=0.0, maxiter=4000, M=precond)
        if info == 0 and np.isfinite(x).all():
            return x
    except Exception:
        pass
    return None


def _resample_density(f: Density, points: np.ndarray) -> np.ndarray:
    """Evaluate a density field at arbitrary lattice points by nearest node."""
    dom = f.field.domain
    out = np.zeros(len(points))
    vals = f.field.values.ravel()
    flat = dom.flat_of_points(points)
    mask = dom.pos_of_flat[flat] >= 0
    out[mask] = vals[flat[mask]]
    return out


# ---------------------------------------------------------------------------
# Subsolution gluing and the exhaustion construction
# ---------------------------------------------------------------------------

def rho_field(grid: GridDomain) -> GridField:
    """rho as a grid field (ring values at the lattice ring nodes)."""
    full = np.full(int(np.prod(grid.shape)), np.nan)
    full[grid.interior_flat] = grid.rho.ravel()[grid.interior_flat]
    if grid.ring_flat.size:
        full[grid.ring_flat] = grid.rho.ravel()[grid.ring_flat]
    return GridField(grid, full.reshape(grid.shape))


def subsolution_glue(psi0: GridField, A: float, delta: float, grid: GridDomain,
                     f_support: np.ndarray | None = None,
                     tol_glue: float | None = None) -> GridField:
    """Glue max(psi0 - A*delta, A*rho) on the subdomain into A*rho outside.

    psi0 lives on a lattice subgrid D of ``grid`` with zero ring data.  The
    support of the density must satisfy psi0 > A*(rho + delta) there; the max
    must already have switched to the A*rho branch on D's ring band.
    """
    sub = psi0.domain
    rho_flat = grid.rho.ravel()
    if f_support is not None and f_support.size:
        pos = sub.pos_of_flat[f_support]
        if (pos < 0).any():
            raise SolveError("density support leaves the glue subdomain")
        lhs = psi0.values.ravel()[f_support]
        rhs = A * (rho_flat[f_support] + delta)
        bad = np.flatnonzero(lhs <= rhs)
        if bad.size:
            raise SolveError(
                f"glue precondition psi0 > A(rho+delta) fails at {bad.size} support nodes, "
                f"first flat index {int(f_support[bad[0]])}")
    out = A * rho_flat.copy()
    inner = psi0.values.ravel()[sub.interior_flat] - A * delta
    out[sub.interior_flat] = np.maximum(inner, A * rho_flat[sub.interior_flat])
    if sub.ring_flat.size:
        tol = tol_glue if tol_glue is not None else 1e-9 * max(1.0, abs(A) * delta)
        ring_inner = psi0.values.ravel()[sub.ring_flat] - A * delta
        gap = ring_inner - A * rho_flat[sub.ring_flat]
        if gap.max() > tol:
            raise SolveError(
                f"glued branches disagree across the subdomain boundary by {gap.max():.3e}")
    full = np.full(int(np.prod(grid.shape)), np.nan)
    covered = np.concatenate([grid.interior_flat, grid.ring_flat])
    full[covered] = out[covered]
    return GridField(grid, full.reshape(grid.shape))


@dataclass
class GlueConstruction:
    psi: GridField
    psi0: GridField
    A: float
    delta: float
    subdomain: GridDomain


def build_subsolution(grid: GridDomain, f: Density, tol: float | None = None,
                      margin: float = 1.05) -> GlueConstruction:
    """Bounded subsolution with mass >= f via a zero-data solve on a
    sublevel subdomain; the reported constant A is computed, never assumed."""
    rho_flat = grid.rho.ravel()
    if f.support.size == 0:
        psi0 = field_from_interior(grid, np.zeros(grid.n_interior))
        return GlueConstruction(subsolution_glue(psi0, 0.0, 1.0, grid), psi0, 0.0, 1.0, grid)
    depth = float(-rho_flat[f.support].max())
    if depth <= 0:
        raise SolveError("density support touches the boundary")
    delta = depth / 2.0
    mask = (grid.rho < -delta / 2.0) & grid.interior_mask
    sub = subgrid_from_mask(grid, mask)
    bound0 = bind_boundary(sub, lambda pts: np.zeros(len(pts)))
    f_sub = Density(field_from_interior(sub, f.field.values.ravel()[sub.interior_flat]),
                    f.p, f.support, f.norm_p)
    u_state = solve_density(sub, bound0, f_sub, tol=tol, _as_state=True)
    psi0 = bound0.ring_value_field(u_state)
    A = margin * float(np.abs(u_state).max()) / delta
    psi = subsolution_glue(psi0, A, delta, grid, f_support=f.support)
    return GlueConstruction(psi, psi0, A, delta, sub)


@dataclass
class ExhaustionRun:
    """Nested-subdomain solve sequence with its monotonicity ledger."""

    grids: list
    fields: list
    ledger: list  # max(u_{j+1} - u_j) on the smaller common grid
    homogeneous: GridField
    glue: GlueConstruction
    sandwich_lower_violation: float  # max(u0 + psi - u_j)
    sandwich_upper_violation: float  # max(u_j - u0)
    reports: list

    @property
    def solution(self) -> GridField:
        return self.fields[-1]

    @property
    def A(self) -> float:
        return self.glue.A


def exhaustion_solve(grid: GridDomain, data: BoundaryData, f: Density,
                     levels: int = 4, delta_start: float | None = None,
                     tol: float | None = None, u0: GridField | None = None) -> ExhaustionRun:
    """Solve on an increasing family of eroded subdomains pinned to the
    homogeneous solution, tracking the decreasing-sequence ledger."""
    if u0 is None:
        u0, _ = solve_homogeneous(grid, data, tol=tol)
    if delta_start is None:
        delta_start = 8 * grid.h
    if f.support.size:
        sup_dist = grid.distance_to_boundary(grid.node_points(f.support)).min()
        if sup_dist <= delta_start:
            raise SolveError(
                f"density support within {sup_dist:.3g} of the boundary; "
                f"innermost erosion {delta_start:.3g} must stay outside it")
    glue = build_subsolution(grid, f, tol=tol)
    radii = [delta_start * 2.0**-j for j in range(levels)]
    if radii[-1] < grid.h:
        raise SolveError("erosion ladder descends below the grid spacing")
    grids, fields, reports = [], [], []
    prev_state = None
    for delta in radii:
        sub = erode(grid, delta)
        bound = bind_to_field(sub, u0)
        f_sub = Density(field_from_interior(sub, f.field.values.ravel()[sub.interior_flat]),
                        f.p, f.support, f.norm_p)
        if prev_state is None:
            init = u0.values.ravel()[sub.interior_flat]
        else:
            init = prev_state.values.ravel()[sub.interior_flat]
        fld, rep = solve_density(sub, bound, f_sub, tol=tol, init=init)
        grids.append(sub)
        fields.append(fld)
        reports.append(rep)
        prev_state = fld
    ledger = []
    for j in range(len(grids) - 1):
        small = grids[j]
        a = fields[j].values.ravel()[small.interior_flat]
        b = fields[j + 1].values.ravel()[small.interior_flat]
        ledger.append(float((b - a).max()))
    u0_flat = u0.values.ravel()
    psi_flat = glue.psi.values.ravel()
    lo_viol = -np.inf
    up_viol = -np.inf
    for sub, fld in zip(grids, fields):
        idx = sub.interior_flat
        vals = fld.values.ravel()[idx]
        lo_viol = max(lo_viol, float((u0_flat[idx] + psi_flat[idx] - vals).max()))
        up_viol = max(up_viol, float((vals - u0_flat[idx]).max()))
    return ExhaustionRun(grids, fields, ledger, u0, glue, lo_viol, up_viol, reports)


@dataclass
class ComparisonVerdict:
    premises_hold: bool
    conclusion_holds: bool
    worst_violation: float
    location: tuple | None

    @property
    def holds(self) -> bool:
        return (not self.premises_hold) or self.conclusion_holds


def comparison_check(u: GridField, v: GridField, tol_cmp: float = 1e-9,
                     tol_premise: float = 1e-9) -> ComparisonVerdict:
    """Discrete comparison: mass(u) >= mass(v) inside and u <= v on the ring
    should force u <= v + tol everywhere."""
    from .calculus import ma_density

    if u.domain is not v.domain:
        raise SolveError("comparison requires fields on one grid")
    du = ma_density(u).interior
    dv = ma_density(v).interior
    premise = bool((du >= dv - tol_premise).all())
    if u.domain.ring_flat.size:
        premise = premise and bool((u.ring <= v.ring + tol_premise).all())
    diff = u.interior - v.interior
    k = int(np.argmax(diff))
    worst = float(diff[k])
    loc = tuple(np.unravel_index(u.domain.interior_flat[k], u.domain.shape))
    return ComparisonVerdict(premise, worst <= tol_cmp, worst, loc)
