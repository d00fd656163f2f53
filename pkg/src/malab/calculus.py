"""Discrete pluripotential calculus on grid fields.

The Monge-Ampere density uses one normalization end-to-end:

    (dd^c u)^n = c_n * det(d^2 u / dz_j dzbar_k) * dV,   c_n = 4^n n!,

so beta = dd^c |z|^2 satisfies beta^n = c_n dV and the n = 1 density of u is
exactly the clamped discrete Laplacian.  The determinant of a PSD complex
Hessian is realized as the minimum over the orthonormal-frame catalog of the
product of clamped complex-line Laplacians L_v u / 4 (Hadamard's variational
form); negative directional values are clamped to zero and reported, never
raised, because intermediate envelope iterates need not be plurisubharmonic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .domain import DomainError, GridDomain, _line_laplacians, erode
from .field import GridField, field_from_interior
from .stencil import ma_constant


@dataclass(frozen=True)
class MANormalization:
    """Fixed operator normalization; n = 1 reduces to the plain Laplacian."""

    n: int

    @property
    def constant(self) -> float:
        return ma_constant(self.n)

    note = "(dd^c u)^n = 4^n n! det(complex Hessian) dV; beta^n = 4^n n! dV"


class CalculusError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Complex Hessian and densities
# ---------------------------------------------------------------------------

def _second_difference(values: np.ndarray, idx: tuple, axis_a: int, axis_b: int, h: float) -> float:
    """Centered mixed second difference along two (possibly equal) real axes."""
    base = np.asarray(idx, dtype=np.int64)
    if axis_a == axis_b:
        up = base.copy(); up[axis_a] += 1
        dn = base.copy(); dn[axis_a] -= 1
        return (values[tuple(up)] - 2.0 * values[tuple(base)] + values[tuple(dn)]) / (h * h)
    out = 0.0
    for sa in (1, -1):
        for sb in (1, -1):
            p = base.copy(); p[axis_a] += sa; p[axis_b] += sb
            out += sa * sb * values[tuple(p)]
    return out / (4.0 * h * h)


def complex_hessian(u: GridField, node) -> np.ndarray:
    """Hermitian matrix of d^2 u / dz_j dzbar_k at one interior node.

    The node and its full (axis and in-plane diagonal) stencil must be
    interior; otherwise the field needs erosion first.
    """
    dom = u.domain
    n = dom.n
    idx = tuple(int(k) for k in node)
    base = np.asarray(idx, dtype=np.int64)
    for off in np.ndindex(*(3,) * (2 * n)):
        shift = np.asarray(off, dtype=np.int64) - 1
        if np.abs(shift).sum() > 2:
            continue
        p = base + shift
        if (p < 0).any() or (p >= np.asarray(dom.shape)).any() or not dom.interior_mask[tuple(p)]:
            raise CalculusError("complex_hessian stencil exits the interior: needs erosion")
    H = np.zeros((n, n), dtype=complex)
    vals = u.values
    for j in range(n):
        xj, yj = 2 * j, 2 * j + 1
        H[j, j] = (_second_difference(vals, idx, xj, xj, dom.h)
                   + _second_difference(vals, idx, yj, yj, dom.h)) / 4.0
        for k in range(j + 1, n):
            xk, yk = 2 * k, 2 * k + 1
            re = (_second_difference(vals, idx, xj, xk, dom.h)
                  + _second_difference(vals, idx, yj, yk, dom.h)) / 4.0
            im = (_second_difference(vals, idx, xj, yk, dom.h)
                  - _second_difference(vals, idx, yj, xk, dom.h)) / 4.0
            H[j, k] = re + 1j * im
            H[k, j] = re - 1j * im
    return 0.5 * (H + H.conj().T)


def line_laplacians(u: GridField) -> list[np.ndarray]:
    """L_v u per stencil direction on full-box arrays (NaN off coverage)."""
    dom = u.domain
    out = []
    for _, lap, ok in _line_laplacians(u.values, dom.stencil, dom.h, dom.interior_mask):
        out.append(np.where(ok & dom.interior_mask, lap, np.nan))
    return out


@dataclass
class DensityReport:
    clamped_nodes: int
    worst_negative: float


def ma_density(u: GridField, with_report: bool = False):
    """Wide-stencil Monge-Ampere density c_n * min over frames of the product
    of clamped directional values; zero (with a flag) at non-psh nodes."""
    dom = u.domain
    laps = line_laplacians(u)
    stacked = np.stack(laps)
    cn = ma_constant(dom.n)
    factors = np.maximum(stacked / 4.0, 0.0)
    best = None
    for frame in dom.stencil.frames:
        prod = np.ones_like(factors[0])
        for d_i in frame:
            prod = prod * factors[d_i]
        best = prod if best is None else np.minimum(best, prod)
    density = cn * best
    density = np.where(dom.interior_mask, density, np.nan)
    out = GridField(dom, _with_ring_zero(dom, density))
    if not with_report:
        return out
    flat_int = dom.interior_flat
    per_dir = stacked.reshape(len(laps), -1)[:, flat_int]
    worst = float(per_dir.min()) if flat_int.size else 0.0
    clamped = int((per_dir.min(axis=0) < 0).sum())
    return out, DensityReport(clamped, min(worst, 0.0))


def _with_ring_zero(dom: GridDomain, interior_field: np.ndarray) -> np.ndarray:
    full = interior_field.copy().ravel()
    if dom.ring_flat.size:
        full[dom.ring_flat] = 0.0
    return full.reshape(dom.shape)


def psh_defect(u: GridField):
    """Worst (most negative) complex-line Laplacian over interior nodes.

    Returns (defect, node multi-index, direction name).
    """
    dom = u.domain
    worst = np.inf
    where = None
    name = None
    for d, lap in zip(dom.stencil.directions, line_laplacians(u)):
        lap = np.where(np.isfinite(lap), lap, np.inf)
        k = int(np.argmin(lap))
        if lap.ravel()[k] < worst:
            worst = float(lap.ravel()[k])
            where = np.unravel_index(k, dom.shape)
            name = d.name
    return worst, where, name


def is_discretely_psh(u: GridField, tol: float) -> bool:
    return psh_defect(u)[0] >= -tol


# ---------------------------------------------------------------------------
# Regularizations
# ---------------------------------------------------------------------------

def _ball_footprint(n: int, delta: float, h: float) -> np.ndarray:
    r = int(math.floor(delta / h + 1e-12))
    axes = [np.arange(-r, r + 1)] * (2 * n)
    mesh = np.meshgrid(*axes, indexing="ij")
    dist2 = sum(m.astype(float) ** 2 for m in mesh)
    return dist2 <= (delta / h) ** 2 + 1e-12


def sup_regularize(u: GridField, delta: float) -> GridField:
    """Translation sup u_delta(z) = max over grid nodes of the closed ball."""
    dom = u.domain
    if delta < dom.h:
        raise CalculusError(f"unresolvable radius {delta} below grid spacing {dom.h}")
    sub = erode(dom, delta)
    foot = _ball_footprint(dom.n, delta, dom.h)
    filled = np.where(np.isfinite(u.values), u.values, -np.inf)
    sup = ndimage.maximum_filter(filled, footprint=foot, mode="constant", cval=-np.inf)
    return _restrict(sub, sup)


def ball_average(u: GridField, delta: float) -> GridField:
    """Arithmetic mean over ball nodes (cell-count normalization of the
    continuum ball-volume constant)."""
    dom = u.domain
    if delta < dom.h:
        raise CalculusError(f"unresolvable radius {delta} below grid spacing {dom.h}")
    sub = erode(dom, delta)
    foot = _ball_footprint(dom.n, delta, dom.h).astype(float)
    finite = np.isfinite(u.values)
    filled = np.where(finite, u.values, 0.0)
    total = ndimage.correlate(filled, foot, mode="constant", cval=0.0)
    count = ndimage.correlate(finite.astype(float), foot, mode="constant", cval=0.0)
    avg = np.where(count > 0, total / np.maximum(count, 1.0), np.nan)
    return _restrict(sub, avg)


def _restrict(sub: GridDomain, full_values: np.ndarray) -> GridField:
    flat = full_values.ravel()
    out = np.full(flat.shape, np.nan)
    covered = np.concatenate([sub.interior_flat, sub.ring_flat])
    out[covered] = flat[covered]
    return GridField(sub, out.reshape(sub.shape))


# ---------------------------------------------------------------------------
# Laplacian masses and the radial mass identity
# ---------------------------------------------------------------------------

def real_laplacian(u: GridField) -> np.ndarray:
    """Full real Laplacian (sum of axis second differences) on the box array."""
    dom = u.domain
    out = np.zeros(dom.shape)
    ok = np.ones(dom.shape, dtype=bool)
    h2 = dom.h * dom.h
    for k in range(2 * dom.n):
        shifted_p = np.full(dom.shape, np.nan)
        shifted_m = np.full(dom.shape, np.nan)
        sl_src = [slice(None)] * (2 * dom.n)
        sl_dst = [slice(None)] * (2 * dom.n)
        sl_src[k] = slice(1, None); sl_dst[k] = slice(None, -1)
        shifted_p[tuple(sl_dst)] = u.values[tuple(sl_src)]
        sl_src[k] = slice(None, -1); sl_dst[k] = slice(1, None)
        shifted_m[tuple(sl_dst)] = u.values[tuple(sl_src)]
        out += (shifted_p - 2.0 * u.values + shifted_m) / h2
        ok &= np.isfinite(shifted_p) & np.isfinite(shifted_m)
    return np.where(ok, out, np.nan)


def laplacian_mass(u: GridField, node_set: np.ndarray) -> float:
    """h^{2n}-weighted sum of the discrete Laplacian over a node set."""
    dom = u.domain
    node_set = np.asarray(node_set, dtype=np.int64)
    lap = real_laplacian(u).ravel()[node_set]
    if not np.isfinite(lap).all():
        raise CalculusError("node set exits the region where the Laplacian is defined")
    return float(dom.h ** (2 * dom.n) * lap.sum())


def _jensen_kernel(rho: np.ndarray, root_delta: float, n: int) -> np.ndarray:
    """Radial weight turning node Laplacian masses into the double integral
    of the mass identity; calibrated so u = |z|^2 is reproduced exactly in
    the continuum limit (unit-ball volume sigma_{2n} = pi^n / n!)."""
    d = 2 * n
    R = root_delta
    delta = R * R
    if d == 2:
        return (1.0 / (math.pi * delta)) * ((delta / 2.0) * np.log(R / rho)
                                            - delta / 4.0 + rho**2 / 4.0)
    if d == 4:
        pref = 2.0 / (math.pi**2 * delta**2)
        return pref * 0.5 * ((R**4 - rho**4) / (4.0 * rho**2) - (R**2 - rho**2) / 2.0)
    raise CalculusError("mass identity implemented for n in {1, 2}")


def jensen_mass_identity(u: GridField, delta: float, z) -> tuple[float, float, float]:
    """Check ball-average growth against the radial integral of Delta u.

    Returns (lhs, rhs, residual) with lhs the ball average at radius
    sqrt(delta) minus the center value and rhs the kernel-weighted discrete
    Laplacian mass; the center cell radius is floored at h/2.
    """
    dom = u.domain
    R = math.sqrt(delta)
    z = np.asarray(z, dtype=float)
    flat_z = dom.flat_of_points(z[None, :])[0]
    if dom.pos_of_flat[flat_z] < 0:
        raise CalculusError("center is not an interior node")
    zg = dom.node_points(np.array([flat_z]))[0]
    if dom.distance_to_boundary(zg[None, :])[0] <= R + 2 * dom.h:
        raise CalculusError("center too close to the boundary for this radius")
    pts = dom.interior_points
    rho = np.linalg.norm(pts - zg, axis=1)
    inside = rho <= R + 1e-12
    ball_flat = dom.interior_flat[inside]
    lap = real_laplacian(u).ravel()[ball_flat]
    if not np.isfinite(lap).all():
        raise CalculusError("ball stencil exits the covered region")
    uv = u.values.ravel()
    lhs = float(uv[ball_flat].mean() - uv[flat_z])
    rho_eff = np.maximum(rho[inside], dom.h / 2.0)
    kern = _jensen_kernel(rho_eff, R, dom.n)
    rhs = float((lap * dom.h ** (2 * dom.n) * kern).sum())
    return lhs, rhs, abs(lhs - rhs)
