"""Boundary data, barrier family, and the envelope sandwich bounds.

For boundary data phi with Holder exponent alpha in (0, 2] and combined
constant M = sup |phi| + [phi]_alpha, each boundary point xi carries the
barrier

    b_xi(z) = -4 M (-rho(z) + |z - xi|^2)^(alpha/2),

which vanishes at xi, is nonpositive on the closure, and is discretely
plurisubharmonic whenever rho - |z|^2 is (convex decreasing composition with
an exactly superharmonic-along-lines radicand).  The pointwise envelope

    L(z) = max_xi [phi(xi) + b_xi(z)],   U(z) = min_xi [phi(xi) - b_xi(z)]

sandwiches the homogeneous solution; L <= U holds pair-exactly because the
chain of inequalities behind it only uses the sampled Holder bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import GridDomain
from .field import GridField
from .calculus import psh_defect
from .field import field_from_callable

ENVELOPE_XI_CAP_LARGE = 1500  # boundary subsample for grids above 1e6 nodes
LARGE_GRID_NODES = 1_000_000


class BarrierError(ValueError):
    pass


@dataclass
class BoundaryData:
    """Boundary function with certified Holder constants on a sample set."""

    name: str
    phi: object  # callable(points (N, 2n)) -> (N,)
    alpha: float
    samples: np.ndarray  # (P, 2n) boundary points
    sup_abs: float
    seminorm: float  # estimated alpha-Holder seminorm N
    delta0: float  # pairing scale (sample-set diameter)
    maximizing_pair: tuple

    @property
    def M(self) -> float:
        return self.sup_abs + self.seminorm

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0):
            raise BarrierError(f"Holder exponent alpha={self.alpha} outside (0, 2]")


def boundary_constant(phi, samples: np.ndarray, alpha: float,
                      exact_pair_limit: int = 6000, subsample_pairs: int = 2_000_000,
                      seed: int = 7):
    """Combined constant sup|phi| + sup-pair Holder ratio over the samples.

    The pair sweep is exact up to ``exact_pair_limit`` points and switches to
    a seeded random pair subsample (plus consecutive-sample pairs) above it.
    Returns (M, seminorm, maximizing pair indices).
    """
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 1:
        raise BarrierError("empty boundary sample set")
    vals = np.asarray(phi(samples), dtype=float)
    sup_abs = float(np.abs(vals).max())
    if len(samples) == 1:
        return sup_abs, 0.0, (0, 0)
    best = 0.0
    pair = (0, 1)
    if len(samples) <= exact_pair_limit:
        for i0 in range(0, len(samples), 512):
            i1 = min(i0 + 512, len(samples))
            d = np.linalg.norm(samples[i0:i1, None, :] - samples[None, :, :], axis=-1)
            r = np.abs(vals[i0:i1, None] - vals[None, :])
            d = np.where(d > 0, d, np.inf)
            ratio = r / d**alpha
            k = int(np.argmax(ratio))
            if ratio.ravel()[k] > best:
                best = float(ratio.ravel()[k])
                pair = (i0 + k // len(samples), k % len(samples))
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, len(samples), size=subsample_pairs)
        j = rng.integers(0, len(samples), size=subsample_pairs)
        order = np.argsort(np.linalg.norm(samples - samples.mean(axis=0), axis=1))
        i = np.concatenate([i, order[:-1]])
        j = np.concatenate([j, order[1:]])
        d = np.linalg.norm(samples[i] - samples[j], axis=1)
        d = np.where(d > 0, d, np.inf)
        ratio = np.abs(vals[i] - vals[j]) / d**alpha
        k = int(np.argmax(ratio))
        best = float(ratio[k])
        pair = (int(i[k]), int(j[k]))
    return sup_abs + best, best, pair


def boundary_data_from_callable(name: str, phi, alpha: float, grid: GridDomain,
                                declared_seminorm: float | None = None) -> BoundaryData:
    """Certify boundary data against a grid's projected boundary points.

    A declared analytic seminorm, when given, is combined with the sampled
    estimate (the max of the two is kept) so that the sampled pair bound can
    never undercut a known constant.
    """
    samples = grid.ring_xi
    if samples.shape[0] == 0:
        raise BarrierError("grid has no boundary points to sample")
    _, semi, pair = boundary_constant(phi, samples, alpha)
    if declared_seminorm is not None:
        semi = max(semi, float(declared_seminorm))
    vals = np.asarray(phi(samples), dtype=float)
    sup_abs = float(np.abs(vals).max())
    diam = float(np.linalg.norm(samples.max(axis=0) - samples.min(axis=0)))
    return BoundaryData(name, phi, alpha, samples, sup_abs, semi, diam, pair)


@dataclass
class BarrierFamily:
    """Evaluator of the boundary-indexed barriers on one grid."""

    grid: GridDomain
    M: float
    alpha: float

    def radicand(self, xi: np.ndarray, points: np.ndarray) -> np.ndarray:
        rho = self.grid.fn(points)
        return -rho + ((points - xi) ** 2).sum(axis=-1)

    def value(self, xi, points: np.ndarray) -> np.ndarray:
        """b_xi at the given points; errors if rho positivity is violated."""
        xi = np.asarray(xi, dtype=float)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        s = self.radicand(xi, points)
        if (s < -self.grid.tol_bd).any():
            raise BarrierError("rho positivity violation: negative barrier radicand")
        return -4.0 * self.M * np.maximum(s, 0.0) ** (self.alpha / 2.0)


def barrier_family(grid: GridDomain, data: BoundaryData) -> BarrierFamily:
    return BarrierFamily(grid, data.M, data.alpha)


def barrier_psh_check(family: BarrierFamily, xi) -> tuple[float, tuple, str]:
    """Discrete psh defect of z -> b_xi(z); passes when >= -tol."""
    xi = np.asarray(xi, dtype=float)
    fld = field_from_callable(family.grid, lambda pts: family.value(xi, pts))
    return psh_defect(fld)


def _xi_samples(grid: GridDomain, data: BoundaryData, cap: int | None = None) -> np.ndarray:
    xi = data.samples
    if cap is None:
        cap = len(xi) if int(np.prod(grid.shape)) <= LARGE_GRID_NODES else ENVELOPE_XI_CAP_LARGE
    if len(xi) > cap:
        stride = int(np.ceil(len(xi) / cap))
        xi = xi[::stride]
    return xi


def envelope_bounds(data: BoundaryData, family: BarrierFamily, grid: GridDomain,
                    xi_cap: int | None = None) -> tuple[GridField, GridField]:
    """Lower/upper envelopes L, U over the sampled boundary points.

    L > U anywhere signals a broken combined constant and raises.
    """
    if grid.flavor != "levelset":
        raise BarrierError("envelope bounds need a level-set grid (rho = 0 ring projections)")
    xi = _xi_samples(grid, data, xi_cap)
    phi_xi = np.asarray(data.phi(xi), dtype=float)
    covered = np.concatenate([grid.interior_flat, grid.ring_flat])
    # ring nodes are evaluated at their projected boundary position (rho = 0
    # there), which keeps the pairwise cross-barrier chain valid on all rows
    pts = np.concatenate([grid.node_points(grid.interior_flat), grid.ring_xi]) \
        if grid.ring_flat.size else grid.node_points(grid.interior_flat)
    rho = np.concatenate([grid.rho.ravel()[grid.interior_flat],
                          np.zeros(grid.ring_flat.size)])
    low = np.full(len(pts), -np.inf)
    up = np.full(len(pts), np.inf)
    block = 256
    chunk = max(1, min(len(pts), 8_000_000 // max(block, 1)))
    for c0 in range(0, len(pts), chunk):
        c1 = min(c0 + chunk, len(pts))
        p = pts[c0:c1]
        r = rho[c0:c1]
        lo = low[c0:c1]
        hi = up[c0:c1]
        for b0 in range(0, len(xi), block):
            b1 = min(b0 + block, len(xi))
            d2 = ((p[:, None, :] - xi[None, b0:b1, :]) ** 2).sum(axis=-1)
            s = np.maximum(-r[:, None] + d2, 0.0)
            b = -4.0 * data.M * s ** (data.alpha / 2.0)
            lo = np.maximum(lo, (phi_xi[None, b0:b1] + b).max(axis=1))
            hi = np.minimum(hi, (phi_xi[None, b0:b1] - b).min(axis=1))
        low[c0:c1] = lo
        up[c0:c1] = hi
    if (low > up + 1e-12 * max(1.0, data.M)).any():
        k = int(np.argmax(low - up))
        raise BarrierError(
            f"barrier inconsistency: L > U at node {covered[k]} "
            f"(L={low[k]:.6g}, U={up[k]:.6g}); combined constant M is broken")
    size = int(np.prod(grid.shape))
    Lf = np.full(size, np.nan); Lf[covered] = low
    Uf = np.full(size, np.nan); Uf[covered] = up
    return (GridField(grid, Lf.reshape(grid.shape)),
            GridField(grid, Uf.reshape(grid.shape)))
