"""Bounded computational domains: defining functions, grids, certification.

A domain is the sublevel set {rho < 0} of a defining function rho on a box in
R^{2n}.  Discretization produces interior lattice nodes, a ring of exterior
"boundary nodes" (each carrying a projected point xi on {rho = 0}) and, for
every stencil arm that leaves the interior, the exact crossing point and the
fractional arm length used by the unequal-arm second differences.  Grids come
in two flavors:

* ``levelset``: boundary arms are shortened to the bisection crossing on
  {rho = 0}; pinned values are boundary data evaluated at the crossing.
* ``lattice``: the grid is a node subset (erosions, glue subdomains); arms end
  on ring lattice nodes and pinned values are field values at those nodes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .stencil import Stencil, make_stencil

THETA_MIN = 1e-4  # safety net for fractional arms (grazing margin does the real work)
GRAZE_FRACTION = 1e-3  # interior requires rho < -GRAZE_FRACTION * Lip(rho) * h
BISECT_ITERS = 40


class DomainError(ValueError):
    """Raised for degenerate or inconsistent domain constructions."""


# ---------------------------------------------------------------------------
# Defining functions
# ---------------------------------------------------------------------------

def _abs2(points: np.ndarray) -> np.ndarray:
    return (points**2).sum(axis=-1)


@dataclass(frozen=True)
class Piece:
    """One closed-form piece of a defining function."""

    kind: str  # quadratic | affine | radial
    coefficients: dict

    def __call__(self, points: np.ndarray) -> np.ndarray:
        if self.kind == "quadratic":
            c = np.asarray(self.coefficients["center"], dtype=float)
            r = float(self.coefficients["radius"])
            return _abs2(points - c) - r * r
        if self.kind == "affine":
            a = np.asarray(self.coefficients["a"], dtype=float)
            b = float(self.coefficients.get("b", 0.0))
            return points @ a + b
        if self.kind == "radial":
            coeffs = [float(c) for c in self.coefficients["coeffs"]]
            t = _abs2(points)
            out = np.zeros_like(t)
            for c in reversed(coeffs):
                out = out * t + c
            return out
        raise DomainError(f"unknown piece kind {self.kind!r}")


@dataclass(frozen=True)
class DefiningFunction:
    """Closed-form rho with claimed regularity class exponent 2/m."""

    name: str
    n: int
    m: float
    pieces: tuple[Piece, ...] = ()
    combine: str = "single"  # single | max
    custom: object = None  # optional callable(points) -> rho, for tests

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.custom is not None:
            return self.custom(points)
        if not self.pieces:
            raise DomainError(f"defining function {self.name!r} has no pieces")
        vals = self.pieces[0](points)
        if self.combine == "single":
            return vals
        for p in self.pieces[1:]:
            vals = np.maximum(vals, p(points))
        return vals


def ball_defining_function(n: int, radius: float = 1.0, center=None, name: str = "ball", m: float = 1.0) -> DefiningFunction:
    c = [0.0] * (2 * n) if center is None else list(center)
    piece = Piece("quadratic", {"center": c, "radius": radius})
    return DefiningFunction(name, n, m, (piece,), "single")


# ---------------------------------------------------------------------------
# Grid domain
# ---------------------------------------------------------------------------

@dataclass
class ArmTables:
    """Static per-direction difference tables over the interior ordering.

    For each complex direction d the four arms are ordered
    (+v, -v, +iv, -iv).  Deep-interior nodes use the uniform weight
    1/(h|o|)^2 per arm; nodes with at least one shortened/pinned arm carry a
    row in the fix tier with explicit weights and crossing points.
    """

    uniform_w: np.ndarray  # (ndir,) uniform per-arm weight
    uniform_C: np.ndarray  # (ndir,) uniform total weight
    nbr: list  # ndir arrays (4, n_int) int32, interior position or 0 for fix rows
    is_fix: list  # ndir bool arrays (n_int,)
    fix_pos: list  # ndir arrays (K_d,) int32
    fix_w: list  # ndir arrays (4, K_d) float64 (weight of each arm)
    fix_int: list  # ndir arrays (4, K_d) int32, interior position or -1 if pinned
    fix_xi: list  # ndir arrays (4, K_d, 2n) float64 crossing points (pinned arms)
    fix_C: list  # ndir arrays (K_d,) float64


@dataclass
class GridDomain:
    """Cartesian discretization of {rho < 0} with boundary projections."""

    fn: DefiningFunction
    box: np.ndarray  # (2n, 2)
    h: float
    axes: list
    shape: tuple
    stencil: Stencil
    interior_mask: np.ndarray
    rho: np.ndarray
    interior_flat: np.ndarray  # (n_int,) int64 flat indices
    pos_of_flat: np.ndarray  # (size,) int32, interior position or -1
    color_pos: tuple  # (red positions, black positions)
    arms: ArmTables
    ring_flat: np.ndarray  # (n_ring,) int64
    ring_xi: np.ndarray  # (n_ring, 2n) projected boundary points
    ring_dist: np.ndarray  # (n_ring,)
    crossing_points: np.ndarray  # (n_cross, 2n) all edge crossings
    flavor: str  # levelset | lattice
    tol_bd: float
    build_seconds: float = 0.0
    _kdtree: object = field(default=None, repr=False)

    # -- geometry helpers ---------------------------------------------------

    @property
    def n(self) -> int:
        return self.fn.n

    @property
    def n_interior(self) -> int:
        return int(self.interior_flat.size)

    def node_points(self, flat: np.ndarray) -> np.ndarray:
        """Coordinates of nodes given flat indices, shape (len, 2n)."""
        idx = np.unravel_index(np.asarray(flat, dtype=np.int64), self.shape)
        return np.stack([self.axes[k][idx[k]] for k in range(len(self.shape))], axis=-1)

    @property
    def interior_points(self) -> np.ndarray:
        return self.node_points(self.interior_flat)

    @property
    def boundary_nodes(self):
        """(flat index, projected point xi, projection distance) triples."""
        return list(zip(self.ring_flat.tolist(), self.ring_xi, self.ring_dist.tolist()))

    def boundary_tree(self) -> cKDTree:
        if self._kdtree is None:
            self._kdtree = cKDTree(self.crossing_points)
        return self._kdtree

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        d, _ = self.boundary_tree().query(np.asarray(points, dtype=float))
        return d

    def flat_of_points(self, points: np.ndarray) -> np.ndarray:
        """Flat indices of lattice points given their coordinates."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = []
        for k in range(len(self.shape)):
            j = np.rint((points[:, k] - self.axes[k][0]) / self.h).astype(np.int64)
            if (j < 0).any() or (j >= self.shape[k]).any():
                raise DomainError("point outside grid box")
            idx.append(j)
        return np.ravel_multi_index(tuple(idx), self.shape)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _axes_for_box(box: np.ndarray, h: float):
    axes = []
    shape = []
    for lo, hi in box:
        count = int(round((hi - lo) / h))
        if abs(lo + count * h - hi) > 1e-9 * max(1.0, abs(hi - lo)):
            raise DomainError(f"grid spacing {h} does not divide box extent [{lo}, {hi}]")
        axes.append(lo + h * np.arange(count + 1))
        shape.append(count + 1)
    return axes, tuple(shape)


def _bisect_crossings(fn, starts: np.ndarray, steps: np.ndarray, tol_bd: float):
    """Vectorized sign-change bisection along segments [starts, starts+steps].

    Requires fn(starts) < 0 <= fn(starts + steps).  Returns (points, fraction).
    """
    lo = np.zeros(len(starts))
    hi = np.ones(len(starts))
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        vals = fn(starts + mid[:, None] * steps)
        neg = vals < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    theta = 0.5 * (lo + hi)
    points = starts + theta[:, None] * steps
    resid = np.abs(fn(points))
    if resid.size and resid.max() > tol_bd:
        k = int(np.argmax(resid))
        raise DomainError(
            f"boundary bisection did not reach |rho| <= {tol_bd:g} on edge starting at "
            f"{starts[k].tolist()} (|rho| = {resid.max():g})"
        )
    return points, theta


def _grid_from_mask(fn: DefiningFunction, box, h, axes, shape, mask, rho, flavor: str,
                    tol_bd: float) -> GridDomain:
    """Assemble interior ordering, ring data and arm tables from a mask."""
    t0 = time.perf_counter()
    stencil = make_stencil(fn.n)
    dim = 2 * fn.n
    size = int(np.prod(shape))

    interior_flat = np.flatnonzero(mask.ravel()).astype(np.int64)
    if interior_flat.size == 0:
        raise DomainError("degenerate domain: empty interior")
    pos_of_flat = np.full(size, -1, dtype=np.int32)
    pos_of_flat[interior_flat] = np.arange(interior_flat.size, dtype=np.int32)

    idx_coords = np.unravel_index(interior_flat, shape)
    parity = np.zeros(interior_flat.size, dtype=np.int64)
    for c in idx_coords:
        parity += c
    parity &= 1
    color_pos = (np.flatnonzero(parity == 0).astype(np.int32),
                 np.flatnonzero(parity == 1).astype(np.int32))

    strides = np.array([int(np.prod(shape[k + 1:])) for k in range(dim)], dtype=np.int64)
    int_points = None
    if flavor == "levelset":
        idx = np.unravel_index(interior_flat, shape)
        int_points = np.stack([axes[k][idx[k]] for k in range(dim)], axis=-1)

    ndir = len(stencil.directions)
    nbr, is_fix, fix_pos, fix_w, fix_int, fix_xi, fix_C = [], [], [], [], [], [], []
    uniform_w = np.empty(ndir)
    uniform_C = np.empty(ndir)
    ring_hits: dict[int, tuple[np.ndarray, float]] = {}
    crossings = []

    mask_flat = mask.ravel()
    for d_i, d in enumerate(stencil.directions):
        ell2 = (h * h) * d.norm2
        uniform_w[d_i] = 1.0 / ell2
        uniform_C[d_i] = 4.0 / ell2
        arm_offsets = [d.offset_v, tuple(-c for c in d.offset_v),
                       d.offset_iv, tuple(-c for c in d.offset_iv)]
        arm_nbr = np.zeros((4, interior_flat.size), dtype=np.int32)
        arm_theta = np.ones((4, interior_flat.size))
        arm_xi = [None] * 4
        pinned_any = np.zeros(interior_flat.size, dtype=bool)
        pinned = []
        for a_i, off in enumerate(arm_offsets):
            off_flat = int(np.dot(off, strides))
            nbr_flat = interior_flat + off_flat
            if (nbr_flat < 0).any() or (nbr_flat >= size).any():
                raise DomainError("interior node has stencil neighbor outside the box")
            inside = mask_flat[nbr_flat]
            arm_nbr[a_i] = np.where(inside, pos_of_flat[nbr_flat], -1)
            pin = ~inside
            pinned.append(pin)
            pinned_any |= pin
            if not pin.any():
                arm_xi[a_i] = np.zeros((0, dim))
                continue
            rows = np.flatnonzero(pin)
            if flavor == "levelset":
                starts = int_points[rows]
                # the first exterior node can still have rho < 0 (grazing
                # margin); extend the bracket along the arm until rho >= 0
                off_arr = np.asarray(off, dtype=np.int64)
                idx_rows = np.stack(np.unravel_index(nbr_flat[rows], shape), axis=-1)
                t_hi = np.ones(rows.size)
                rho_flat_all = rho.ravel()
                for _ in range(2):
                    cur = np.ravel_multi_index(tuple(idx_rows.T), shape)
                    neg = rho_flat_all[cur] < 0
                    if not neg.any():
                        break
                    nxt = idx_rows[neg] + off_arr
                    if (nxt < 0).any() or (nxt >= np.asarray(shape)).any():
                        raise DomainError("grazing boundary bracket leaves the box")
                    idx_rows[neg] = nxt
                    t_hi[neg] += 1.0
                steps = t_hi[:, None] * (h * off_arr.astype(float))[None, :]
                pts, frac = _bisect_crossings(fn, starts, steps, tol_bd)
                theta = np.maximum(frac * t_hi, THETA_MIN)
            else:
                idxn = np.unravel_index(nbr_flat[rows], shape)
                pts = np.stack([axes[k][idxn[k]] for k in range(dim)], axis=-1)
                theta = np.ones(rows.size)
            arm_theta[a_i, rows] = theta
            arm_xi[a_i] = pts
            crossings.append(pts)
            # register ring nodes (exterior lattice endpoints), keep nearest xi
            ends = nbr_flat[rows]
            dists = np.linalg.norm(
                pts - np.stack([axes[k][c] for k, c in enumerate(np.unravel_index(ends, shape))], axis=-1),
                axis=1)
            for e, p, dist in zip(ends.tolist(), pts, dists.tolist()):
                cur = ring_hits.get(e)
                if cur is None or dist < cur[1]:
                    ring_hits[e] = (p, dist)

        # unequal-arm weights per real line: c+ = 2/(l^2 th+ (th+ + th-)), etc.
        K_rows = np.flatnonzero(pinned_any)
        w_rows = np.empty((4, K_rows.size))
        for line in (0, 2):
            tp = arm_theta[line, K_rows]
            tm = arm_theta[line + 1, K_rows]
            w_rows[line] = 2.0 / (ell2 * tp * (tp + tm))
            w_rows[line + 1] = 2.0 / (ell2 * tm * (tp + tm))
        fix_int_d = arm_nbr[:, K_rows].copy()
        fix_xi_d = np.zeros((4, K_rows.size, dim))
        for a_i in range(4):
            pin_rows = pinned[a_i]
            if arm_xi[a_i] is not None and arm_xi[a_i].shape[0]:
                sel = pin_rows[K_rows]
                fix_xi_d[a_i][sel] = arm_xi[a_i]
        nbr.append(np.where(arm_nbr >= 0, arm_nbr, 0).astype(np.int32))
        is_fix_d = np.zeros(interior_flat.size, dtype=bool)
        is_fix_d[K_rows] = True
        is_fix.append(is_fix_d)
        fix_pos.append(K_rows.astype(np.int32))
        fix_w.append(w_rows)
        fix_int.append(fix_int_d)
        fix_xi.append(fix_xi_d)
        fix_C.append(w_rows.sum(axis=0))

    arms = ArmTables(uniform_w, uniform_C, nbr, is_fix, fix_pos, fix_w, fix_int, fix_xi, fix_C)

    ring_flat = np.array(sorted(ring_hits), dtype=np.int64)
    ring_xi = np.array([ring_hits[k][0] for k in ring_flat.tolist()]) if ring_flat.size else np.zeros((0, dim))
    ring_dist = np.array([ring_hits[k][1] for k in ring_flat.tolist()])
    crossing_points = np.concatenate(crossings, axis=0) if crossings else np.zeros((0, dim))

    grid = GridDomain(fn, np.asarray(box, dtype=float), h, axes, shape, stencil, mask, rho,
                      interior_flat, pos_of_flat, color_pos, arms, ring_flat, ring_xi,
                      ring_dist, crossing_points, flavor, tol_bd)
    grid.build_seconds = time.perf_counter() - t0
    return grid


def discretize(fn: DefiningFunction, h: float, box) -> GridDomain:
    """Discretize {rho < 0} onto a uniform grid over the box.

    The box must strictly contain the closed sublevel set {rho <= 0}; boundary
    crossings are located by bisection along every stencil edge that leaves
    the interior.
    """
    box = np.asarray(box, dtype=float)
    if box.shape != (2 * fn.n, 2):
        raise DomainError(f"box must have shape ({2 * fn.n}, 2)")
    if h <= 0:
        raise DomainError("grid spacing must be positive")
    axes, shape = _axes_for_box(box, h)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack(mesh, axis=-1)
    rho = fn(points)
    # nodes grazing the zero level set make shortened arms ill-conditioned;
    # they are classified as boundary, which thins the interior by O(1e-3 h)
    lip = 0.0
    for k in range(rho.ndim):
        lip = max(lip, float(np.abs(np.diff(rho, axis=k)).max()) / h)
    graze = GRAZE_FRACTION * max(lip, 1e-300) * h
    mask = rho < -graze
    if not mask.any():
        raise DomainError("degenerate domain: rho is nonnegative on the whole box")
    for k in range(len(shape)):
        face = [slice(None)] * len(shape)
        for side in (0, -1):
            face[k] = side
            if mask[tuple(face)].any():
                raise DomainError("box does not strictly contain {rho <= 0}")
    tol_bd = 1e-8 * float(np.linalg.norm(box[:, 1] - box[:, 0]))
    return _grid_from_mask(fn, box, h, axes, shape, mask, rho, "levelset", tol_bd)


def erode(grid: GridDomain, delta: float) -> GridDomain:
    """Subgrid of interior nodes at distance > delta from the boundary."""
    if delta < grid.h:
        raise DomainError(f"erosion radius {delta} is below the grid spacing {grid.h}")
    dist = grid.distance_to_boundary(grid.interior_points)
    keep = dist > delta
    if not keep.any():
        raise DomainError(f"empty erosion: radius {delta} removes every interior node")
    mask = np.zeros(grid.shape, dtype=bool)
    mask.ravel()[grid.interior_flat[keep]] = True
    return _grid_from_mask(grid.fn, grid.box, grid.h, grid.axes, grid.shape, mask,
                           grid.rho, "lattice", grid.tol_bd)


def subgrid_from_mask(grid: GridDomain, mask: np.ndarray) -> GridDomain:
    """Lattice-flavor subgrid from an interior-node mask (glue subdomains)."""
    mask = mask & grid.interior_mask
    if not mask.any():
        raise DomainError("empty subgrid mask")
    return _grid_from_mask(grid.fn, grid.box, grid.h, grid.axes, grid.shape, mask,
                           grid.rho, "lattice", grid.tol_bd)


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------

@dataclass
class CertificationReport:
    """Outcome of the plurisubharmonic-type check for (rho, m)."""

    is_negative: bool
    is_exhaustive: bool
    psh_defect: float
    defect_location: tuple | None
    holder_norm_2m: float
    holder_norm_stable: bool
    verdict: str  # certified | rejected
    reasons: list

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"


def psh_tolerance(h: float) -> float:
    """First-order slack for crease points of max-type defining functions."""
    return 10.0 * h


def _line_laplacians(values: np.ndarray, stencil: Stencil, h: float, valid: np.ndarray):
    """L_v on full-box arrays by shifted slicing; yields (direction, field, mask)."""
    dim = values.ndim
    for d in stencil.directions:
        ell2 = h * h * d.norm2
        total = np.zeros_like(values)
        ok = valid.copy()
        for off in (d.offset_v, d.offset_iv):
            shifted_p = np.full_like(values, np.nan)
            shifted_m = np.full_like(values, np.nan)
            src_p = tuple(slice(max(0, o), values.shape[k] + min(0, o)) for k, o in enumerate(off))
            dst_p = tuple(slice(max(0, -o), values.shape[k] + min(0, -o)) for k, o in enumerate(off))
            shifted_p[dst_p] = values[src_p]
            src_m = tuple(slice(max(0, -o), values.shape[k] + min(0, -o)) for k, o in enumerate(off))
            dst_m = tuple(slice(max(0, o), values.shape[k] + min(0, o)) for k, o in enumerate(off))
            shifted_m[dst_m] = values[src_m]
            total += (shifted_p - 2.0 * values + shifted_m) / ell2
            ok &= np.isfinite(shifted_p) & np.isfinite(shifted_m)
        yield d, total, ok


def certify_psh_type(fn: DefiningFunction, grid: GridDomain, rng_seed: int = 20260810,
                     pair_budget: int = 200_000) -> CertificationReport:
    """Check Definition-style type-m structure of rho on the grid.

    Tests (a) negativity/exhaustion of the sublevel sets, (b) discrete
    plurisubharmonicity of s = rho - |z|^2 along every stencil complex line,
    (c) a sampled 2/m-Holder seminorm of rho with a refinement-stability flag.
    """
    reasons: list[str] = []
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    points = np.stack(mesh, axis=-1)
    rho = grid.rho

    is_negative = bool((rho.ravel()[grid.interior_flat] < 0).all())
    if not is_negative:
        reasons.append("rho is not negative on the interior")
    if grid.ring_xi.size:
        ring_res = np.abs(fn(grid.ring_xi))
        if ring_res.max() > grid.tol_bd:
            is_negative = False
            reasons.append("projected boundary points leave the zero level set")

    # exhaustion: {rho < -eps} must sit inside the one-cell erosion of the mask.
    # The ladder starts at the smallest grid-resolvable scale 2*Lip(rho)*h.
    eroded = ndimage.binary_erosion(grid.interior_mask)
    osc = float(-rho.ravel()[grid.interior_flat].min())
    lip = 0.0
    for k in range(rho.ndim):
        lip = max(lip, float(np.abs(np.diff(rho, axis=k)).max()) / grid.h)
    eps_floor = 2.0 * lip * grid.h
    ladder = [osc * f for f in (0.5, 0.25, 0.125, 0.0625) if osc * f >= eps_floor]
    if not ladder and eps_floor < osc:
        ladder = [eps_floor]
    is_exhaustive = bool(ladder)
    if not ladder:
        reasons.append("no grid-resolvable sublevel scale: osc(rho) below 2*Lip(rho)*h")
    for eps in ladder:
        sub = rho < -eps
        if (sub & ~eroded).any():
            is_exhaustive = False
            reasons.append(f"sublevel set at eps = {eps:g} escapes the eroded interior")
            break

    s = rho - _abs2(points)
    defect = np.inf
    defect_loc = None
    interior = grid.interior_mask
    for d, lap, ok in _line_laplacians(s, grid.stencil, grid.h, interior):
        lap = np.where(ok & interior, lap, np.inf)
        k = int(np.argmin(lap))
        if lap.ravel()[k] < defect:
            defect = float(lap.ravel()[k])
            defect_loc = (np.unravel_index(k, grid.shape), d.name)
    tol = psh_tolerance(grid.h)
    if defect < -tol:
        reasons.append(f"s = rho - |z|^2 fails the complex-line test: defect {defect:g} < -{tol:g}")

    # sampled 2/m seminorm of rho on closure nodes
    closure_flat = np.concatenate([grid.interior_flat, grid.ring_flat])
    pts = grid.node_points(closure_flat)
    vals = np.concatenate([rho.ravel()[grid.interior_flat], fn(grid.ring_xi) if grid.ring_xi.size else np.zeros(0)])
    rng = np.random.default_rng(rng_seed)
    exponent = 2.0 / fn.m

    def seminorm(count: int) -> float:
        i = rng.integers(0, len(pts), size=count)
        j = rng.integers(0, len(pts), size=count)
        keep = i != j
        i, j = i[keep], j[keep]
        dist = np.linalg.norm(pts[i] - pts[j], axis=1)
        return float(np.max(np.abs(vals[i] - vals[j]) / dist**exponent, initial=0.0))

    half = seminorm(pair_budget // 2)
    full = max(half, seminorm(pair_budget // 2))
    stable = full <= 1.10 * max(half, 1e-300)
    if not np.isfinite(full):
        reasons.append("2/m seminorm estimate is not finite")

    verdict = "certified" if not reasons else "rejected"
    return CertificationReport(is_negative, is_exhaustive, defect, defect_loc,
                               full, stable, verdict, reasons)
