"""Complex-line stencils on Cartesian grids in C^n (real dimension 2n).

A grid point lives in R^{2n} with coordinates ordered (x_1, y_1, ..., x_n, y_n)
so that z_k = x_k + i*y_k.  Each stencil entry is a unit complex direction v;
its discrete complex-line Laplacian combines centered second differences along
the two real lattice lines spanned by v and i*v:

    L_v u = D2_{o(v)} u + D2_{o(iv)} u,   D2_o u(x) = [u(x+o) - 2u(x) + u(x-o)] / |o*h|^2

For a smooth u this is consistent with 4 * v^H (complex Hessian) v.  The frame
catalog groups directions into orthonormal complex bases; the wide-stencil
Monge-Ampere determinant is the minimum over frames of the product of the
clamped per-direction values L_v u / 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ComplexDirection:
    """One complex line: lattice offsets for v and i*v, with |offset|^2."""

    name: str
    offset_v: tuple[int, ...]
    offset_iv: tuple[int, ...]
    norm2: int  # squared lattice length of each offset


@dataclass(frozen=True)
class Stencil:
    """Direction set V and orthonormal-frame catalog for dimension n."""

    n: int
    directions: tuple[ComplexDirection, ...]
    frames: tuple[tuple[int, ...], ...]  # indices into `directions`

    @property
    def real_offsets(self) -> list[tuple[int, ...]]:
        """All signed real lattice offsets used by any arm, deduplicated."""
        seen: dict[tuple[int, ...], None] = {}
        for d in self.directions:
            for o in (d.offset_v, d.offset_iv):
                for s in (1, -1):
                    seen[tuple(s * c for c in o)] = None
        return list(seen)

    @property
    def arm_offsets(self) -> list[tuple[tuple[int, ...], int]]:
        """(offset, norm2) for the 4 arms of each direction, in order."""
        arms = []
        for d in self.directions:
            for o in (d.offset_v, d.offset_iv):
                arms.append((o, d.norm2))
                arms.append((tuple(-c for c in o), d.norm2))
        return arms


def ma_constant(n: int) -> float:
    """Normalization c_n = 4^n n! so that the density of |z|^2 equals c_n."""
    return float(4**n * math.factorial(n))


def make_stencil(n: int) -> Stencil:
    """Build the direction set: complex axes plus, for n=2, the four diagonal
    complex lines spanned by (e1 +- e2)/sqrt(2) and (e1 +- i e2)/sqrt(2)."""
    if n == 1:
        dirs = (ComplexDirection("e1", (1, 0), (0, 1), 1),)
        return Stencil(1, dirs, ((0,),))
    if n == 2:
        dirs = (
            ComplexDirection("e1", (1, 0, 0, 0), (0, 1, 0, 0), 1),
            ComplexDirection("e2", (0, 0, 1, 0), (0, 0, 0, 1), 1),
            ComplexDirection("e1+e2", (1, 0, 1, 0), (0, 1, 0, 1), 2),
            ComplexDirection("e1-e2", (1, 0, -1, 0), (0, 1, 0, -1), 2),
            ComplexDirection("e1+ie2", (1, 0, 0, 1), (0, 1, -1, 0), 2),
            ComplexDirection("e1-ie2", (1, 0, 0, -1), (0, 1, 1, 0), 2),
        )
        frames = ((0, 1), (2, 3), (4, 5))
        return Stencil(2, dirs, frames)
    raise ValueError(f"unsupported complex dimension n={n} (only 1 and 2)")


def direction_unit_vectors(stencil: Stencil) -> np.ndarray:
    """Unit real vectors for offset_v of each direction, shape (ndir, 2n)."""
    out = np.array([d.offset_v for d in stencil.directions], dtype=float)
    return out / np.sqrt((out**2).sum(axis=1, keepdims=True))
