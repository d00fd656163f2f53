"""Scalar grid fields and their snapshot format.

A field stores one real value per box node; only interior and ring nodes are
meaningful (everything else is NaN).  Snapshots are plain text with a small
header and one ``flat_index value`` record per meaningful node, where values
are shortest round-trip decimals, so write/read is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import GridDomain


class FieldError(ValueError):
    pass


@dataclass
class GridField:
    """Real values on the nodes of a GridDomain."""

    domain: GridDomain
    values: np.ndarray  # full box array, NaN off interior+ring

    def __post_init__(self):
        if self.values.shape != self.domain.shape:
            raise FieldError("field shape does not match its domain")
        covered = np.concatenate([self.domain.interior_flat, self.domain.ring_flat])
        if not np.isfinite(self.values.ravel()[covered]).all():
            raise FieldError("field has non-finite values on interior or boundary nodes")

    @property
    def interior(self) -> np.ndarray:
        """Values on interior nodes, in interior ordering."""
        return self.values.ravel()[self.domain.interior_flat]

    @property
    def ring(self) -> np.ndarray:
        return self.values.ravel()[self.domain.ring_flat]

    def copy(self) -> "GridField":
        return GridField(self.domain, self.values.copy())

    def oscillation(self) -> float:
        v = self.interior
        return float(v.max() - v.min()) if v.size else 0.0


def field_from_interior(domain: GridDomain, interior_values: np.ndarray,
                        ring_values: np.ndarray | None = None) -> GridField:
    """Assemble a field from interior-ordered values (ring defaults to 0)."""
    full = np.full(int(np.prod(domain.shape)), np.nan)
    full[domain.interior_flat] = interior_values
    if domain.ring_flat.size:
        full[domain.ring_flat] = 0.0 if ring_values is None else ring_values
    return GridField(domain, full.reshape(domain.shape))


def field_from_callable(domain: GridDomain, func) -> GridField:
    """Evaluate a closed-form function of the point coordinates on the grid."""
    full = np.full(int(np.prod(domain.shape)), np.nan)
    full[domain.interior_flat] = func(domain.node_points(domain.interior_flat))
    if domain.ring_flat.size:
        full[domain.ring_flat] = func(domain.node_points(domain.ring_flat))
    return GridField(domain, full.reshape(domain.shape))


def values_at_nodes(field: GridField, flat: np.ndarray) -> np.ndarray:
    return field.values.ravel()[np.asarray(flat, dtype=np.int64)]


def write_snapshot(field: GridField, path, domain_name: str = "") -> None:
    dom = field.domain
    covered = np.concatenate([dom.interior_flat, dom.ring_flat])
    covered.sort()
    vals = field.values.ravel()[covered]
    box_flat = " ".join(repr(float(x)) for x in dom.box.ravel())
    with open(path, "w", encoding="ascii") as f:
        f.write("# malab-field v1\n")
        f.write(f"# domain: {domain_name or dom.fn.name}\n")
        f.write(f"# n: {dom.n}\n")
        f.write(f"# h: {dom.h!r}\n")
        f.write(f"# box: {box_flat}\n")
        f.write(f"# nodes: {covered.size}\n")
        for k, v in zip(covered.tolist(), vals.tolist()):
            f.write(f"{k} {v!r}\n")


def read_snapshot(path, domain: GridDomain) -> GridField:
    """Read a snapshot written for (a grid identical to) this domain."""
    full = np.full(int(np.prod(domain.shape)), np.nan)
    count = None
    seen = 0
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# nodes:"):
                    count = int(line.split(":")[1])
                continue
            k, v = line.split()
            full[int(k)] = float(v)
            seen += 1
    if count is not None and seen != count:
        raise FieldError(f"snapshot record count {seen} != header count {count}")
    return GridField(domain, full.reshape(domain.shape))
