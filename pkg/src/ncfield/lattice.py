"""Orthotope neighborhoods on the integer lattice and the counting helpers built on them."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Coord = tuple[int, ...]

# coordinates and flat indices are stored in int64 arrays downstream
_INT_LIMIT = 2**62


def _as_coord(point, kappa: int | None = None) -> Coord:
    if isinstance(point, (int, np.integer)):
        point = (int(point),)
    coord = tuple(int(x) for x in point)
    if kappa is not None and len(coord) != kappa:
        raise ValueError(f"expected a {kappa}-dimensional coordinate, got {coord}")
    return coord


@dataclass(frozen=True)
class Orthotope:
    """Axis-aligned box with half-widths ``delta``, centred at the origin."""

    delta: tuple[int, ...]

    def __init__(self, delta):
        if isinstance(delta, (int, np.integer)):
            delta = (delta,)
        delta = tuple(int(x) for x in delta)
        if not delta:
            raise ValueError("an orthotope needs at least one dimension")
        if any(x < 0 for x in delta):
            raise ValueError(f"half-widths must be non-negative, got {delta}")
        object.__setattr__(self, "delta", delta)

    @property
    def kappa(self) -> int:
        return len(self.delta)

    def scaled(self, d: int) -> tuple[int, ...]:
        if d < 0:
            raise ValueError("dilation must be non-negative")
        return tuple(d * x for x in self.delta)

    def count(self, d: int = 1) -> int:
        return dilation_cardinality(self, d)

    def offsets(self, d: int = 1) -> np.ndarray:
        """Offsets of the dilated box in lexicographic order, shape (count, kappa)."""
        return np.array(orthotope_points(self, d, (0,) * self.kappa), dtype=np.int64).reshape(-1, self.kappa)

    def contains(self, point, d: int = 1, center=None) -> bool:
        point = _as_coord(point, self.kappa)
        center = (0,) * self.kappa if center is None else _as_coord(center, self.kappa)
        return all(abs(p - c) <= h for p, c, h in zip(point, center, self.scaled(d)))

    def __str__(self):
        return ",".join(str(x) for x in self.delta)


def orthotope_points(o: Orthotope, dilation: int, center) -> list[Coord]:
    """All points of V(dilation * delta, center), lexicographically ordered."""
    center = _as_coord(center, o.kappa)
    half = o.scaled(dilation)
    ranges = [range(c - h, c + h + 1) for c, h in zip(center, half)]
    return list(itertools.product(*ranges))


def dilation_cardinality(o: Orthotope, d: int) -> int:
    if d < 0:
        raise ValueError("dilation must be non-negative")
    total = 1
    for h in o.scaled(d):
        total *= 2 * h + 1
        if total > _INT_LIMIT:
            raise OverflowError(f"orthotope {o.delta} dilated by {d} has more than 2**62 points")
    return total


def shell_index(o: Orthotope, center, point) -> int | None:
    """Smallest c with point in V(c * delta, center); None if no dilation reaches it."""
    c = 0
    for p, s, h in zip(_as_coord(point, o.kappa), _as_coord(center, o.kappa), o.delta):
        gap = abs(p - s)
        if gap == 0:
            continue
        if h == 0:
            return None
        c = max(c, -(-gap // h))
    return c


def shell_points(o: Orthotope, c: int, center) -> set[Coord]:
    """V(c * delta, center) minus V((c - 1) * delta, center)."""
    if c < 1:
        raise ValueError("shells are indexed from 1")
    center = _as_coord(center, o.kappa)
    inner = set(orthotope_points(o, c - 1, center))
    return {p for p in orthotope_points(o, c, center) if p not in inner}


def shell_size_bound(o: Orthotope, c: int) -> int:
    """Worst-case shell size n_B * kappa * c**(kappa - 1)."""
    return dilation_cardinality(o, 1) * o.kappa * c ** (o.kappa - 1)


@dataclass(frozen=True)
class IndexSet:
    """Finite, duplicate-free set of lattice sites, kept in lexicographic order."""

    points: tuple[Coord, ...]

    def __init__(self, points: Iterable, kappa: int | None = None):
        pts = [_as_coord(p) for p in points]
        if pts:
            kappa = kappa or len(pts[0])
            pts = [_as_coord(p, kappa) for p in pts]
        if len(set(pts)) != len(pts):
            raise ValueError("index set contains duplicate points")
        object.__setattr__(self, "points", tuple(sorted(pts)))

    @classmethod
    def interval(cls, n: int, start: int = 0) -> "IndexSet":
        if n < 1:
            raise ValueError("interval length must be positive")
        return cls([(start + i,) for i in range(n)])

    @classmethod
    def box(cls, shape: Sequence[int], start: Sequence[int] | None = None) -> "IndexSet":
        shape = tuple(int(s) for s in shape)
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f"invalid box shape {shape}")
        start = tuple(start) if start is not None else (0,) * len(shape)
        ranges = [range(a, a + s) for a, s in zip(start, shape)]
        return cls(itertools.product(*ranges))

    @property
    def kappa(self) -> int:
        if not self.points:
            raise ValueError("empty index set has no dimension")
        return len(self.points[0])

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=np.int64).reshape(len(self.points), -1)


def neighborhood_union(I: IndexSet, o: Orthotope, d: int = 1) -> list[Coord]:
    """Sorted union of V(d * delta, t) over t in I."""
    out: set[Coord] = set()
    for t in I:
        out.update(orthotope_points(o, d, t))
    return sorted(out)


def union_count(I: IndexSet, o: Orthotope, d: int = 1) -> int:
    return len(neighborhood_union(I, o, d))


@dataclass(frozen=True)
class Counts:
    """The cardinalities entering the deviation bounds."""

    n: int
    n_b: int
    n_bbar: int
    n_d: int
    N1: int
    N2: int


def bound_counts(I: IndexSet, model_window: Orthotope, stat_window: Orthotope, d: int) -> Counts:
    return Counts(
        n=len(I),
        n_b=dilation_cardinality(model_window, 1),
        n_bbar=dilation_cardinality(stat_window, 1),
        n_d=dilation_cardinality(stat_window, d),
        N1=union_count(I, stat_window, 1),
        N2=union_count(I, stat_window, d),
    )


def bounding_box(points: Sequence[Coord], pad: Sequence[int] | None = None) -> tuple[Coord, Coord]:
    """Lower corner and shape of the smallest box holding ``points``, widened by ``pad``."""
    arr = np.asarray(points, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[:, None]
    pad_arr = np.zeros(arr.shape[1], dtype=np.int64) if pad is None else np.asarray(pad, dtype=np.int64)
    lo = arr.min(axis=0) - pad_arr
    hi = arr.max(axis=0) + pad_arr
    return tuple(int(x) for x in lo), tuple(int(x) for x in hi - lo + 1)
