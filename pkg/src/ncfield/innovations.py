"""Seed-addressable i.i.d. innovation fields, their truncated and swapped views, and moment profiles.

Every innovation value is a pure function of (replicate seed, stream, coordinate): a
splitmix64-style mixer turns the triple into 53 uniform bits, which the configured
distribution maps through its inverse CDF.  Nothing is stored, so exact, truncated and
swapped evaluations can all read the same realisation in any order.
"""

from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .lattice import Coord, IndexSet, Orthotope, _as_coord, neighborhood_union, orthotope_points

# stream tags: each one is an independent counter domain
EPSILON = 1
FILLING = 2
SWAP_MARGINAL = 3
SWAP_FILLING = 4
PAIR = 5
SPLIT = 6

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> _U64(30))) * _MUL1
    z = (z ^ (z >> _U64(27))) * _MUL2
    return z ^ (z >> _U64(31))


def hash_coords(seeds: np.ndarray, domain: int, coords: np.ndarray) -> np.ndarray:
    """uint64 hash for every (seed, coordinate) pair; coords is (M, k) int64 -> (R, M)."""
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    h = _mix(seeds ^ _mix(np.full(1, domain, dtype=np.uint64)))[:, None]
    h = np.broadcast_to(h, (seeds.size, coords.shape[0]))
    for j in range(coords.shape[1]):
        h = _mix(h ^ coords[:, j].view(np.uint64)[None, :])
    return h


def to_unit(h: np.ndarray) -> np.ndarray:
    """Map uint64 hashes to floats strictly inside (0, 1)."""
    return ((h >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53


def split_seeds(root: int, experiment_id: str, replicates) -> np.ndarray:
    """Seed of replicate r for a named experiment: a pure function of (root, name, r)."""
    tag = int.from_bytes(hashlib.blake2b(experiment_id.encode("utf-8"), digest_size=8).digest(), "little")
    r = np.asarray(replicates, dtype=np.int64).reshape(-1)
    coords = np.stack([np.full_like(r, tag - (1 << 64) if tag >= 1 << 63 else tag), r], axis=1)
    root_arr = np.array([root & (2**64 - 1)], dtype=np.uint64)
    return hash_coords(root_arr, SPLIT, coords)[0].copy()


# ---------------------------------------------------------------- distributions


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Gaussian sigma must be positive")

    bounded = False

    def from_unit(self, u):
        return self.mean + self.sigma * special.ndtri(u)

    def v_m(self, m: float, dim: int = 1) -> float:
        # |eps - eps'| is sigma*sqrt(2) times a chi variable with `dim` degrees of freedom
        log_moment = (m / 2) * math.log(2.0) + special.gammaln((dim + m) / 2) - special.gammaln(dim / 2)
        return self.sigma * math.sqrt(2.0) * math.exp(log_moment / m)

    def v_inf(self, dim: int = 1) -> float:
        return math.inf

    def spec(self) -> str:
        return f"gaussian(mean={self.mean!r}, sigma={self.sigma!r})"


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("Uniform needs high > low")

    bounded = True

    def from_unit(self, u):
        return self.low + (self.high - self.low) * u

    def v_m(self, m: float, dim: int = 1) -> float:
        if dim != 1:
            raise NotImplementedError("closed form only for scalar uniform innovations; use moment_vm")
        # |U - U'| has the triangular density 2(1 - x) on [0, 1]
        return (self.high - self.low) * (2.0 / ((m + 1) * (m + 2))) ** (1.0 / m)

    def v_inf(self, dim: int = 1) -> float:
        return (self.high - self.low) * math.sqrt(dim)

    def spec(self) -> str:
        return f"uniform(low={self.low!r}, high={self.high!r})"


@functools.lru_cache(maxsize=64)
def _truncnorm_abs_moment(cut: float, m: float) -> float:
    # E|X - Y|^m for X, Y iid standard normal conditioned on [-cut, cut]
    z = special.ndtr(cut) - special.ndtr(-cut)
    dens = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) / z
    val, _ = integrate.dblquad(
        lambda y, x: (x - y) ** m * dens(x) * dens(y), -cut, cut, lambda x: -cut, lambda x: x,
        epsabs=1e-13, epsrel=1e-11,
    )
    return 2.0 * val


@dataclass(frozen=True)
class TruncatedGaussian:
    """Gaussian conditioned on [mean - cut*sigma, mean + cut*sigma]."""

    mean: float = 0.0
    sigma: float = 1.0
    cut: float = 3.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.cut > 0):
            raise ValueError("TruncatedGaussian needs sigma > 0 and cut > 0")

    bounded = True

    def from_unit(self, u):
        lo = special.ndtr(-self.cut)
        x = special.ndtri(lo + u * (1.0 - 2.0 * lo))
        return self.mean + self.sigma * np.clip(x, -self.cut, self.cut)

    def v_m(self, m: float, dim: int = 1) -> float:
        if dim != 1:
            raise NotImplementedError("closed form only for scalar truncated Gaussians; use moment_vm")
        return self.sigma * _truncnorm_abs_moment(float(self.cut), float(m)) ** (1.0 / m)

    def v_inf(self, dim: int = 1) -> float:
        return 2.0 * self.cut * self.sigma * math.sqrt(dim)

    def spec(self) -> str:
        return f"truncated_gaussian(mean={self.mean!r}, sigma={self.sigma!r}, cut={self.cut!r})"


@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    bounded = True

    def from_unit(self, u):
        return np.full(np.shape(u), float(self.value))

    def v_m(self, m: float, dim: int = 1) -> float:
        return 0.0

    def v_inf(self, dim: int = 1) -> float:
        return 0.0

    def spec(self) -> str:
        return f"constant(value={self.value!r})"


Distribution = Gaussian | Uniform | TruncatedGaussian | Constant

DISTRIBUTIONS = {
    "gaussian": Gaussian,
    "uniform": Uniform,
    "truncated_gaussian": TruncatedGaussian,
    "constant": Constant,
}


def v_inf_regime(dist) -> str:
    """Which sup-norm regime applies: 'bounded' (finite V_inf) or 'unbounded'."""
    return "bounded" if dist.bounded else "unbounded"


# ---------------------------------------------------------------- the source


class InnovationSource:
    """R independent replicates of an i.i.d. innovation field on Z^kappa.

    ``seed`` gives a single replicate; ``seeds`` an array of per-replicate seeds.
    Values come back with a leading replicate axis and a trailing component axis.
    """

    __slots__ = ("_seeds", "distribution", "dim")

    def __init__(self, seed: int | None = 0, distribution=None, dim: int = 1, seeds=None):
        if seeds is None:
            seeds = [int(seed) & (2**64 - 1)]
        arr = np.array(seeds, dtype=np.uint64).reshape(-1)
        if arr.size == 0:
            raise ValueError("need at least one replicate seed")
        arr.setflags(write=False)
        object.__setattr__(self, "_seeds", arr)
        object.__setattr__(self, "distribution", distribution if distribution is not None else Gaussian())
        object.__setattr__(self, "dim", int(dim))
        if self.dim < 1:
            raise ValueError("value dimension must be positive")

    def __setattr__(self, name, value):
        raise AttributeError("InnovationSource is immutable")

    def __repr__(self):
        return f"InnovationSource(R={self.replicates}, distribution={self.distribution.spec()}, dim={self.dim})"

    @property
    def seeds(self) -> np.ndarray:
        return self._seeds

    @property
    def replicates(self) -> int:
        return int(self._seeds.size)

    def subset(self, index) -> "InnovationSource":
        return InnovationSource(seeds=self._seeds[index], distribution=self.distribution, dim=self.dim)

    def values(self, domain: int, coords) -> np.ndarray:
        """Values of one stream at (M, kappa) coordinates, shape (R, M, dim)."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim == 1:
            coords = coords[:, None]
        m = coords.shape[0]
        if self.dim > 1:
            comp = np.repeat(np.arange(self.dim, dtype=np.int64)[None, :], m, axis=0).reshape(-1, 1)
            coords = np.concatenate([np.repeat(coords, self.dim, axis=0), comp], axis=1)
        u = to_unit(hash_coords(self._seeds, domain, coords))
        return np.asarray(self.distribution.from_unit(u), dtype=np.float64).reshape(self.replicates, m, self.dim)

    def epsilon_box(self, lo: Sequence[int], shape: Sequence[int]) -> np.ndarray:
        """Innovations on the box with lower corner ``lo``, shape (R, *shape, dim)."""
        axes = [np.arange(a, a + s, dtype=np.int64) for a, s in zip(lo, shape)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        return self.values(EPSILON, grid).reshape(self.replicates, *shape, self.dim)

    def epsilon_at(self, t):
        return _squeeze(self.values(EPSILON, [_as_coord(t)])[:, 0])

    def filling(self, site) -> np.ndarray:
        return self.values(FILLING, [_as_coord(site)])[:, 0]

    def swap_value(self, var: "SwapVariable") -> np.ndarray:
        domain = SWAP_MARGINAL if var.kind == "marginal" else SWAP_FILLING
        return self.values(domain, [var.coord])[:, 0]


def _squeeze(arr: np.ndarray):
    """(R, dim) -> float, (dim,), (R,) or (R, dim) depending on which axes are trivial."""
    if arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.shape[0] == 1:
        arr = arr[0]
        return float(arr) if np.ndim(arr) == 0 else arr
    return arr


# ---------------------------------------------------------------- views


@dataclass(frozen=True)
class SwapVariable:
    """One random variable of the truncated statistic: a marginal eps_t or a site's filling."""

    kind: str
    coord: Coord

    def __post_init__(self):
        if self.kind not in ("marginal", "filling"):
            raise ValueError(f"unknown swap kind {self.kind!r}")
        object.__setattr__(self, "coord", _as_coord(self.coord))


@dataclass(frozen=True)
class FieldView:
    """An innovation configuration: exact, truncated around a site, or truncated with one swap."""

    source: InnovationSource
    site: Coord | None = None
    depth: int | None = None
    window: Orthotope | None = None
    swap: SwapVariable | None = None

    def __post_init__(self):
        if self.site is not None:
            if self.depth is None or self.window is None:
                raise ValueError("a truncated view needs a depth and a window")
            if self.depth < 0:
                raise ValueError("depth must be non-negative")
            object.__setattr__(self, "site", _as_coord(self.site, self.window.kappa))
        elif self.swap is not None and self.swap.kind == "filling":
            raise ValueError("the exact field has no filling variables to swap")

    @classmethod
    def exact(cls, source, swap: SwapVariable | None = None) -> "FieldView":
        return cls(source, swap=swap)

    @classmethod
    def truncated(cls, source, site, depth: int, window: Orthotope) -> "FieldView":
        return cls(source, site=site, depth=depth, window=window)

    @classmethod
    def swapped(cls, source, site, depth: int, window: Orthotope, swap: SwapVariable) -> "FieldView":
        return cls(source, site=site, depth=depth, window=window, swap=swap)

    @property
    def kind(self) -> str:
        if self.site is None:
            return "exact" if self.swap is None else "exact-swapped"
        return "truncated" if self.swap is None else "swapped"

    def in_window(self, t) -> bool:
        return self.site is None or self.window.contains(t, self.depth, self.site)

    def reads_filling(self, lo, shape) -> bool:
        """Whether the box [lo, lo + shape) pokes outside the truncation window."""
        if self.site is None:
            return False
        half = self.window.scaled(self.depth)
        return any(a < s - h or a + n - 1 > s + h for a, n, s, h in zip(lo, shape, self.site, half))

    def materialize(self, lo: Sequence[int], shape: Sequence[int], base: np.ndarray | None = None) -> np.ndarray:
        """Innovations this view feeds to the evaluator on a box, shape (R, *shape, dim).

        ``base`` may carry the already generated exact innovations on the same box.
        """
        src = self.source
        out = src.epsilon_box(lo, shape) if base is None else base
        kappa = len(shape)
        if self.site is not None and self.reads_filling(lo, shape):
            mask = self._window_mask(lo, shape)
            fill = src.filling(self.site).reshape((src.replicates,) + (1,) * kappa + (src.dim,))
            if self.swap is not None and self.swap.kind == "filling" and self.swap.coord == self.site:
                fill = src.swap_value(self.swap).reshape(fill.shape)
            out = np.where(mask[None, ..., None], out, fill)
        if self.swap is not None and self.swap.kind == "marginal":
            u = self.swap.coord
            rel = tuple(c - a for c, a in zip(u, lo))
            if all(0 <= r < n for r, n in zip(rel, shape)) and self.in_window(u):
                out = out.copy() if out is base else out
                out[(slice(None),) + rel] = src.swap_value(self.swap)
        return out

    def _window_mask(self, lo, shape) -> np.ndarray:
        half = self.window.scaled(self.depth)
        mask = np.ones((), dtype=bool)
        for axis, (a, n, s, h) in enumerate(zip(lo, shape, self.site, half)):
            x = np.arange(a, a + n)
            shape_ax = [1] * len(shape)
            shape_ax[axis] = n
            mask = mask & (np.abs(x - s) <= h).reshape(shape_ax)
        return np.broadcast_to(mask, tuple(shape))


def field_value(view: FieldView, t):
    t = _as_coord(t)
    arr = view.materialize(t, (1,) * len(t))
    return _squeeze(arr.reshape(arr.shape[0], arr.shape[-1]))


# ---------------------------------------------------------------- swap enumeration


@dataclass(frozen=True)
class SwapEnumeration:
    """Every distinct random variable of the truncated statistic, marginals first.

    ``sites`` are the evaluated field sites (union of statistic neighborhoods), each carrying
    one filling variable; ``marginals`` is the union of their truncation windows.
    """

    sites: tuple[Coord, ...]
    marginals: tuple[Coord, ...]
    depth: int
    window: Orthotope

    def __len__(self):
        return len(self.marginals) + len(self.sites)

    @property
    def n_marginals(self) -> int:
        return len(self.marginals)

    @property
    def n_fillings(self) -> int:
        return len(self.sites)

    def is_marginal(self, i: int) -> bool:
        self._check(i)
        return i < len(self.marginals)

    def variable(self, i: int) -> SwapVariable:
        self._check(i)
        if i < len(self.marginals):
            return SwapVariable("marginal", self.marginals[i])
        return SwapVariable("filling", self.sites[i - len(self.marginals)])

    def index_of(self, var: SwapVariable) -> int:
        pool = self.marginals if var.kind == "marginal" else self.sites
        try:
            j = pool.index(var.coord)
        except ValueError:
            raise KeyError(f"{var} is not a variable of this statistic") from None
        return j if var.kind == "marginal" else len(self.marginals) + j

    def _check(self, i):
        if not isinstance(i, (int, np.integer)) or not 0 <= i < len(self):
            raise IndexError(f"swap index {i!r} outside 0..{len(self) - 1}")


def swap_index_set(I: IndexSet, stat_window: Orthotope, d: int, truncation: Orthotope | None = None) -> SwapEnumeration:
    """Enumerate the variables of S~ over I at depth d.

    ``truncation`` is the orthotope whose d-dilation each site's view keeps; callers pass the
    model neighborhood, and it defaults to the statistic window.
    """
    if d < 0:
        raise ValueError("depth must be non-negative")
    truncation = truncation or stat_window
    if len(I) == 0:
        return SwapEnumeration((), (), d, truncation)
    sites = neighborhood_union(I, stat_window, 1)
    marginals: set[Coord] = set()
    for r in sites:
        marginals.update(orthotope_points(truncation, d, r))
    return SwapEnumeration(tuple(sites), tuple(sorted(marginals)), d, truncation)


# ---------------------------------------------------------------- moments


@dataclass(frozen=True)
class MomentProfile:
    m: float
    value: float
    estimate: float
    stderr: float
    closed_form: float | None = None

    @property
    def consistent(self) -> bool:
        """Monte Carlo estimate agrees with the closed form within 5 standard errors."""
        if self.closed_form is None:
            return True
        return abs(self.estimate - self.closed_form) <= 5 * self.stderr + 1e-12


def moment_vm(src: InnovationSource, m: float, sample_count: int, partner: InnovationSource | None = None) -> MomentProfile:
    """Estimate ||eps - eps'||_m from ``sample_count`` pairs per replicate.

    Without ``partner`` the second arm is an independent stream of the same seeds; with a
    partner, its own innovations at the same coordinates are used (a coupled difference).
    """
    if not (m >= 1) or math.isinf(m):
        raise ValueError("moment order must be finite and >= 1 (V_inf comes from the distribution)")
    if sample_count < 2:
        raise ValueError("need at least two samples")
    coords = np.arange(sample_count, dtype=np.int64)[:, None]
    a = src.values(EPSILON, coords)
    b = src.values(PAIR, coords) if partner is None else partner.values(EPSILON, coords)
    gap = np.linalg.norm(a - b, axis=-1).reshape(-1)
    estimate, stderr = norm_estimate(gap, m)
    closed = None
    if partner is None:
        try:
            closed = src.distribution.v_m(m, src.dim)
        except NotImplementedError:
            closed = None
    value = closed if closed is not None else estimate
    return MomentProfile(m=m, value=value, estimate=estimate, stderr=stderr, closed_form=closed)


def norm_estimate(g: np.ndarray, m: float) -> tuple[float, float]:
    """(mean |g|^m)^(1/m) and its delta-method standard error."""
    g = np.abs(np.asarray(g, dtype=np.float64).reshape(-1))
    n = g.size
    powered = g**m
    mean = float(np.mean(powered))
    est = mean ** (1.0 / m)
    if n < 2 or mean == 0.0:
        return est, 0.0
    sd = float(np.std(powered, ddof=1))
    return est, (1.0 / m) * mean ** (1.0 / m - 1.0) * sd / math.sqrt(n)
