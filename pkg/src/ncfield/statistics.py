"""Lipschitz-separable statistics over a field neighborhood and their aggregates over an index set.

A statistic's ``phi`` takes neighborhood values shaped (R, n_bbar, dim), with neighbors in
lexicographic offset order, and returns one real per replicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .innovations import InnovationSource, SwapEnumeration, _squeeze, norm_estimate, swap_index_set
from .lattice import Coord, IndexSet, Orthotope, neighborhood_union
from .model import FieldModel, PicardConfig, evaluate_sites


@dataclass(frozen=True)
class SeparableStatistic:
    name: str
    phi: Callable
    window: Orthotope
    lipschitz_certified: bool = True
    lipschitz_constant: float = 1.0
    params: dict = field(default_factory=dict, compare=False)

    @property
    def n_bbar(self) -> int:
        return self.window.count(1)

    @property
    def center_index(self) -> int:
        return self.n_bbar // 2


def _scalar(values: np.ndarray) -> np.ndarray:
    """(R, k, dim) -> (R, k): the value itself for scalar fields, its Euclidean norm otherwise."""
    if values.shape[-1] == 1:
        return values[..., 0]
    return np.linalg.norm(values, axis=-1)


def _running_sum(x: np.ndarray) -> np.ndarray:
    # left-to-right along axis 1; each row's result does not depend on the batch it sits in
    acc = x[:, 0].copy()
    for j in range(1, x.shape[1]):
        acc = acc + x[:, j]
    return acc


def make_statistic(name: str, window: Orthotope, **params) -> SeparableStatistic:
    """Build a catalog statistic: center, abs_center, sum, mean, max, constant, or cube."""
    c = window.count(1) // 2
    n_bbar = window.count(1)
    if name == "center":
        return SeparableStatistic(name, lambda v: _scalar(v)[:, c], window)
    if name == "abs_center":
        return SeparableStatistic(name, lambda v: np.abs(_scalar(v)[:, c]), window)
    if name == "sum":
        return SeparableStatistic(name, lambda v: _running_sum(_scalar(v)), window)
    if name == "mean":
        return SeparableStatistic(name, lambda v: _running_sum(_scalar(v)) / n_bbar, window,
                                  lipschitz_constant=1.0 / n_bbar)
    if name == "max":
        return SeparableStatistic(name, lambda v: _scalar(v).max(axis=1), window)
    if name == "constant":
        value = float(params.get("value", 0.0))
        return SeparableStatistic(name, lambda v: np.full(v.shape[0], value), window,
                                  lipschitz_constant=0.0, params={"value": value})
    if name == "cube":
        # not Lipschitz: kept as a negative control
        return SeparableStatistic(name, lambda v: _scalar(v)[:, c] ** 3, window,
                                  lipschitz_certified=False, lipschitz_constant=math.inf)
    raise ValueError(f"unknown statistic {name!r}")


# ---------------------------------------------------------------- prediction risk


@dataclass(frozen=True)
class PredictionLoss:
    """cost(predictor(neighbors), value at centre).

    ``predictor`` maps (R, k, dim) neighbor values to (R, dim); ``coefficients`` are its
    per-input Lipschitz constants (used for certification).  ``cost`` maps two (R, dim)
    arrays to (R,).
    """

    predictor: Callable
    cost: Callable
    coefficients: tuple[float, ...] | None = None
    include_center: bool = False
    name: str = "risk"


def zero_predictor(x):
    return np.zeros((x.shape[0], x.shape[-1]))


def mean_predictor(x):
    acc = x[:, 0].copy()
    for j in range(1, x.shape[1]):
        acc = acc + x[:, j]
    return acc / x.shape[1]


def linear_predictor(weights: Sequence[float]):
    w = [float(a) for a in weights]

    def predict(x):
        acc = w[0] * x[:, 0]
        for j in range(1, len(w)):
            acc = acc + w[j] * x[:, j]
        return acc

    return predict


def abs_cost(pred, truth):
    return np.linalg.norm(pred - truth, axis=-1)


def clipped_abs_cost(cap: float):
    return lambda pred, truth: np.minimum(np.linalg.norm(pred - truth, axis=-1), cap)


def predictor_inputs(window: Orthotope, include_center: bool) -> list[Coord]:
    offs = [tuple(int(x) for x in u) for u in window.offsets(1)]
    return offs if include_center else [u for u in offs if any(u)]


def make_loss(predictor: str, window: Orthotope, cost: str = "abs", include_center: bool = False,
              weights: dict | None = None, cap: float | None = None) -> PredictionLoss:
    """Loss from catalog names: predictor zero / neighbor_mean / linear, cost abs / clipped_abs."""
    inputs = predictor_inputs(window, include_center)
    k = len(inputs)
    if predictor == "zero":
        fn, coef = zero_predictor, (0.0,) * k
    elif predictor == "neighbor_mean":
        fn, coef = mean_predictor, (1.0 / k,) * k
    elif predictor == "linear":
        table = {tuple(u) if isinstance(u, tuple) else (int(u),): float(w) for u, w in (weights or {}).items()}
        unknown = set(table) - set(inputs)
        if unknown:
            raise ValueError(f"predictor weights outside its inputs: {sorted(unknown)}")
        coef = tuple(table.get(u, 0.0) for u in inputs)
        fn = linear_predictor(coef)
    else:
        raise ValueError(f"unknown predictor {predictor!r}")
    if cost == "abs":
        cost_fn = abs_cost
    elif cost == "clipped_abs":
        cost_fn = clipped_abs_cost(float(cap if cap is not None else 1.0))
    else:
        raise ValueError(f"unknown cost {cost!r}")
    return PredictionLoss(fn, cost_fn, coef, include_center, f"{predictor}/{cost}")


def oracle_loss(model: FieldModel, window: Orthotope) -> PredictionLoss:
    """Linear predictor using a stencil model's own coefficients, absolute cost."""
    if model.stencil is None or model.stencil.activation != "identity":
        raise ValueError("the oracle predictor needs a linear stencil model")
    weights = dict(zip(model.offsets, model.stencil.weights))
    return make_loss("linear", window, "abs", weights=weights)


def make_risk_statistic(loss: PredictionLoss, window: Orthotope) -> SeparableStatistic:
    offs = [tuple(int(x) for x in u) for u in window.offsets(1)]
    inputs = predictor_inputs(window, loss.include_center)
    cols = np.array([offs.index(u) for u in inputs], dtype=np.intp)
    c = len(offs) // 2

    def phi(v):
        return loss.cost(loss.predictor(v[:, cols]), v[:, c])

    if loss.coefficients is None:
        const, certified = math.inf, False
    else:
        per_coord = {u: abs(a) for u, a in zip(inputs, loss.coefficients)}
        per_coord[offs[c]] = per_coord.get(offs[c], 0.0) + 1.0
        const = max(per_coord.values())
        certified = const <= 1.0
    return SeparableStatistic(loss.name, phi, window, certified, const,
                              params={"include_center": loss.include_center})


# ---------------------------------------------------------------- aggregates


def statistic_sites(I: IndexSet, stat: SeparableStatistic) -> list[Coord]:
    """Sites whose field values enter the statistic: the union of the neighborhoods."""
    return neighborhood_union(I, stat.window, 1) if len(I) else []


def aggregate(stat: SeparableStatistic, site_values: np.ndarray, sites: Sequence[Coord], I: IndexSet) -> np.ndarray:
    """Sum over I of phi applied to each neighborhood; site_values is (R, len(sites), dim)."""
    R, dim = site_values.shape[0], site_values.shape[-1]
    if len(I) == 0:
        return np.zeros(R)
    where = {s: j for j, s in enumerate(sites)}
    offs = [tuple(int(x) for x in u) for u in stat.window.offsets(1)]
    idx = np.array([[where[tuple(a + b for a, b in zip(t, u))] for u in offs] for t in I], dtype=np.intp)
    hood = site_values[:, idx]  # (R, n, n_bbar, dim)
    vals = stat.phi(hood.reshape(R * len(I), len(offs), dim)).reshape(R, len(I))
    return _running_sum(vals)


def _statistic(stat, model, src, I, depth, cfg, swap=None, shared=None, backend=None):
    sites = statistic_sites(I, stat)
    vals = evaluate_sites(model, src, sites, depth, cfg, swap=swap, truncation=model.neighborhood,
                          shared=shared, backend=backend)
    return aggregate(stat, vals, sites, I)


def _shape(x: np.ndarray):
    return float(x[0]) if x.size == 1 else x


def s_exact(stat: SeparableStatistic, model: FieldModel, src: InnovationSource, I: IndexSet,
            reference_depth: int | None, cfg: PicardConfig, backend=None):
    """Reference value of S over I: truncation at ``reference_depth`` (None for the plain exact field).

    At reference_depth >= K - 1 the truncation never reaches the pyramid, so both coincide.
    """
    return _shape(_statistic(stat, model, src, I, reference_depth, cfg, backend=backend))


def s_tilde(stat: SeparableStatistic, model: FieldModel, src: InnovationSource, I: IndexSet, d: int,
            cfg: PicardConfig, shared=None, backend=None):
    """S~ at depth d: every field value comes from its own site's truncated view."""
    if d < 0:
        raise ValueError("depth must be non-negative")
    return _shape(_statistic(stat, model, src, I, d, cfg, shared=shared, backend=backend))


def s_tilde_swapped(stat: SeparableStatistic, model: FieldModel, src: InnovationSource, I: IndexSet, d: int,
                    i: int, cfg: PicardConfig, enumeration: SwapEnumeration | None = None, backend=None):
    """S~ at depth d with enumerated variable ``i`` replaced by its independent copy."""
    enum = enumeration or swap_index_set(I, stat.window, d, model.neighborhood)
    var = enum.variable(i)
    return _shape(_statistic(stat, model, src, I, d, cfg, swap=var, backend=backend))


def default_reference_depth(model: FieldModel, cfg: PicardConfig, n: int, n_bbar: int, v2: float,
                            mc_stderr: float) -> int:
    """Smallest D with n n_bbar rho^(D+1) V_2 below 1e-3 of the Monte Carlo error, and at least K - 1."""
    floor = cfg.iterations - 1
    rho = model.rho
    if rho == 0.0 or v2 == 0.0:
        return floor
    target = 1e-3 * mc_stderr
    if target <= 0.0:
        return floor
    D = max(0, math.ceil(math.log(target / (n * n_bbar * v2)) / math.log(rho) - 1))
    return max(D, floor)


# ---------------------------------------------------------------- H3 check


@dataclass(frozen=True)
class LipschitzReport:
    passed: bool
    rows: tuple  # (design, m, lhs, rhs, stderr, ok)

    def failures(self):
        return [r for r in self.rows if not r[-1]]


def check_lipschitz_separable(stat: SeparableStatistic, trials: int = 4000, coupling_scale: float = 0.1,
                              field_scale: float = 1.0, seed: int = 0, dim: int = 1,
                              m_values: Sequence[float] = (1, 2)) -> LipschitzReport:
    """Sample coupled neighborhoods (U, V) and test ||phi(U) - phi(V)||_m <= sum_t ||U_t - V_t||_m.

    Couplings: independent copies, a perturbation of each single coordinate, and of all
    coordinates at once.  A row passes if the left side exceeds the right by at most three
    standard errors.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    rng = np.random.default_rng(seed)
    k = stat.n_bbar
    U = field_scale * rng.standard_normal((trials, k, dim))
    designs = [("independent", field_scale * rng.standard_normal((trials, k, dim)))]
    for j in range(k):
        V = U.copy()
        V[:, j] += coupling_scale * rng.standard_normal((trials, dim))
        designs.append((f"perturb_{j}", V))
    designs.append(("perturb_all", U + coupling_scale * rng.standard_normal((trials, k, dim))))
    rows = []
    base = stat.phi(U)
    for label, V in designs:
        out_gap = np.abs(stat.phi(V) - base)
        in_gap = np.linalg.norm(U - V, axis=-1)
        for m in m_values:
            lhs, se = norm_estimate(out_gap, m)
            rhs = math.fsum(norm_estimate(in_gap[:, t], m)[0] for t in range(k))
            ok = bool(lhs <= rhs * (1 + 1e-9) + 3 * se)
            rows.append((label, m, lhs, rhs, se, ok))
    return LipschitzReport(all(r[-1] for r in rows), tuple(rows))
