"""Coupled Monte Carlo checks of every bound, with split seeding and CSV output.

Replicates are processed in fixed-size chunks.  Each chunk yields per-replicate arrays, which
are concatenated in replicate order before any reduction, so results do not depend on the
number of worker processes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import bounds
from .config import (ExperimentPlan, build_distribution, build_index, build_model, build_picard,
                     build_statistic, plan_to_text)
from .innovations import InnovationSource, SwapVariable, norm_estimate, split_seeds, swap_index_set
from .lattice import IndexSet, Orthotope, shell_index
from .model import FieldModel, PicardConfig, evaluate_sites, picard_budget
from .statistics import SeparableStatistic, aggregate, statistic_sites

CSV_COLUMNS = ("experiment", "d", "m", "epsilon", "estimate", "stderr", "bound", "threshold", "pass")
MEANINGFUL_REPLICATES = 30
DIAGNOSTIC_SUFFIX = "_diagnostic"


class InsufficientReplicates(ValueError):
    """The requested tail probabilities are too small for the replicate count."""


class VacuousBound(ValueError):
    """The bound under test is infinite for this configuration (unbounded innovations)."""


@dataclass
class Row:
    experiment: str
    d: int | None = None
    m: float | None = None
    epsilon: float | None = None
    estimate: float | None = None
    stderr: float | None = None
    bound: float | None = None
    threshold: float | None = None
    passed: bool | None = None

    def cells(self) -> list[str]:
        return [self.experiment, _num(self.d), _num(self.m), _num(self.epsilon), _num(self.estimate),
                _num(self.stderr), _num(self.bound), _num(self.threshold),
                "" if self.passed is None else ("true" if self.passed else "false")]


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return format(x, ".17g")


@dataclass
class ExperimentResult:
    name: str
    rows: list[Row] = field(default_factory=list)
    replicates: int = 0
    note: str = ""

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.rows if not r.experiment.endswith(DIAGNOSTIC_SUFFIX))


# ---------------------------------------------------------------- setup


@dataclass(frozen=True)
class Setup:
    """The objects a plan describes, built once per process."""

    plan: ExperimentPlan
    model: FieldModel
    distribution: object
    statistic: SeparableStatistic
    index: IndexSet
    cfg: PicardConfig
    reference_depth: int

    @property
    def dim(self) -> int:
        return self.model.dim

    def v_m(self, m: float) -> float:
        return self.distribution.v_m(m, self.dim)

    @property
    def v_inf(self) -> float:
        return self.distribution.v_inf(self.dim)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.v_inf)

    def source(self, seeds) -> InnovationSource:
        return InnovationSource(seeds=seeds, distribution=self.distribution, dim=self.dim)

    def params(self, d: int, m: float = 1) -> bounds.BoundParams:
        return bounds.BoundParams.from_geometry(self.index, self.model.neighborhood, self.statistic.window, d,
                                                self.model.rho, self.v_m(m), self.v_inf)


def build_setup(plan: ExperimentPlan) -> Setup:
    if plan.replicates < 2:
        raise ValueError("a plan needs at least two replicates")
    model = build_model(plan.model)
    stat = build_statistic(plan.statistic, model)
    if not stat.lipschitz_certified:
        raise ValueError(f"statistic {stat.name!r} is not certified Lipschitz-separable")
    if stat.window.kappa != model.kappa:
        raise ValueError("statistic and model live on lattices of different dimension")
    index = build_index(plan.index)
    if index.kappa != model.kappa:
        raise ValueError("index set and model live on lattices of different dimension")
    cfg = build_picard(plan.picard, model)
    d_ref = plan.reference_depth if plan.reference_depth is not None else cfg.iterations - 1
    depths = list(plan.approx_depths) + list(plan.stat_depths) + [plan.swap_depth, plan.deviation_depth]
    if any(d < 0 or d >= d_ref for d in depths):
        raise ValueError(f"every experimental depth must lie in [0, {d_ref})")
    return Setup(plan, model, build_distribution(plan.innovations), stat, index, cfg, d_ref)


_SETUP_CACHE: dict = {}


def _setup_for(plan: ExperimentPlan) -> Setup:
    key = repr(plan)
    if key not in _SETUP_CACHE:
        _SETUP_CACHE.clear()
        _SETUP_CACHE[key] = build_setup(plan)
    return _SETUP_CACHE[key]


def replicate_seeds(plan: ExperimentPlan, experiment: str, count: int) -> np.ndarray:
    return split_seeds(plan.seed, f"{plan.label}/{experiment}", np.arange(count))


def _run_chunks(kernel: Callable, plan: ExperimentPlan, seeds: np.ndarray) -> dict:
    """Apply ``kernel(plan, seeds_chunk) -> dict of (r, ...) arrays`` and stitch the chunks."""
    chunks = [seeds[i:i + plan.chunk_size] for i in range(0, len(seeds), plan.chunk_size)]
    if plan.workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            parts = list(pool.map(kernel, [plan] * len(chunks), chunks))
    else:
        parts = [kernel(plan, c) for c in chunks]
    return {k: np.concatenate([p[k] for p in parts], axis=0) for k in parts[0]}


def _eps_scale(setup: Setup, eps_max: np.ndarray) -> float:
    return setup.v_inf / 2 + abs(getattr(setup.distribution, "mean", 0.0)) if setup.bounded else float(np.max(eps_max))


def _origin(setup: Setup):
    return (0,) * setup.model.kappa


def _abs_max_eps(src: InnovationSource, setup: Setup, sites) -> np.ndarray:
    from .lattice import bounding_box
    pad = [setup.cfg.iterations * h for h in setup.model.delta]
    lo, shape = bounding_box(sites, pad)
    box = src.epsilon_box(lo, shape)
    return np.abs(box).reshape(src.replicates, -1).max(axis=1)


# ---------------------------------------------------------------- approximation decay


def _approx_kernel(plan: ExperimentPlan, seeds: np.ndarray) -> dict:
    setup = _setup_for(plan)
    src = setup.source(seeds)
    site = [_origin(setup)]
    ref = evaluate_sites(setup.model, src, site, setup.reference_depth, setup.cfg)[:, 0]
    gaps = [np.linalg.norm(ref - evaluate_sites(setup.model, src, site, d, setup.cfg)[:, 0], axis=-1)
            for d in plan.approx_depths]
    return {"gap": np.stack(gaps, axis=1), "eps_max": _abs_max_eps(src, setup, site)}


def run_approx_decay(plan: ExperimentPlan) -> ExperimentResult:
    """Gap between H at the origin under the exact and the depth-d truncated view."""
    setup = build_setup(plan)
    R = plan.replicates
    out = _run_chunks(_approx_kernel, plan, replicate_seeds(plan, "approx_decay", R))
    rho, D = setup.model.rho, setup.reference_depth
    pic = 2 * picard_budget(setup.model, setup.cfg, _eps_scale(setup, out["eps_max"]))
    res = ExperimentResult("approx_decay", replicates=R)
    for j, d in enumerate(plan.approx_depths):
        gap = out["gap"][:, j]
        for m in plan.approx_m:
            est, se = norm_estimate(gap, m)
            vm = setup.v_m(m)
            bound = bounds.site_approx_bound(rho, d, vm)
            thr = bound + bounds.site_approx_bound(rho, D, vm) + pic + 3 * se
            res.rows.append(Row("approx_decay", d, m, None, est, se, bound, thr, est <= thr))
        if setup.bounded:
            est = float(gap.max())
            bound = bounds.site_approx_bound(rho, d, setup.v_inf)
            thr = bound + bounds.site_approx_bound(rho, D, setup.v_inf) + pic
            res.rows.append(Row("approx_decay_as", d, math.inf, None, est, 0.0, bound, thr, est <= thr))
    res.rows.extend(_slope_rows(res.rows, rho, max(plan.approx_m)))
    return res


def _slope_rows(rows, rho, m) -> list[Row]:
    pts = [(r.d, r.estimate) for r in rows if r.experiment == "approx_decay" and r.m == m and r.estimate > 0]
    if rho == 0.0 or len(pts) < 2:
        return []
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    se = math.sqrt(float(resid @ resid) / max(len(x) - 2, 1) / float(((x - x.mean()) ** 2).sum())) if len(x) > 2 else 0.0
    bound = math.log(rho)
    return [Row("approx_decay_slope" + DIAGNOSTIC_SUFFIX, None, m, None, float(slope), se, bound, bound,
                bool(slope <= bound))]


# ---------------------------------------------------------------- statistic approximation


def _stat_kernel(plan: ExperimentPlan, seeds: np.ndarray) -> dict:
    setup = _setup_for(plan)
    src = setup.source(seeds)
    sites = statistic_sites(setup.index, setup.statistic)
    def stat_at(depth):
        vals = evaluate_sites(setup.model, src, sites, depth, setup.cfg)
        return aggregate(setup.statistic, vals, sites, setup.index)
    ref = stat_at(setup.reference_depth)
    gaps = [np.abs(ref - stat_at(d)) for d in plan.stat_depths]
    return {"gap": np.stack(gaps, axis=1), "eps_max": _abs_max_eps(src, setup, sites)}


def run_stat_approx(plan: ExperimentPlan) -> ExperimentResult:
    """|S - S~^[d]| over the index set against n n_bbar rho^(d+1) V_m."""
    setup = build_setup(plan)
    R = plan.replicates
    out = _run_chunks(_stat_kernel, plan, replicate_seeds(plan, "stat_approx", R))
    n, nb = len(setup.index), setup.statistic.n_bbar
    rho, D = setup.model.rho, setup.reference_depth
    pic = 2 * n * nb * picard_budget(setup.model, setup.cfg, _eps_scale(setup, out["eps_max"]))
    res = ExperimentResult("stat_approx", replicates=R)
    for j, d in enumerate(plan.stat_depths):
        gap = out["gap"][:, j]
        for m in plan.stat_m:
            est, se = norm_estimate(gap, m)
            vm = setup.v_m(m)
            bound = n * nb * bounds.site_approx_bound(rho, d, vm)
            thr = bound + n * nb * bounds.site_approx_bound(rho, D, vm) + pic + 3 * se
            res.rows.append(Row("stat_approx", d, m, None, est, se, bound, thr, est <= thr))
        if setup.bounded:
            est = float(gap.max())
            bound = n * nb * bounds.site_approx_bound(rho, d, setup.v_inf)
            thr = bound + n * nb * bounds.site_approx_bound(rho, D, setup.v_inf) + pic
            res.rows.append(Row("stat_approx_as", d, math.inf, None, est, 0.0, bound, thr, est <= thr))
    return res


# ---------------------------------------------------------------- swap sensitivity


def _shell_point(setup: Setup, c: int):
    """A coordinate in shell c around the origin, along the first axis with a positive half-width."""
    axis = next(i for i, h in enumerate(setup.model.delta) if h > 0)
    u = [0] * setup.model.kappa
    u[axis] = c * setup.model.delta[axis]
    return tuple(u)


def _swap_plan(setup: Setup):
    d = setup.plan.swap_depth
    enum = swap_index_set(setup.index, setup.statistic.window, d, setup.model.neighborhood)
    mid_site = enum.sites[len(enum.sites) // 2]
    mid_marginal = enum.marginals[len(enum.marginals) // 2]
    return d, SwapVariable("filling", mid_site), SwapVariable("marginal", mid_marginal)


def _swap_kernel(plan: ExperimentPlan, seeds: np.ndarray) -> dict:
    setup = _setup_for(plan)
    src = setup.source(seeds)
    model, cfg = setup.model, setup.cfg
    d, fill_var, marg_var = _swap_plan(setup)
    site = [_origin(setup)]
    base = evaluate_sites(model, src, site, d, cfg)[:, 0]

    def h_gap(var):
        return np.linalg.norm(evaluate_sites(model, src, site, d, cfg, swap=var)[:, 0] - base, axis=-1)

    shells = np.stack([h_gap(SwapVariable("marginal", _shell_point(setup, c))) for c in range(d + 2)], axis=1)
    h_fill = h_gap(SwapVariable("filling", site[0]))

    sites = statistic_sites(setup.index, setup.statistic)
    def stat(var=None):
        vals = evaluate_sites(model, src, sites, d, cfg, swap=var)
        return aggregate(setup.statistic, vals, sites, setup.index)
    s0 = stat()
    return {
        "h_shell": shells,
        "h_fill": h_fill,
        "s_fill": np.abs(stat(fill_var) - s0),
        "s_marg": np.abs(stat(marg_var) - s0),
        "eps_max": _abs_max_eps(src, setup, sites),
    }


def run_swap_sensitivity(plan: ExperimentPlan) -> ExperimentResult:
    """Replace one variable by an independent copy and compare the change with its bound."""
    R = plan.swap_replicates or plan.replicates
    plan = plan.with_overrides(replicates=R)
    setup = build_setup(plan)
    out = _run_chunks(_swap_kernel, plan, replicate_seeds(plan, "swap_sensitivity", R))
    d = plan.swap_depth
    rho = setup.model.rho
    pic = picard_budget(setup.model, setup.cfg, _eps_scale(setup, out["eps_max"]))
    n, nb = len(setup.index), setup.statistic.n_bbar
    res = ExperimentResult("swap_sensitivity", replicates=R)

    def emit(name, gap, bound_of_v, budget, c=None):
        for m in plan.swap_m:
            est, se = norm_estimate(gap, m)
            bound = bound_of_v(setup.v_m(m), m)
            thr = bound + budget + 3 * se
            res.rows.append(Row(name, d if c is None else c, m, None, est, se, bound, thr, est <= thr))
        if setup.bounded:
            est = float(gap.max())
            bound = bound_of_v(setup.v_inf, math.inf)
            thr = bound + budget
            res.rows.append(Row(name + "_as", d if c is None else c, math.inf, None, est, 0.0, bound, thr, est <= thr))

    for c in range(d + 1):
        emit(f"swap_h_shell", out["h_shell"][:, c], lambda v, m, c=c: bounds.shell_swap_bound(rho, c, v), 2 * pic, c)
    outside = out["h_shell"][:, d + 1]
    est = float(outside.max())
    res.rows.append(Row("swap_h_outside", d + 1, None, None, est, 0.0, 0.0, 0.0, est == 0.0))
    emit("swap_h_filling", out["h_fill"], lambda v, m: bounds.site_approx_bound(rho, d, v), 2 * pic)

    stat_budget = 2 * n * nb * pic
    p = setup.params(d)
    emit("swap_s_filling", out["s_fill"],
         lambda v, m: p.n_bbar**2 * rho ** (d + 1) * v, stat_budget)
    emit("swap_s_marginal", out["s_marg"],
         lambda v, m: p.n_bbar * p.n_b * p.kappa * v * (
             bounds.upsilon(p.kappa, rho, d) if math.isinf(m) else bounds.shell_sum(p.kappa, rho, d)),
         stat_budget)
    return res


# ---------------------------------------------------------------- deviation


def _deviation_kernel(plan: ExperimentPlan, seeds: np.ndarray) -> dict:
    setup = _setup_for(plan)
    src = setup.source(seeds)
    sites = statistic_sites(setup.index, setup.statistic)
    def stat_at(depth):
        vals = evaluate_sites(setup.model, src, sites, depth, setup.cfg)
        return aggregate(setup.statistic, vals, sites, setup.index)
    return {"s_tilde": stat_at(plan.deviation_depth), "s": stat_at(setup.reference_depth)}


def _tail_rows(name, values, eps_grid, bound_fn, d) -> list[Row]:
    R = values.size
    centre = float(np.mean(values))
    se_mean = float(np.std(values, ddof=1)) / math.sqrt(R) if R > 1 else 0.0
    dev = np.abs(values - centre)
    rows = []
    for eps in eps_grid:
        p_hat = float(np.mean(dev >= eps))
        se = math.sqrt(p_hat * (1 - p_hat) / R)
        bound = bound_fn(eps)
        # the replicate mean stands in for the expectation: widen by three of its standard errors
        slack = bound_fn(max(eps - 3 * se_mean, 1e-300))
        thr = slack + 3 * se
        rows.append(Row(name, d, None, eps, p_hat, se, bound, thr, p_hat <= thr))
    return rows


def check_deviation_replicates(plan: ExperimentPlan) -> None:
    R = plan.deviation_replicates
    if R < 2:
        raise InsufficientReplicates("the deviation check needs at least two replicates")
    small = min(plan.deviation_tail_probs)
    if small < 10.0 / R:
        raise InsufficientReplicates(
            f"tail probability {small} needs at least {math.ceil(10 / small)} deviation replicates")


def run_deviation(plan: ExperimentPlan) -> ExperimentResult:
    """Empirical tail of |S~ - mean| and |S - mean| against the McDiarmid bounds."""
    check_deviation_replicates(plan)
    R = plan.deviation_replicates
    plan = plan.with_overrides(replicates=R)
    setup = build_setup(plan)
    if not setup.bounded:
        raise VacuousBound("the deviation bounds need bounded innovations (V_inf is infinite)")
    out = _run_chunks(_deviation_kernel, plan, replicate_seeds(plan, "deviation", R))
    d = plan.deviation_depth
    params = setup.params(d)
    res = ExperimentResult("deviation", replicates=R)

    def grid(values, floor=0.0):
        dev = np.abs(values - np.mean(values))
        pts = {float(np.quantile(dev, 1 - p)) for p in plan.deviation_tail_probs}
        for p in plan.deviation_bound_probs:
            if setup.bounded and 0 < p < 2:
                pts.add(floor + bounds.epsilon_for_probability(p, params))
        pts.add(float(dev.max()) * 1.5 + floor)
        if floor > 0:
            pts.update(floor * (1 + j / 4) for j in range(5))
        return sorted(x for x in pts if x > 0 and x >= floor)

    tilde = out["s_tilde"]
    res.rows += _tail_rows("deviation_tilde", tilde, grid(tilde),
                           lambda e: bounds.deviation_bound_tilde(e, params).value, d)
    tau = bounds.s_threshold(params)
    s = out["s"]
    res.rows += _tail_rows("deviation_s", s, grid(s, tau),
                           lambda e: bounds.deviation_bound_s(max(e, tau), params).value, d)
    return res


# ---------------------------------------------------------------- orchestration


EXPERIMENTS = {
    "approx_decay": run_approx_decay,
    "stat_approx": run_stat_approx,
    "swap_sensitivity": run_swap_sensitivity,
    "deviation": run_deviation,
}


@dataclass
class RunSummary:
    label: str
    results: list[ExperimentResult]
    skipped: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def rows(self) -> list[Row]:
        return [row for r in self.results for row in r.rows]

    def text(self) -> str:
        lines = []
        for r in self.results:
            lines.append(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
        for name, why in self.skipped.items():
            lines.append(f"SKIP {name}: {why}")
        lines.extend(f"note: {w}" for w in self.warnings)
        lines.append(f"verdict: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def run_experiments(plan: ExperimentPlan, names: Sequence[str]) -> RunSummary:
    summary = RunSummary(plan.label, [])
    for name in names:
        try:
            result = EXPERIMENTS[name](plan)
        except (InsufficientReplicates, VacuousBound) as exc:
            summary.skipped[name] = str(exc)
            continue
        summary.results.append(result)
        if result.replicates < MEANINGFUL_REPLICATES:
            summary.warnings.append(f"{name}: too few replicates for meaningful standard errors")
    return summary


def run_all(plan: ExperimentPlan) -> RunSummary:
    return run_experiments(plan, list(EXPERIMENTS))


def write_csv_stream(fh, rows: Sequence[Row]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.cells())


def write_csv(path, rows: Sequence[Row]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        write_csv_stream(fh, rows)


def write_outputs(summary: RunSummary, plan: ExperimentPlan, out_dir) -> Path:
    """results.csv, one CSV per experiment, the summary, and the resolved config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", summary.rows())
    for r in summary.results:
        write_csv(out / f"{r.name}.csv", r.rows)
    (out / "summary.txt").write_text(summary.text(), encoding="utf-8", newline="\n")
    (out / "resolved.cfg").write_text(plan_to_text(plan), encoding="utf-8", newline="\n")
    return out
