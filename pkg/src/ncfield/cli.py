"""``ncfield`` command line: closed-form bounds, lattice counts, Monte Carlo verification, selfcheck.

Stdout carries only the result table (CSV); diagnostics and verdicts go to stderr.
Exit status: 0 when every check passes, 1 on any failure, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import io
import logging
import math
import os
import random
import sys
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import bounds
from .config import ConfigError, ExperimentPlan, build_distribution, build_index, build_model, build_statistic, \
    load_plan, plan_from_mapping
from .innovations import FieldView, InnovationSource, TruncatedGaussian
from .lattice import IndexSet, Orthotope, bound_counts, dilation_cardinality, orthotope_points, shell_index, \
    shell_size_bound
from .model import NonContractiveModel, PicardConfig, ar_model, picard_trace, residual_ratios_ok
from . import montecarlo as mc
from .montecarlo import Row

log = logging.getLogger("ncfield")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

QUANTITIES = ("upsilon", "upsilon_sup", "shell_sum", "approx", "approx_as", "filling_swap", "marginal_swap",
              "deviation_tilde", "deviation_s", "s_threshold", "epsilon_for_probability", "normalized",
              "log_depth", "recommend_d", "legacy")


def _emit(rows: Sequence[Row], out=None) -> None:
    out = out or sys.stdout
    buf = io.StringIO()
    mc.write_csv_stream(buf, rows)
    out.write(buf.getvalue())
    out.flush()


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value experiment file")
    p.add_argument("--seed", type=int, help="root seed (config key plan.seed; env NCF_SEED as last resort)")
    p.add_argument("--replicates", type=int, help="replicate count R (plan.replicates)")
    p.add_argument("--output-dir", help="directory for CSVs, summary and resolved config (plan.output_dir)")
    p.add_argument("--workers", type=int, help="worker processes (plan.workers)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, repeatable")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncfield", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    b = sub.add_parser("bound", help="evaluate one closed-form bound")
    _common(b)
    b.add_argument("--quantity", required=True, choices=QUANTITIES)
    b.add_argument("--kappa", type=int, help="lattice dimension (Upsilon quantities; default from the model)")
    b.add_argument("--rho", type=float, help="contraction constant (default: the model's)")
    b.add_argument("--d", type=float, default=None, help="truncation depth (default: deviation.depth)")
    b.add_argument("--m", type=float, default=1.0, help="moment order for V_m")
    b.add_argument("--epsilon", type=float, help="deviation level")
    b.add_argument("--prob", type=float, help="probability level for epsilon_for_probability")
    b.add_argument("--n", type=int, help="sample size for recommend_d")
    b.add_argument("--shift", choices=("divided", "exact"), default="divided")

    c = sub.add_parser("combinatorics", help="lattice counts n, n_B, n_Bbar, n_d, N1, N2")
    _common(c)
    c.add_argument("--d", type=int, default=None, help="truncation depth (default: deviation.depth)")

    for name, what in (("verify-approx", "approximation decay and statistic approximation"),
                       ("verify-swap", "swap sensitivity"),
                       ("verify-deviation", "deviation dominance"),
                       ("run-all", "every experiment")):
        _common(sub.add_parser(name, help=f"Monte Carlo check: {what}"))

    s = sub.add_parser("selfcheck", help="fast invariant suite")
    s.add_argument("-v", "--verbose", action="count", default=0)
    return parser


# ---------------------------------------------------------------- plan resolution


def resolve_plan(args, environ=None) -> ExperimentPlan:
    """Desk defaults < NCF_SEED < config file < --set < explicit flags."""
    environ = os.environ if environ is None else environ
    base = ExperimentPlan()
    env_seed = environ.get("NCF_SEED")
    if env_seed not in (None, ""):
        try:
            base = base.with_overrides(seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"NCF_SEED is not an integer: {env_seed!r}") from None
    plan = load_plan(args.config, base) if args.config else base
    if args.set:
        pairs = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            pairs[key.strip()] = value.strip()
        plan = plan_from_mapping(pairs, plan)
    for flag in ("replicates", "workers"):
        value = getattr(args, flag)
        if value is not None and value < 1:
            raise ConfigError(f"--{flag} must be positive")
    return plan.with_overrides(seed=args.seed, replicates=args.replicates, output_dir=args.output_dir,
                               workers=args.workers)


# ---------------------------------------------------------------- commands


def _bound_rows(args, plan: ExperimentPlan) -> list[Row]:
    q = args.quantity
    if q == "recommend_d":
        n = args.n if args.n is not None else len(build_index(plan.index))
        kappa = args.kappa or build_model(plan.model).kappa
        return [Row(q, None, None, None, None, None, float(bounds.recommend_d(n, kappa)))]

    model = None
    if args.rho is None or args.kappa is None:
        model = build_model(plan.model)
    rho = args.rho if args.rho is not None else model.rho
    kappa = args.kappa if args.kappa is not None else model.kappa
    d = args.d if args.d is not None else plan.deviation_depth

    if q in ("upsilon", "upsilon_sup", "shell_sum"):
        if q == "upsilon":
            value = bounds.upsilon(kappa, rho, d)
        elif q == "upsilon_sup":
            value, d = bounds.upsilon_sup(kappa, rho), None
        else:
            if d != int(d):
                raise ConfigError("shell_sum needs an integer depth")
            value = bounds.shell_sum(kappa, rho, int(d))
        return [Row(q, d, None, None, None, None, value)]

    if d != int(d):
        raise ConfigError(f"{q} needs an integer depth")
    d = int(d)
    model = model or build_model(plan.model)
    if args.kappa is not None and args.kappa != model.kappa:
        raise ConfigError("--kappa disagrees with the configured model")
    dist = build_distribution(plan.innovations)
    stat = build_statistic(plan.statistic, model)
    params = bounds.BoundParams.from_geometry(build_index(plan.index), model.neighborhood, stat.window, d, rho,
                                              dist.v_m(args.m, model.dim), dist.v_inf(model.dim))
    m = args.m
    if q == "approx":
        return [Row(q, d, m, None, None, None, bounds.approx_error_bound(params).value)]
    if q == "approx_as":
        return [Row(q, d, math.inf, None, None, None, bounds.approx_error_bound(params, True).value)]
    if q == "filling_swap":
        return [Row(q, d, math.inf, None, None, None, bounds.filling_swap_bound(params))]
    if q == "marginal_swap":
        return [Row(q, d, math.inf, None, None, None, bounds.marginal_swap_bound(params))]
    if q == "s_threshold":
        return [Row(q, d, None, None, None, None, bounds.s_threshold(params))]
    if q == "epsilon_for_probability":
        if args.prob is None:
            raise ConfigError("--prob is required for epsilon_for_probability")
        return [Row(q, d, None, bounds.epsilon_for_probability(args.prob, params), None, None, args.prob)]
    if args.epsilon is None:
        raise ConfigError(f"--epsilon is required for {q}")
    eps = args.epsilon
    if q == "deviation_tilde":
        report = bounds.deviation_bound_tilde(eps, params)
    elif q == "deviation_s":
        report = bounds.deviation_bound_s(eps, params)
    elif q == "normalized":
        report = bounds.normalized_bound(eps, params, args.shift)
    elif q == "legacy":
        report = bounds.legacy_deviation_bound(eps, params)
    else:
        d, report = bounds.log_depth_bound(eps, params)
    return [Row(report.name, d, None, eps, None, None, report.value, None,
                None if report.condition_met else False)]


def _combinatorics_rows(args, plan: ExperimentPlan) -> list[Row]:
    model = build_model(plan.model)
    stat = build_statistic(plan.statistic, model)
    d = args.d if args.d is not None else plan.deviation_depth
    counts = bound_counts(build_index(plan.index), model.neighborhood, stat.window, d)
    return [Row(f"count_{k}", d, None, None, float(v)) for k, v in vars(counts).items()]


def _run_checks(plan: ExperimentPlan, names: Sequence[str]) -> tuple[list[Row], bool]:
    mc.build_setup(plan)  # configuration problems surface here, before any simulation
    summary = mc.run_experiments(plan, names)
    if plan.output_dir:
        mc.write_outputs(summary, plan, plan.output_dir)
    sys.stderr.write(summary.text())
    return summary.rows(), summary.passed


# ---------------------------------------------------------------- selfcheck


def _check_upsilon_dominance(upsilon_fn) -> bool:
    for kappa in (1, 2, 3):
        for k in range(1, 10):
            rho = k / 10
            exact = Fraction(0)
            r = Fraction(rho)
            for d in range(0, 51):
                if d:
                    exact += Fraction(d) ** (kappa - 1) * r**d
                if Fraction(upsilon_fn(kappa, rho, d)) + Fraction(1, 10**12) < exact:
                    return False
    return True


def _check_upsilon_supremum(upsilon_fn) -> bool:
    for kappa in (1, 2, 3):
        for k in range(1, 10):
            rho = k / 10
            sup = bounds.upsilon_sup(kappa, rho)
            if any(upsilon_fn(kappa, rho, d) > sup * (1 + 1e-12) for d in range(201)):
                return False
    return True


def _check_dilation_cardinality(_) -> bool:
    for delta in [(0,), (1,), (3,), (1, 2), (0, 2), (2, 1, 1), (1, 0, 1)]:
        o = Orthotope(delta)
        for d in range(4):
            pts = orthotope_points(o, d, (0,) * o.kappa)
            if len(set(pts)) != len(pts) or len(pts) != dilation_cardinality(o, d):
                return False
    return True


def _check_shell_sizes(_) -> bool:
    for delta in [(1,), (2,), (1, 1), (1, 2), (1, 1, 1)]:
        o = Orthotope(delta)
        centre = (0,) * o.kappa
        sizes: dict[int, int] = {}
        for p in orthotope_points(o, 4, centre):
            c = shell_index(o, centre, p)
            sizes[c] = sizes.get(c, 0) + 1
        if any(sizes.get(c, 0) > shell_size_bound(o, c) for c in range(1, 5)):
            return False
    return True


def _check_count_chain(_) -> bool:
    rng = random.Random(20240229)
    for trial in range(60):
        kappa = 1 + trial % 3
        pts = {tuple(rng.randint(-6, 6) for _ in range(kappa)) for _ in range(rng.randint(1, 12))}
        I = IndexSet(sorted(pts))
        model_w = Orthotope(tuple(rng.randint(0, 2) for _ in range(kappa)))
        stat_w = Orthotope(tuple(rng.randint(0, 2) for _ in range(kappa)))
        d = rng.randint(1, 3)
        c = bound_counts(I, model_w, stat_w, d)
        if not (c.n <= c.N1 <= c.n * c.n_bbar and c.N1 <= c.N2 <= c.N1 * c.n_d):
            return False
    return True


def _check_picard_ar(_) -> bool:
    model = ar_model(0.2, 0.2, 0.3)
    cfg = PicardConfig.for_model(model)
    src = InnovationSource(seeds=np.arange(20, dtype=np.uint64), distribution=TruncatedGaussian())
    _, resid = picard_trace(model, FieldView.exact(src), 0, cfg)
    return residual_ratios_ok(resid, model.rho + 0.05)


SELFCHECKS: dict[str, Callable] = {
    "upsilon_dominance": _check_upsilon_dominance,
    "upsilon_supremum": _check_upsilon_supremum,
    "dilation_cardinality": _check_dilation_cardinality,
    "shell_size_bound": _check_shell_sizes,
    "count_chain": _check_count_chain,
    "picard_convergence_ar": _check_picard_ar,
}


def selfcheck(upsilon_fn: Callable = bounds.upsilon) -> tuple[list[Row], bool]:
    rows = []
    for name, check in SELFCHECKS.items():
        try:
            ok = bool(check(upsilon_fn))
        except Exception as exc:  # a crashing invariant is a failing invariant
            log.error("%s raised %s", name, exc)
            ok = False
        rows.append(Row(f"selfcheck_{name}", passed=ok))
        sys.stderr.write(f"{'PASS' if ok else 'FAIL'} {name}\n")
    return rows, all(r.passed for r in rows)


# ---------------------------------------------------------------- entry point


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(message)s")

    if args.command == "selfcheck":
        rows, ok = selfcheck()
        _emit(rows)
        return EXIT_OK if ok else EXIT_FAIL

    try:
        plan = resolve_plan(args)
        if args.command == "bound":
            rows, ok = _bound_rows(args, plan), True
        elif args.command == "combinatorics":
            rows, ok = _combinatorics_rows(args, plan), True
        else:
            names = {
                "verify-approx": ["approx_decay", "stat_approx"],
                "verify-swap": ["swap_sensitivity"],
                "verify-deviation": ["deviation"],
                "run-all": list(mc.EXPERIMENTS),
            }[args.command]
            if args.command == "verify-deviation":
                mc.check_deviation_replicates(plan)
                if not mc.build_setup(plan).bounded:
                    raise mc.VacuousBound("the deviation bounds need bounded innovations (V_inf is infinite)")
            rows, ok = _run_checks(plan, names)
    except (ConfigError, NonContractiveModel, mc.InsufficientReplicates, mc.VacuousBound) as exc:
        sys.stderr.write(f"ncfield: {exc}\n")
        return EXIT_CONFIG
    except (ValueError, KeyError, OverflowError) as exc:
        sys.stderr.write(f"ncfield: invalid configuration: {exc}\n")
        return EXIT_CONFIG
    if args.command in ("bound", "combinatorics") and plan.output_dir:
        mc.write_csv(os.path.join(plan.output_dir, f"{args.command}.csv"), rows)
    _emit(rows)
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
