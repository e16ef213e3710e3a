"""Flat ``key = value`` experiment configuration and the builders that turn it into objects.

Keys are dotted (``model.type = ar``).  Lines starting with ``#`` or ``;`` are comments.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .innovations import DISTRIBUTIONS
from .lattice import IndexSet, Orthotope
from .model import FieldModel, PicardConfig, ar_model, brnn_model, stencil_model
from .statistics import make_loss, make_risk_statistic, make_statistic, oracle_loss


class ConfigError(ValueError):
    """Invalid or missing experiment configuration."""


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (int, np.integer)):
        return (int(text),)
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)


def _depths(text) -> tuple[int, ...]:
    """'0..8' or '0,2,4'."""
    if isinstance(text, str) and ".." in text:
        a, b = text.split("..")
        return tuple(range(int(a), int(b) + 1))
    return _ints(text)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional_int(text):
    if text is None or str(text).strip().lower() in ("", "auto", "none"):
        return None
    return int(text)


DESK_MODEL = {"type": "ar", "alpha_left": "0.2", "alpha_right": "0.2", "beta": "0.3"}
DESK_INNOVATIONS = {"distribution": "truncated_gaussian", "mean": "0", "sigma": "1", "cut": "3"}
DESK_STATISTIC = {"type": "risk", "delta_bar": "1", "predictor": "neighbor_mean", "cost": "abs",
                  "include_center": "false"}
DESK_INDEX = {"type": "interval", "n": "64"}
DESK_PICARD = {"iterations": "auto", "target_error": "1e-12", "margin": "0", "init": "0"}


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything one run needs; section dictionaries keep their config-file string values."""

    label: str = "desk"
    seed: int = 0
    replicates: int = 10_000
    workers: int = 1
    chunk_size: int = 2_000
    output_dir: str | None = None
    reference_depth: int | None = None
    model: dict = field(default_factory=lambda: dict(DESK_MODEL))
    innovations: dict = field(default_factory=lambda: dict(DESK_INNOVATIONS))
    statistic: dict = field(default_factory=lambda: dict(DESK_STATISTIC))
    index: dict = field(default_factory=lambda: dict(DESK_INDEX))
    picard: dict = field(default_factory=lambda: dict(DESK_PICARD))
    approx_depths: tuple = tuple(range(9))
    approx_m: tuple = (1, 2)
    stat_depths: tuple = (0, 2, 4)
    stat_m: tuple = (1,)
    swap_depth: int = 4
    swap_m: tuple = (2,)
    swap_replicates: int | None = None
    deviation_depth: int = 4
    deviation_replicates: int = 20_000
    deviation_tail_probs: tuple = (0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 0.0005)
    deviation_bound_probs: tuple = (1.0, 0.5, 0.1, 0.01, 0.001)

    def with_overrides(self, **kw) -> "ExperimentPlan":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# flat key -> (plan attribute, parser); model/innovations/... sections are handled separately
_SCALAR_KEYS = {
    "plan.label": ("label", str),
    "plan.seed": ("seed", int),
    "plan.replicates": ("replicates", int),
    "plan.workers": ("workers", int),
    "plan.chunk_size": ("chunk_size", int),
    "plan.output_dir": ("output_dir", str),
    "reference.depth": ("reference_depth", _optional_int),
    "approx.depths": ("approx_depths", _depths),
    "approx.m": ("approx_m", _floats),
    "stat_approx.depths": ("stat_depths", _depths),
    "stat_approx.m": ("stat_m", _floats),
    "swap.depth": ("swap_depth", int),
    "swap.m": ("swap_m", _floats),
    "swap.replicates": ("swap_replicates", _optional_int),
    "deviation.depth": ("deviation_depth", int),
    "deviation.replicates": ("deviation_replicates", int),
    "deviation.tail_probs": ("deviation_tail_probs", _floats),
    "deviation.bound_probs": ("deviation_bound_probs", _floats),
}
_SECTIONS = ("model", "innovations", "statistic", "index", "picard")


def parse_config_text(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return dict(parser["root"])


def plan_from_mapping(flat: dict[str, str], base: ExperimentPlan | None = None) -> ExperimentPlan:
    plan = base or ExperimentPlan()
    updates: dict = {}
    given: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, value in flat.items():
        if key in _SCALAR_KEYS:
            attr, conv = _SCALAR_KEYS[key]
            try:
                updates[attr] = conv(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
            continue
        head, _, tail = key.partition(".")
        if head not in _SECTIONS or not tail:
            raise ConfigError(f"unknown config key {key!r}")
        given[head][tail] = str(value).strip()
    for name, spec in given.items():
        current = getattr(plan, name)
        kind_key = "distribution" if name == "innovations" else "type"
        if kind_key in spec and spec[kind_key] != current.get(kind_key):
            # a different kind does not inherit the previous kind's parameters
            updates[name] = spec
        else:
            updates[name] = {**current, **spec}
    return replace(plan, **updates)


def load_plan(path, base: ExperimentPlan | None = None) -> ExperimentPlan:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config not found: {p}")
    return plan_from_mapping(parse_config_text(p.read_text(encoding="utf-8")), base)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(int(value)) if value.is_integer() and abs(value) < 1e15 else repr(value)
    return "auto" if value is None else str(value)


def plan_to_text(plan: ExperimentPlan) -> str:
    """The resolved configuration in the same flat format, keys sorted."""
    lines = {}
    for key, (attr, _) in _SCALAR_KEYS.items():
        value = getattr(plan, attr)
        if attr == "output_dir" and value is None:
            continue
        lines[key] = _fmt(value)
    for name in _SECTIONS:
        for k, v in getattr(plan, name).items():
            lines[f"{name}.{k}"] = _fmt(v) if not isinstance(v, str) else v
    return "".join(f"{k} = {lines[k]}\n" for k in sorted(lines))


# ---------------------------------------------------------------- builders


def _matrix(text) -> np.ndarray:
    if not isinstance(text, str):
        return np.atleast_2d(np.asarray(text, dtype=float))
    rows = [r for r in text.split(";") if r.strip()]
    return np.array([_floats(r) for r in rows], dtype=float)


def build_model(spec: dict, strict: bool = True) -> FieldModel:
    kind = spec.get("type", "ar")
    try:
        if kind == "ar":
            return ar_model(float(spec.get("alpha_left", 0.0)), float(spec.get("alpha_right", 0.0)),
                            float(spec.get("beta", 1.0)), strict=strict)
        if kind == "brnn":
            return brnn_model(_matrix(spec["matrix"]), float(spec["beta"]),
                              spec.get("activation", "tanh"), int(spec.get("k", 1)), strict=strict)
        if kind == "stencil":
            weights = {}
            for entry in str(spec["weights"]).split(";"):
                if entry.strip():
                    off, w = entry.split(":")
                    weights[_ints(off)] = float(w)
            return stencil_model(weights, float(spec["beta"]), spec.get("activation", "identity"),
                                 strict=strict)
    except KeyError as exc:
        raise ConfigError(f"model.{exc.args[0]} is required for model.type = {kind}") from None
    raise ConfigError(f"unknown model.type {kind!r}")


def build_distribution(spec: dict):
    kind = spec.get("distribution", "gaussian")
    if kind not in DISTRIBUTIONS:
        raise ConfigError(f"unknown innovations.distribution {kind!r}")
    cls = DISTRIBUTIONS[kind]
    args = {f.name: float(spec[f.name]) for f in fields(cls) if f.name in spec}
    extra = set(spec) - {"distribution", "dim"} - {f.name for f in fields(cls)}
    if extra:
        raise ConfigError(f"unknown innovations keys for {kind}: {sorted(extra)}")
    return cls(**args)


def build_statistic(spec: dict, model: FieldModel | None = None):
    kind = spec.get("type", "center")
    window = Orthotope(_ints(spec.get("delta_bar", "1")))
    if kind == "risk":
        include = _bool(spec.get("include_center", "false"))
        predictor = spec.get("predictor", "neighbor_mean")
        if predictor == "oracle":
            if model is None:
                raise ConfigError("the oracle predictor needs the model")
            loss = oracle_loss(model, window)
        else:
            cap = spec.get("cap")
            loss = make_loss(predictor, window, spec.get("cost", "abs"), include,
                             cap=float(cap) if cap is not None else None)
        return make_risk_statistic(loss, window)
    params = {"value": float(spec["value"])} if "value" in spec else {}
    return make_statistic(kind, window, **params)


def build_index(spec: dict) -> IndexSet:
    kind = spec.get("type", "interval")
    if kind == "interval":
        return IndexSet.interval(int(spec.get("n", 64)), int(spec.get("start", 0)))
    if kind == "box":
        return IndexSet.box(_ints(spec["shape"]))
    if kind == "explicit":
        return IndexSet([_ints(p) for p in str(spec["points"]).split(";") if p.strip()])
    raise ConfigError(f"unknown index.type {kind!r}")


def build_picard(spec: dict, model: FieldModel) -> PicardConfig:
    margin = int(spec.get("margin", 0))
    init = float(spec.get("init", 0.0))
    iters = str(spec.get("iterations", "auto")).strip().lower()
    if iters in ("auto", "0", ""):
        return PicardConfig.for_model(model, float(spec.get("target_error", 1e-12)),
                                      window_margin=margin, init_value=init)
    return PicardConfig(int(iters), margin, init)
