"""Non-causal field models X_t = F((X_{t+u})_{u in B}, eps_t) and their Picard evaluation.

Evaluation uses a shrinking pyramid: K sweeps starting from the constant field
``init_value`` on V(K*delta, centre), each sweep valid on a box one delta smaller.
The surviving centre value equals the K-th iterate of the infinite-lattice iteration,
so it depends only on innovations inside V((K-1)*delta, centre).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from ._fallback import ACTIVATIONS
from .innovations import FieldView, InnovationSource, SwapVariable, _squeeze
from .lattice import Coord, Orthotope, _as_coord, bounding_box

MAX_BOX_CELLS = 50_000_000


class NonContractiveModel(ValueError):
    """The Lipschitz weights do not satisfy rho + eta < 1."""


@dataclass(frozen=True)
class Stencil:
    """x -> act(sum_u w_u x_{t+u}) + beta * eps_t, handled by the compiled kernel."""

    weights: tuple[float, ...]
    beta: float
    activation: str = "identity"


@dataclass(frozen=True)
class ContractionReport:
    rho: float
    eta: float
    total: float
    passed: bool
    extra: dict = field(default_factory=dict)


def contraction_report(lam: Sequence[float], eta: float, **extra) -> ContractionReport:
    rho = float(sum(lam))
    total = rho + float(eta)
    return ContractionReport(rho, float(eta), total, total < 1.0, dict(extra))


@dataclass(frozen=True)
class FieldModel:
    """Update rule on Z^kappa with per-offset Lipschitz weights ``lam`` and innovation weight ``eta``.

    ``update(neighbors, eps)`` receives one array per offset (in ``offsets`` order) plus the
    innovation array, all shaped (..., dim), and returns the new values.
    """

    neighborhood: Orthotope
    offsets: tuple[Coord, ...]
    lam: tuple[float, ...]
    eta: float
    update: Callable | None = None
    stencil: Stencil | None = None
    dim: int = 1
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    enforce_contraction: bool = True

    def __post_init__(self):
        offs = tuple(_as_coord(u, self.neighborhood.kappa) for u in self.offsets)
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "lam", tuple(float(x) for x in self.lam))
        if not offs:
            raise ValueError("a model needs at least one neighbor offset")
        if len(self.lam) != len(offs):
            raise ValueError("one Lipschitz weight per offset")
        if any(x < 0 for x in self.lam) or self.eta < 0:
            raise ValueError("Lipschitz weights must be non-negative")
        for u in offs:
            if not self.neighborhood.contains(u):
                raise ValueError(f"offset {u} lies outside the neighborhood {self.neighborhood.delta}")
        if self.update is None and self.stencil is None:
            raise ValueError("a model needs an update function or a stencil")
        if self.stencil is not None and self.update is None:
            object.__setattr__(self, "update", _stencil_update(self.stencil))
        if self.enforce_contraction:
            report = check_contraction(self)
            if not report.passed:
                raise NonContractiveModel(
                    f"{self.name}: rho + eta = {report.total:.6g} >= 1 ({_fmt_extra(report.extra)})")

    @property
    def rho(self) -> float:
        return float(sum(self.lam))

    @property
    def kappa(self) -> int:
        return self.neighborhood.kappa

    @property
    def delta(self) -> tuple[int, ...]:
        return self.neighborhood.delta


def _fmt_extra(extra) -> str:
    return ", ".join(f"{k}={v:.6g}" for k, v in extra.items()) or "no further detail"


def _stencil_update(st: Stencil):
    act = ACTIVATIONS[kernels.ACTIVATION_CODES[st.activation]]

    def update(neighbors, eps):
        acc = None
        for w, x in zip(st.weights, neighbors):
            term = w * x
            acc = term if acc is None else acc + term
        return act(acc) + st.beta * eps

    return update


def check_contraction(model: FieldModel) -> ContractionReport:
    extra = {}
    if "op_norm" in model.params:
        extra["op_norm"] = model.params["op_norm"]
        extra["op_norm_plus_beta"] = model.params["op_norm"] + model.eta
    report = contraction_report(model.lam, model.eta, **extra)
    if "op_norm" in extra and extra["op_norm_plus_beta"] >= 1.0:
        return ContractionReport(report.rho, report.eta, report.total, False, extra)
    return report


def ar_model(alpha_left: float, alpha_right: float, beta: float, strict: bool = True) -> FieldModel:
    """X_t = alpha_left X_{t-1} + alpha_right X_{t+1} + beta eps_t on Z."""
    st = Stencil((float(alpha_left), float(alpha_right)), float(beta), "identity")
    return FieldModel(
        neighborhood=Orthotope((1,)),
        offsets=((-1,), (1,)),
        lam=(abs(alpha_left), abs(alpha_right)),
        eta=abs(beta),
        stencil=st,
        name="ar",
        params={"alpha_left": float(alpha_left), "alpha_right": float(alpha_right), "beta": float(beta)},
        enforce_contraction=strict,
    )


def stencil_model(weights: dict, beta: float, activation: str = "identity", strict: bool = True) -> FieldModel:
    """Scalar model act(sum_u w_u X_{t+u}) + beta eps_t for an arbitrary finite stencil."""
    table = {_as_coord(u): float(w) for u, w in weights.items()}
    offs = sorted(table)
    kappa = len(offs[0])
    if any(all(x == 0 for x in u) for u in offs):
        raise ValueError("the centre offset cannot be part of the stencil")
    delta = tuple(max(abs(u[i]) for u in offs) for i in range(kappa))
    w = tuple(table[u] for u in offs)
    return FieldModel(
        neighborhood=Orthotope(delta),
        offsets=tuple(offs),
        lam=tuple(abs(x) for x in w),
        eta=abs(beta),
        stencil=Stencil(w, float(beta), activation),
        name="stencil",
        params={"weights": dict(zip(offs, w)), "beta": float(beta), "activation": activation},
        enforce_contraction=strict,
    )


def brnn_model(A, beta: float, activation: str = "tanh", k: int = 1, strict: bool = True) -> FieldModel:
    """Bidirectional recurrent layer f(A [X_{t-k..t-1}, X_{t+1..t+k}]) + beta eps_t.

    ``A`` is p x 2kp.  The weight of each offset is the spectral norm of its p x p block, so
    rho is the sum of block norms; the whole-matrix operator norm is checked as well.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if activation not in kernels.ACTIVATION_CODES:
        raise ValueError(f"unknown activation {activation!r}")
    if k < 1:
        raise ValueError("window half-width k must be positive")
    p = A.shape[0]
    if A.shape[1] != 2 * k * p:
        raise ValueError(f"A must be p x 2kp = {p} x {2 * k * p}, got {A.shape}")
    offsets = tuple((j,) for j in range(-k, 0)) + tuple((j,) for j in range(1, k + 1))
    blocks = [A[:, j * p:(j + 1) * p] for j in range(2 * k)]
    lam = tuple(float(np.linalg.norm(b, 2)) for b in blocks)
    op_norm = float(np.linalg.norm(A, 2))
    params = {"A": A.tolist(), "beta": float(beta), "activation": activation, "k": k, "op_norm": op_norm}
    common = dict(neighborhood=Orthotope((k,)), offsets=offsets, lam=lam, eta=abs(beta), name="brnn",
                  params=params, enforce_contraction=strict)
    if p == 1:
        return FieldModel(stencil=Stencil(tuple(float(b[0, 0]) for b in blocks), float(beta), activation), **common)
    return FieldModel(update=_brnn_update(blocks, float(beta), activation), dim=p, **common)


def _brnn_update(blocks, beta, activation):
    act = ACTIVATIONS[kernels.ACTIVATION_CODES[activation]]
    p = blocks[0].shape[0]

    def update(neighbors, eps):
        # explicit accumulation keeps results independent of array shape (no BLAS blocking)
        out = np.zeros(eps.shape)
        for i in range(p):
            acc = None
            for blk, x in zip(blocks, neighbors):
                for j in range(p):
                    term = blk[i, j] * x[..., j]
                    acc = term if acc is None else acc + term
            out[..., i] = acc
        return act(out) + beta * eps

    return update


# ---------------------------------------------------------------- Picard evaluation


@dataclass(frozen=True)
class PicardConfig:
    iterations: int = 40
    window_margin: int = 0
    init_value: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one Picard iteration")
        if self.window_margin < 0:
            raise ValueError("window margin must be non-negative")

    @classmethod
    def for_model(cls, model: FieldModel, target_error: float = 1e-12, scale: float = 1.0, **kw) -> "PicardConfig":
        """Smallest K with rho**K * scale <= target_error."""
        rho = model.rho
        if rho == 0.0:
            return cls(iterations=1, **kw)
        k = math.ceil(math.log(target_error / scale) / math.log(rho))
        return cls(iterations=max(1, k), **kw)


def first_step_bound(model: FieldModel, init: float, eps_abs_max: float) -> float:
    """Upper bound on sup |X^1 - X^0| from the Lipschitz constants."""
    zeros = np.full((1, model.dim), float(init))
    f0 = model.update([zeros] * len(model.offsets), np.zeros((1, model.dim)))
    return float(np.max(np.linalg.norm(f0 - init, axis=-1))) + model.eta * float(eps_abs_max)


def picard_budget(model: FieldModel, cfg: PicardConfig, eps_abs_max: float) -> float:
    """A-posteriori bound rho^K / (1 - rho) * sup |X^1 - X^0| on the Picard truncation error."""
    rho = model.rho
    return rho**cfg.iterations / (1.0 - rho) * first_step_bound(model, cfg.init_value, eps_abs_max)


def run_pyramid(model: FieldModel, eps: np.ndarray, cfg: PicardConfig, trace: bool = False, backend=None):
    """K sweeps over a batch of boxes. eps is (R, *box, dim); returns ((R, *core, dim), residuals)."""
    K = cfg.iterations
    cells = int(np.prod(eps.shape))
    if cells > MAX_BOX_CELLS:
        raise MemoryError(f"evaluation window of {cells} cells exceeds the {MAX_BOX_CELLS} cell limit")
    if model.stencil is not None and model.dim == 1 and (backend or kernels.BACKEND) != "generic":
        st = model.stencil
        out, res = kernels.pyramid_stencil(
            eps[..., 0], model.delta, np.array(model.offsets), st.weights, st.beta,
            kernels.ACTIVATION_CODES[st.activation], K, cfg.init_value, trace,
            backend=None if backend in (None, "generic") else backend)
        out = out[..., None]
    else:
        out, res = _pyramid_generic(model, eps, K, cfg.init_value, trace)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{model.name}: non-finite value in Picard iteration")
    return out, res


def _pyramid_generic(model, eps, K, init, trace):
    R, shape = eps.shape[0], eps.shape[1:-1]
    delta = model.delta
    final = tuple(n - 2 * K * h for n, h in zip(shape, delta))
    if any(s < 1 for s in final):
        raise ValueError("box too small for the requested number of iterations")
    cur = np.full(eps.shape, float(init))
    resid = np.zeros((R, K)) if trace else None
    for k in range(1, K + 1):
        region = (slice(None),) + tuple(slice(k * h, n - k * h) for n, h in zip(shape, delta))
        nbrs = [cur[(slice(None),) + tuple(slice(k * h + o, n - k * h + o) for n, h, o in zip(shape, delta, u))]
                for u in model.offsets]
        val = model.update(nbrs, eps[region])
        if trace:
            gap = np.linalg.norm(val - cur[region], axis=-1)
            resid[:, k - 1] = gap.reshape(R, -1).max(axis=1)
        nxt = np.empty_like(cur)
        nxt[region] = val
        cur = nxt
    core = (slice(None),) + tuple(slice(K * h, n - K * h) for n, h in zip(shape, delta))
    return np.ascontiguousarray(cur[core]), resid


def residual_ratios_ok(resid: np.ndarray, limit: float, floor: float = 1e-12) -> bool:
    """Successive sweep-residual ratios stay below ``limit`` while the residual is above round-off."""
    for row in np.atleast_2d(resid):
        scale = max(float(row[0]), 1.0)
        for k in range(1, len(row)):
            if row[k - 1] > floor * scale and row[k] > limit * row[k - 1]:
                return False
    return True


def _centre_box(model, cfg, center):
    pad = tuple((cfg.iterations + cfg.window_margin) * h for h in model.delta)
    lo = tuple(c - p for c, p in zip(center, pad))
    shape = tuple(2 * p + 1 for p in pad)
    return lo, shape


def picard_trace(model: FieldModel, view: FieldView, center, cfg: PicardConfig, backend=None):
    """Value at ``center`` as (R, dim) together with the sweep residuals (R, K)."""
    center = _as_coord(center, model.kappa)
    lo, shape = _centre_box(model, cfg, center)
    out, res = run_pyramid(model, view.materialize(lo, shape), cfg, trace=True, backend=backend)
    mid = tuple(cfg.window_margin * h for h in model.delta)
    return out[(slice(None),) + mid], res


def picard_evaluate(model: FieldModel, view: FieldView, center, cfg: PicardConfig, backend=None):
    """K-th Picard iterate of the field built from ``view``, read at ``center``."""
    center = _as_coord(center, model.kappa)
    lo, shape = _centre_box(model, cfg, center)
    out, _ = run_pyramid(model, view.materialize(lo, shape), cfg, backend=backend)
    mid = tuple(cfg.window_margin * h for h in model.delta)
    return _squeeze(out[(slice(None),) + mid])


def evaluate_window(model: FieldModel, view: FieldView, window, cfg: PicardConfig, backend=None) -> dict:
    """picard_evaluate at every coordinate of ``window`` with one shared pyramid."""
    pts = [_as_coord(t, model.kappa) for t in window]
    if not pts:
        return {}
    pad = [(cfg.iterations + cfg.window_margin) * h for h in model.delta]
    lo, shape = bounding_box(pts, pad)
    out, _ = run_pyramid(model, view.materialize(lo, shape), cfg, backend=backend)
    core_lo = [a + cfg.iterations * h for a, h in zip(lo, model.delta)]
    return {t: _squeeze(out[(slice(None),) + tuple(c - a for c, a in zip(t, core_lo))]) for t in pts}


def reaches_filling(model: FieldModel, depth: int | None, truncation: Orthotope, cfg: PicardConfig) -> bool:
    """Whether a depth-``depth`` truncated view can differ from the exact field at its own site."""
    if depth is None:
        return False
    return any((cfg.iterations - 1) * h > depth * t for h, t in zip(model.delta, truncation.delta))


def evaluate_sites(model: FieldModel, source: InnovationSource, sites: Sequence[Coord], depth: int | None,
                   cfg: PicardConfig, swap: SwapVariable | None = None, truncation: Orthotope | None = None,
                   shared: bool | None = None, backend=None, max_cells: int = 4_000_000) -> np.ndarray:
    """H of each site's own view, read at that site: shape (R, len(sites), dim).

    ``depth=None`` means the exact field.  Otherwise site r reads the view truncated around r.
    When the truncation window covers the whole reading cone of the pyramid, every view agrees
    with the (possibly swapped) exact field on everything it reads, so one shared pyramid is
    used; the result is bit-identical to the per-site computation.
    """
    truncation = truncation or model.neighborhood
    sites = [_as_coord(s, model.kappa) for s in sites]
    R, dim = source.replicates, source.dim
    if not sites:
        return np.zeros((R, 0, dim))
    if shared is None:
        shared = not reaches_filling(model, depth, truncation, cfg)
    K = cfg.iterations
    pad = [K * h for h in model.delta]
    lo, shape = bounding_box(sites, pad)
    base = source.epsilon_box(lo, shape)

    if shared:
        marginal = swap if swap is not None and swap.kind == "marginal" else None
        if marginal is not None and depth is not None and not any(
                truncation.contains(marginal.coord, depth, r) for r in sites):
            marginal = None
        eps = FieldView.exact(source, swap=marginal).materialize(lo, shape, base)
        out, _ = run_pyramid(model, eps, cfg, backend=backend)
        core_lo = [a + p for a, p in zip(lo, pad)]
        idx = tuple(np.array([s[i] - core_lo[i] for s in sites]) for i in range(model.kappa))
        return out[(slice(None),) + idx]

    box = tuple(2 * p + 1 for p in pad)
    per_site = int(np.prod(box)) * R * dim
    group = max(1, max_cells // max(per_site, 1))
    values = np.empty((R, len(sites), dim))
    for start in range(0, len(sites), group):
        chunk = sites[start:start + group]
        stack = []
        for r in chunk:
            r_lo = tuple(c - p for c, p in zip(r, pad))
            rel = tuple(slice(a - b, a - b + n) for a, b, n in zip(r_lo, lo, box))
            view = FieldView(source, site=r, depth=depth, window=truncation, swap=swap)
            stack.append(view.materialize(r_lo, box, base[(slice(None),) + rel]))
        eps = np.stack(stack, axis=1).reshape((R * len(chunk),) + box + (dim,))
        out, _ = run_pyramid(model, eps, cfg, backend=backend)
        values[:, start:start + len(chunk)] = out.reshape(R, len(chunk), dim)
    return values
