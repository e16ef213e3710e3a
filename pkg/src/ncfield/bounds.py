"""Closed-form bounds: the shell-sum majorant Upsilon, approximation and swap bounds, and the
McDiarmid deviation bounds for the truncated and exact statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from scipy.special import gammainc

from .lattice import IndexSet, Orthotope, bound_counts


def _check_domain(kappa, rho, d=None):
    if int(kappa) != kappa or kappa < 1:
        raise ValueError(f"kappa must be a positive integer, got {kappa!r}")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho!r}")
    if d is not None and d < 0:
        raise ValueError(f"depth must be non-negative, got {d!r}")


def _scale_constant(kappa: int, log_inv: float) -> float:
    # (kappa - 1)! / ln(1/rho)^kappa, computed in logs so rho near 1 cannot raise
    try:
        return math.exp(math.lgamma(kappa) - kappa * math.log(log_inv))
    except OverflowError:
        return math.inf


def _peak(kappa: int, log_inv: float) -> float:
    # largest summand c^(kappa-1) rho^c over real c; 0**0 is 1 for kappa = 1
    base = (kappa - 1) / (log_inv * math.e)
    try:
        return base ** (kappa - 1)
    except OverflowError:
        return math.inf


def _head(kappa: int, x: float, log_inv: float) -> float:
    # 1 - rho^x sum_{i<kappa} (x ln(1/rho))^i / i!  is the regularized lower incomplete gamma;
    # scipy evaluates it without the cancellation of the direct form
    return float(gammainc(kappa, x * log_inv))


def upsilon(kappa: int, rho: float, d: float) -> float:
    """Majorant of sum_{c=1}^{d} c^(kappa-1) rho^c, piecewise around the summand's peak."""
    _check_domain(kappa, rho, d)
    kappa = int(kappa)
    log_inv = -math.log(rho)
    split = math.floor((kappa - 1) / log_inv)
    scale = _scale_constant(kappa, log_inv)
    if d < split:
        return scale * _head(kappa, d + 1, log_inv)
    if d == split:
        return scale * _head(kappa, split, log_inv) + _peak(kappa, log_inv)
    return scale * _head(kappa, d, log_inv) + _peak(kappa, log_inv)


def upsilon_sup(kappa: int, rho: float) -> float:
    """Depth-free bound on upsilon(kappa, rho, d)."""
    _check_domain(kappa, rho)
    kappa = int(kappa)
    log_inv = -math.log(rho)
    return _scale_constant(kappa, log_inv) + _peak(kappa, log_inv)


def shell_sum(kappa: int, rho: float, d: int) -> float:
    """The exact finite sum sum_{c=1}^{d} c^(kappa-1) rho^c."""
    _check_domain(kappa, rho, d)
    return math.fsum(c ** (kappa - 1) * rho**c for c in range(1, int(d) + 1))


@dataclass(frozen=True)
class BoundParams:
    """Counts and constants shared by the deviation bounds.

    n_b counts the model neighborhood, n_bbar the statistic neighborhood, n_d its d-dilation;
    N1 and N2 are the unions of those neighborhoods over the index set.
    """

    n: int
    n_b: int
    n_bbar: int
    n_d: int
    N1: int
    N2: int
    kappa: int
    rho: float
    v_m: float
    v_inf: float
    d: int

    def __post_init__(self):
        for name in ("n", "n_b", "n_bbar", "n_d", "N1", "N2"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive count")
        _check_domain(self.kappa, self.rho, self.d)
        if self.v_m < 0 or self.v_inf < 0:
            raise ValueError("moment constants must be non-negative")
        if not self.n <= self.N1 <= self.n * self.n_bbar:
            raise ValueError(f"need n <= N1 <= n * n_bbar, got n={self.n}, N1={self.N1}")
        if self.N2 < self.n or (self.d >= 1 and self.N2 < self.N1):
            raise ValueError(f"need N1 <= N2 for d >= 1, got N1={self.N1}, N2={self.N2}")

    @classmethod
    def from_geometry(cls, I: IndexSet, model_window: Orthotope, stat_window: Orthotope, d: int,
                      rho: float, v_m: float, v_inf: float) -> "BoundParams":
        c = bound_counts(I, model_window, stat_window, d)
        return cls(n=c.n, n_b=c.n_b, n_bbar=c.n_bbar, n_d=c.n_d, N1=c.N1, N2=c.N2,
                   kappa=model_window.kappa, rho=rho, v_m=v_m, v_inf=v_inf, d=d)

    def echo(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundReport:
    name: str
    value: float
    clamped: float | None = None
    condition: str = ""
    condition_met: bool = True
    params: dict = field(default_factory=dict)


def _probability(name, raw, condition="", met=True, params=None) -> BoundReport:
    return BoundReport(name, raw, min(raw, 1.0), condition, met, params or {})


# ---------------------------------------------------------------- approximation and swaps


def site_approx_bound(rho: float, d: int, v: float) -> float:
    """Bound on || H(xi) - H(xi~^[d]) ||: rho^(d+1) * v."""
    return rho ** (d + 1) * v


def shell_swap_bound(rho: float, c: int, v: float) -> float:
    """Bound on the change of H at a site when an innovation in its shell c is replaced."""
    return rho**c * v


def approx_error_bound(params: BoundParams, almost_sure: bool = False) -> BoundReport:
    """n * n_bbar * rho^(d+1) * V, with V = V_m (moment form) or V_inf (almost-sure form)."""
    v = params.v_inf if almost_sure else params.v_m
    value = params.n * params.n_bbar * params.rho ** (params.d + 1) * v
    return BoundReport("approx_as" if almost_sure else "approx_moment", value, params=params.echo())


def filling_swap_bound(params: BoundParams, almost_sure: bool = True) -> float:
    """Change of S~ when one filling variable is replaced: n_bbar^2 * rho^(d+1) * V."""
    v = params.v_inf if almost_sure else params.v_m
    return params.n_bbar**2 * params.rho ** (params.d + 1) * v


def marginal_swap_bound(params: BoundParams, almost_sure: bool = True) -> float:
    """Change of S~ when one marginal is replaced.

    Almost surely: n_bbar * n_b * kappa * V_inf * Upsilon(d).  In m-norm the exact shell sum
    replaces Upsilon.
    """
    if almost_sure:
        return params.n_bbar * params.n_b * params.kappa * params.v_inf * upsilon(params.kappa, params.rho, params.d)
    return params.n_bbar * params.n_b * params.kappa * params.v_m * shell_sum(params.kappa, params.rho, params.d)


# ---------------------------------------------------------------- deviation


def deviation_denominator(params: BoundParams) -> float:
    p = params
    ups = upsilon(p.kappa, p.rho, p.d)
    return (p.n_bbar * p.v_inf) ** 2 * (p.N1 * (p.n_bbar * p.rho ** (p.d + 1)) ** 2 + p.N2 * (p.n_b * p.kappa * ups) ** 2)


def _mcdiarmid(eps: float, denom: float) -> float:
    if denom == 0.0:
        return 0.0 if eps != 0.0 else 2.0
    if math.isinf(denom):
        return 2.0
    return 2.0 * math.exp(-2.0 * eps * eps / denom)


def deviation_bound_tilde(epsilon: float, params: BoundParams) -> BoundReport:
    """P(|S~ - E S~| >= epsilon) <= 2 exp(-2 eps^2 / denominator)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    raw = _mcdiarmid(epsilon, deviation_denominator(params))
    return _probability("deviation_tilde", raw, "epsilon > 0", True, params.echo())


def s_threshold(params: BoundParams) -> float:
    """Smallest epsilon for which the bound on S applies: 2 n n_bbar rho^(d+1) V_inf."""
    return 2.0 * params.n * params.n_bbar * params.rho ** (params.d + 1) * params.v_inf


def deviation_bound_s(epsilon: float, params: BoundParams) -> BoundReport:
    """Bound for S itself: the truncated bound at epsilon minus the approximation shift.

    Below the threshold the shifted formula is still returned, with ``condition_met`` False.
    """
    tau = s_threshold(params)
    shifted = epsilon - tau
    raw = _mcdiarmid(shifted, deviation_denominator(params))
    return _probability("deviation_s", raw, f"epsilon >= {tau!r}", epsilon >= tau, params.echo())


def epsilon_for_probability(prob: float, params: BoundParams) -> float:
    """Deviation level at which the truncated bound equals ``prob``."""
    if not 0.0 < prob < 2.0:
        raise ValueError("probability level must lie in (0, 2)")
    return math.sqrt(deviation_denominator(params) * math.log(2.0 / prob) / 2.0)


def normalized_bound(epsilon: float, params: BoundParams, shift: str = "divided") -> BoundReport:
    """Bound on P(|S - E S| / n >= epsilon) with N2 <= N1 n_d and n_d <= d^kappa n_b.

    ``shift="divided"`` subtracts 2 n_bbar rho^(d+1) V_inf / n, the customary form;
    ``shift="exact"`` subtracts 2 n_bbar rho^(d+1) V_inf, which is what dividing the
    bound on S by n gives.
    """
    p = params
    tau = 2.0 * p.n_bbar * p.rho ** (p.d + 1) * p.v_inf
    if shift == "divided":
        tau /= p.n
    elif shift != "exact":
        raise ValueError("shift must be 'divided' or 'exact'")
    ups = upsilon(p.kappa, p.rho, p.d)
    denom = (p.n_bbar * p.v_inf) ** 2 * p.N1 * (
        (p.n_bbar * p.rho ** (p.d + 1)) ** 2 + p.d**p.kappa * p.n_b**3 * (p.kappa * ups) ** 2)
    raw = _mcdiarmid(p.n * (epsilon - tau), denom)
    return _probability(f"normalized_{shift}", raw, f"epsilon >= {tau!r}", epsilon >= tau, p.echo())


def recommend_d(n: int, kappa: int) -> int:
    """Integer depth ceil(ln(n)^(1/kappa))."""
    if n < 2:
        raise ValueError("need n >= 2")
    return max(1, math.ceil(math.log(n) ** (1.0 / kappa) - 1e-12))


def log_depth_bound(epsilon: float, params: BoundParams) -> tuple[int, BoundReport]:
    """The normalized bound at depth ln(n)^(1/kappa), with rho^d relaxed to 1.

    Upsilon is evaluated at the real depth ln(n)^(1/kappa); the returned integer depth is the
    one a simulation would use.
    """
    p = params
    d_real = math.log(p.n) ** (1.0 / p.kappa)
    tau = 2.0 * p.n_bbar * p.rho * p.v_inf / p.n
    ups = upsilon(p.kappa, p.rho, d_real)
    denom = (p.n_bbar * p.v_inf) ** 2 * p.N1 * (
        (p.n_bbar * p.rho) ** 2 + math.log(p.n) * p.n_b**3 * (p.kappa * ups) ** 2)
    raw = _mcdiarmid(p.n * (epsilon - tau), denom)
    echo = p.echo() | {"d_real": d_real}
    return recommend_d(p.n, p.kappa), _probability("log_depth", raw, f"epsilon >= {tau!r}", epsilon >= tau, echo)


def legacy_deviation_bound(epsilon: float, params: BoundParams) -> BoundReport:
    """Earlier, coarser bound for the empirical mean S~/n, kept for comparison only.

    2 exp(-2 eps^2 n^2 / ((N1 + N2) (L n_bbar V_inf)^2)) with L = min(n, n_bbar n_d).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    p = params
    L = min(p.n, p.n_bbar * p.n_d)
    denom = (p.N1 + p.N2) * (L * p.n_bbar * p.v_inf) ** 2
    return _probability("legacy_deviation", _mcdiarmid(epsilon * p.n, denom), "epsilon > 0", True, p.echo() | {"L": L})
