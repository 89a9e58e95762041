"""Analytic quantities: chi-squared divergence, analysis thresholds, moment
checks, planted-distribution correlations and statistical dimension.

All evaluators take any universal constant ``c`` explicitly (default 1);
none of them is calibrated here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .detect import AmplifierConfig, amplified_expectation, amplify, mu_null
from .errors import NumericError, ParameterError, RegimeError
from .model import ModelParams, stream_rng

QUAD_TOL = 1e-9


@dataclass(frozen=True)
class DivergenceReport:
    value: float
    finite: bool
    method: str
    truncation: float | None = None
    formula: str = ""

    def to_dict(self) -> dict:
        return {"value": self.value if self.finite else "inf", "finite": self.finite,
                "method": self.method, "truncation": self.truncation, "formula": self.formula}


def chi2_factor(sigma0_sq: float, sigma1_sq: float, mu: float = 0.0) -> float:
    """Per-coordinate correlation factor beta = 1 + chi^2(p1 || p0)."""
    if sigma1_sq >= 2.0 * sigma0_sq:
        raise RegimeError("chi^2 diverges for sigma1^2 >= 2 sigma0^2")
    gap = 2.0 * sigma0_sq - sigma1_sq
    return sigma0_sq / (math.sqrt(sigma1_sq) * math.sqrt(gap)) * math.exp(mu * mu / gap)


def chi2_closed(sigma0_sq: float, sigma1_sq: float, mu: float = 0.0) -> DivergenceReport:
    if sigma0_sq <= 0 or sigma1_sq <= 0:
        raise ParameterError("variances must be positive")
    formula = "sigma0^2/(sigma1*sqrt(2 sigma0^2 - sigma1^2)) * exp(mu^2/(2 sigma0^2 - sigma1^2)) - 1"
    if sigma1_sq >= 2.0 * sigma0_sq:
        return DivergenceReport(math.inf, False, "closed_form", formula=formula)
    return DivergenceReport(chi2_factor(sigma0_sq, sigma1_sq, mu) - 1.0, True, "closed_form",
                            formula=formula)


def chi2_quadrature(sigma0_sq: float, sigma1_sq: float, mu: float = 0.0,
                    truncation: float | None = None) -> float:
    """Integral of p1^2/p0 minus 1, optionally for the laws clamped to [-M, M].

    Clamping moves the mass outside [-M, M] onto the endpoints, so each
    endpoint adds P1(tail)^2 / P0(tail).
    """
    if sigma0_sq <= 0 or sigma1_sq <= 0:
        raise ParameterError("variances must be positive")
    s0, s1 = math.sqrt(sigma0_sq), math.sqrt(sigma1_sq)

    def log_ratio_sq(x):
        return (2.0 * stats.norm.logpdf(x, mu, s1) - stats.norm.logpdf(x, 0.0, s0))

    f = lambda x: math.exp(log_ratio_sq(x))
    if truncation is None:
        if sigma1_sq >= 2.0 * sigma0_sq:
            raise RegimeError("untruncated chi^2 diverges for sigma1^2 >= 2 sigma0^2")
        # p1^2/p0 is a Gaussian bump with this centre and variance; its width
        # blows up as sigma1^2 -> 2 sigma0^2, so the window follows it.
        var_eff = sigma0_sq * sigma1_sq / (2.0 * sigma0_sq - sigma1_sq)
        centre = 2.0 * mu * var_eff / sigma1_sq
        half = 14.0 * max(s0, s1, math.sqrt(var_eff))
        lo, hi = centre - half, centre + half
        pieces = [(lo, centre), (centre, hi)]
        tails = 0.0
    else:
        M = float(truncation)
        if M <= 0:
            raise ParameterError("truncation must be positive")
        pieces = [(-M, 0.0), (0.0, M)]
        right1, right0 = stats.norm.logsf(M, mu, s1), stats.norm.logsf(M, 0.0, s0)
        left1, left0 = stats.norm.logcdf(-M, mu, s1), stats.norm.logcdf(-M, 0.0, s0)
        tails = math.exp(2 * right1 - right0) + math.exp(2 * left1 - left0)
    total = 0.0
    for a, b in pieces:
        val, err = integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-12, limit=400)
        if err > max(QUAD_TOL, 1e-11 * abs(val)):
            raise NumericError(f"chi^2 quadrature error {err:.3g} on [{a}, {b}]")
        total += val
    return total + tails - 1.0


def predict_detectability(params: ModelParams) -> tuple[bool, float]:
    """Heuristic: detectable when sqrt(chi^2) k / sqrt(n) >= 1.

    Returns (flag, margin); margin is infinite when chi^2 diverges.  This is
    an intuition, not a guarantee.
    """
    rep = chi2_closed(params.sigma0_sq, params.sigma1_sq, params.mu)
    if not rep.finite:
        return True, math.inf
    margin = math.sqrt(rep.value) * params.k / math.sqrt(params.n)
    return margin >= 1.0, margin


@dataclass
class ThresholdReport:
    regime: str
    c: float
    t: float
    t2: float | None = None
    t_i: list[float] | None = None
    signal: float | None = None
    holds: bool | None = None
    formulas: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"regime": self.regime, "c": self.c, "t": self.t, "t2": self.t2, "t_i": self.t_i,
                "signal": self.signal, "holds": self.holds, "formulas": self.formulas,
                "notes": self.notes}


def mu_planted(cfg: AmplifierConfig, sigma_sq_planted: float) -> float:
    """E[B] for a planted entry x ~ N(0, sigma_sq_planted)."""
    return amplified_expectation(cfg, sigma_sq_planted)


def mu_planted_lower_shape(cfg: AmplifierConfig, sigma_sq_planted: float) -> float:
    """Shape of the analytic lower bound on E[B] for a planted entry.

    L in the critical regime, (sigma0/M) exp(gamma M^2 - M^2/(2 sigma^2))
    otherwise.  E[B] / shape is the implied constant.
    """
    if cfg.regime == "critical":
        return cfg.L
    M = cfg.M
    return math.sqrt(cfg.sigma0_sq) / M * math.exp(cfg.gamma * M * M - M * M / (2.0 * sigma_sq_planted))


def threshold_formulas(params: ModelParams, cfg: AmplifierConfig, c: float = 1.0,
                       taus: Sequence[float] | None = None,
                       planted_variances: Sequence[Sequence[float]] | None = None) -> ThresholdReport:
    """Evaluate the deviation thresholds of the row-sum analysis verbatim.

    The dominance check compares the expected planted excess with 100 times
    the deviation allowances, as in the analysis.
    """
    n, N, k = params.n, params.N, params.k
    s0 = params.sigma0_sq
    ln_n, ln_N = math.log(n), math.log(N)
    m = 4.0 * ln_N
    M, g = cfg.M, cfg.gamma
    if cfg.regime == "critical":
        L = cfg.L
        t = c * math.sqrt(n) * ln_n ** 0.75
        t2 = c * (ln_n * math.exp(L * L / 4.0) + math.sqrt(k * ln_n) / math.sqrt(L) * math.exp(L * L / 8.0))
        signal = k * L
        return ThresholdReport(
            "critical", c, t, t2=t2, signal=signal, holds=signal > 100.0 * (t + t2),
            formulas={"t": "c sqrt(n) (ln n)^(3/4)",
                      "t2": "c (ln n exp(L^2/4) + sqrt(k ln n)/sqrt(L) exp(L^2/8))",
                      "check": "k L > 100 (t + t2)"})
    cap = math.exp(g * M * M)
    eps = cfg.eps
    t = c * ln_N * cap * (1.0 + math.sqrt(c * n * math.sqrt(s0)) / math.sqrt(m * M * eps)
                          * math.exp(-M * M / (4.0 * s0)))
    formulas = {"t": "c ln N exp(gamma M^2) (1 + sqrt(c n sigma0)/sqrt(m M eps) exp(-M^2/(4 sigma0^2))),"
                     " m = 4 ln N"}
    mu0 = mu_null(cfg)
    if cfg.regime == "supercritical":
        s1 = params.sigma1_sq
        t2 = c * ln_N * cap * (1.0 + c * math.sqrt(k) / (math.sqrt(ln_N) * ln_n ** 0.25)
                               * math.exp(-M * M / (4.0 * s1)))
        signal = k * mu_planted(cfg, s1)
        formulas["t2"] = "c ln N exp(gamma M^2) (1 + c sqrt(k)/(sqrt(ln N) (ln n)^(1/4)) exp(-M^2/(4 sigma1^2)))"
        formulas["check"] = "k mu1 > 100 (t + t2 + mu0)"
        notes = ["the second dominance inequality uses sqrt(n) inside t while the planted deviation "
                 "uses sqrt(k); both are evaluated as displayed"]
        return ThresholdReport("supercritical", c, t, t2=t2, signal=signal,
                               holds=signal > 100.0 * (t + t2 + mu0), formulas=formulas, notes=notes)
    if taus is None or planted_variances is None:
        raise ParameterError("general regime needs per-hub tau values and planted variances")
    t_i = [c * ln_N * cap * (1.0 + math.sqrt(ti) / (math.sqrt(ln_N) * ln_n ** 0.25)) for ti in taus]
    excess = [float(sum(mu_planted(cfg, v) - mu0 for v in row)) for row in planted_variances]
    formulas["t_i"] = "c ln N exp(gamma M^2) (1 + sqrt(tau_i)/(sqrt(ln N) (ln n)^(1/4)))"
    formulas["check"] = "sum_j (mu_ij - mu0) - t_i - t > 100 t for every hub"
    holds = all(e - ti - t > 100.0 * t for e, ti in zip(excess, t_i))
    return ThresholdReport("general", c, t, t_i=t_i, signal=min(excess) if excess else None,
                           holds=holds, formulas=formulas)


def _moment_shape_log(dist: str, l: int, cfg: AmplifierConfig, sigma_sq: float | None) -> float:
    """log of the analytic bound shape for E[(B - mu)^l] (constant omitted)."""
    M, g, s0 = cfg.M, cfg.gamma, cfg.sigma0_sq
    if cfg.regime == "critical":
        L = cfg.L
        if dist == "null":
            return math.log(L) if l == 2 else -math.log(L) + L * L * (l - 2) / 4.0
        return -math.log(L) + L * L * (l - 1) / 4.0
    if dist == "null":
        return 0.5 * math.log(s0) - math.log(M * cfg.eps) + M * M * (g * l - 1.0 / (2.0 * s0))
    return 0.5 * math.log(s0) - math.log(M) + M * M * (g * l - 1.0 / (2.0 * sigma_sq))


@dataclass(frozen=True)
class MomentCheck:
    l: int
    estimate: float
    stderr: float
    exact: float
    log_shape: float
    implied_c: float


def moment_bound_check(dist: str, l: int, cfg: AmplifierConfig, trials: int = 100_000,
                       seed: int = 0, sigma_sq: float | None = None) -> MomentCheck:
    """Monte Carlo E[(B - mu)^l] against the analytic bound shape.

    ``dist`` is "null" or "planted" (then ``sigma_sq`` is the planted
    variance; defaults to cfg.sigma1_sq).  The shape is handled in log-space
    and the implied constant is estimate / shape.
    """
    if l < 2:
        raise ParameterError("l must be >= 2")
    if dist == "null":
        if l >= 4 and l % 2:
            raise ParameterError("null-entry bound for l >= 4 is stated for even l")
        var = cfg.sigma0_sq
    elif dist == "planted":
        var = cfg.sigma1_sq if sigma_sq is None else sigma_sq
    else:
        raise ParameterError(f"unknown dist {dist!r}")
    mu = amplified_expectation(cfg, var)
    rng = stream_rng(seed)
    x = rng.standard_normal(trials) * math.sqrt(var)
    dev = (amplify(x, cfg) - mu) ** l
    est, se = float(dev.mean()), float(dev.std(ddof=1) / math.sqrt(trials))
    exact = amplified_expectation(cfg, var, lambda b: (b - mu) ** l)
    log_shape = _moment_shape_log(dist, l, cfg, var)
    return MomentCheck(l, est, se, exact, log_shape, est / math.exp(log_shape))


@dataclass(frozen=True)
class ConcentrationCheck:
    m: int
    estimate: float
    stderr: float
    bound: float
    ratio: float


def concentration_check(variances: Sequence[float], m: int, cfg: AmplifierConfig,
                        trials: int = 20_000, seed: int = 0, c: float = 1.0) -> ConcentrationCheck:
    """E[(sum_j X_j)^m] for X_j = B_j - E B_j against the moment inequality
    (c m)^m [sum_l (1/l^2) (sum_j E X_j^(2l) / m)^(1/l)]^(m/2).
    """
    if m not in (2, 4):
        raise ParameterError("m must be 2 or 4")
    var = np.asarray(variances, dtype=np.float64)
    uniq = np.unique(var)
    mus = {float(v): amplified_expectation(cfg, float(v)) for v in uniq}
    mu_vec = np.array([mus[float(v)] for v in var])
    rng = stream_rng(seed)
    sums = np.empty(trials)
    batch = max(1, 2_000_000 // max(1, var.size))
    for start in range(0, trials, batch):
        b = min(batch, trials - start)
        x = rng.standard_normal((b, var.size)) * np.sqrt(var)
        sums[start:start + b] = (amplify(x, cfg) - mu_vec).sum(axis=1)
    vals = sums ** m
    est, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials))
    inner = 0.0
    for l in range(1, m // 2 + 1):
        tot = sum(amplified_expectation(cfg, float(v), lambda b, mu=mus[float(v)]: (b - mu) ** (2 * l))
                  * int(np.sum(var == v)) for v in uniq)
        inner += (tot / m) ** (1.0 / l) / l ** 2
    bound = (c * m) ** m * inner ** (m / 2)
    return ConcentrationCheck(m, est, se, bound, est / bound)


@dataclass(frozen=True)
class CorrelationParams:
    n: int
    k: int
    r: int
    sigma0_sq: float = 1.0
    sigma1_sq: float = 1.5
    mu: float = 0.0
    C: float = 2.0

    def __post_init__(self) -> None:
        if not 0 <= self.r <= self.k <= self.n:
            raise ParameterError(f"need 0 <= r <= k <= n, got r={self.r}, k={self.k}, n={self.n}")

    @property
    def alpha_scale(self) -> float:
        return self.k ** 2 / self.n ** 2

    @property
    def alpha_excess(self) -> float:
        return self.sigma1_sq / self.sigma0_sq - 2.0

    @property
    def beta(self) -> float:
        return chi2_factor(self.sigma0_sq, self.sigma1_sq, self.mu)


def pairwise_corr_subcritical(cp: CorrelationParams) -> float:
    """(k/n)^2 (beta^r - 1) with beta = 1 + chi^2(p1 || p0)."""
    if cp.sigma1_sq >= 2.0 * cp.sigma0_sq:
        raise RegimeError("correlation integral diverges for sigma1^2 >= 2 sigma0^2")
    return cp.alpha_scale * (cp.beta ** cp.r - 1.0)


def pairwise_corr_truncated(cp: CorrelationParams, regime: str) -> float:
    """Upper bound on the correlation of the clamped laws at or just above 2 sigma0^2."""
    if cp.k < 2:
        raise ParameterError("need k >= 2")
    if regime == "at_threshold":
        if abs(cp.sigma1_sq - 2.0 * cp.sigma0_sq) > 1e-9 * cp.sigma0_sq:
            raise ParameterError("at_threshold needs sigma1^2 = 2 sigma0^2")
        return cp.alpha_scale * (cp.C * math.log(cp.k) / 2.0) ** (cp.r / 2.0)
    if regime == "above_threshold":
        a = cp.alpha_excess
        if a <= 0:
            raise ParameterError("above_threshold needs sigma1^2 > 2 sigma0^2")
        return cp.alpha_scale * float(cp.k) ** (cp.C * a * cp.r / 4.0)
    raise ParameterError(f"unknown regime {regime!r}")


def pairwise_corr_mc(cp: CorrelationParams, samples: int = 200_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo of E_F[(F_S/F - 1)(F_T/F - 1)] for |S| = |T| = k, |S & T| = r.

    Samples the coordinates of S u T from the reference law and evaluates
    the likelihood ratios of the jointly planted column laws directly.
    Returns (estimate, standard error).
    """
    k, r = cp.k, cp.r
    w = cp.k / cp.n
    s0, s1 = math.sqrt(cp.sigma0_sq), math.sqrt(cp.sigma1_sq)
    width = 2 * k - r
    rng = stream_rng(seed)
    x = rng.standard_normal((samples, width)) * s0
    log_lr = stats.norm.logpdf(x, cp.mu, s1) - stats.norm.logpdf(x, 0.0, s0)
    S = np.arange(k)
    T = np.arange(k - r, 2 * k - r)
    fs = w * (np.exp(log_lr[:, S].sum(axis=1)) - 1.0)
    ft = w * (np.exp(log_lr[:, T].sum(axis=1)) - 1.0)
    prod = fs * ft
    return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(samples))


def avg_corr_bound(alpha_scale: float, beta: float, ell: int, n: int | None = None,
                   k: int | None = None) -> tuple[float, float | None]:
    """2 alpha beta^ell, and (given n, k) the family size needed for it to apply,
    2 C(n,k) / (ell! (n/(2k^2))^ell).
    """
    if beta <= 1:
        raise ParameterError("beta must exceed 1")
    if ell < 1:
        raise ParameterError("ell must be >= 1")
    size = None
    if n is not None and k is not None:
        if 2 * k * k >= n:
            warnings.warn("averaging bound assumes 2k^2 < n", stacklevel=2)
        size = 2.0 * math.comb(n, k) / (math.factorial(ell) * (n / (2.0 * k * k)) ** ell)
    return 2.0 * alpha_scale * beta ** ell, size


def sda_value(n: int, k: int, ell: int) -> int:
    """floor(ell! (n/k^2)^ell / 2), computed exactly."""
    if ell < 0:
        raise ParameterError("ell must be non-negative")
    if n <= k * k:
        warnings.warn("n <= k^2: the statistical-dimension bound is vacuous", stacklevel=2)
    value = Fraction(math.factorial(ell)) * Fraction(n, k * k) ** ell / 2
    return math.floor(value)


def _log_sda(n: float, k: float, ell: int) -> float:
    return math.lgamma(ell + 1) + ell * math.log(n / (k * k)) - math.log(2.0)


@dataclass
class SdaReport:
    case: str
    n: int
    delta: float
    k: float
    ell: int
    ell_raw: float
    gamma_bar: float
    log10_sda: float
    sda: int | None
    vstat_param: float
    vstat_nominal: float
    query_lower_bound: float
    one_stat_bound: float
    formula: str
    degenerate: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def query_bounds(case: str, n: int, delta: float, *, eps: float | None = None, C: float = 2.0,
                 alpha: float | None = None, mu: float | None = None, sigma_sq: float = 1.0,
                 ell: int | None = None, nu: float = 0.75) -> SdaReport:
    """Average-correlation bound, statistical dimension and query-count lower bounds.

    k = n^(0.5 - delta) is kept real-valued.  ell follows the per-case
    choice (floored to an integer >= 1) unless given explicitly.
    """
    if not 0 < delta < 0.5:
        raise ParameterError("delta must lie in (0, 0.5)")
    k = n ** (0.5 - delta)
    scale = k * k / (n * n)
    ln_n = math.log(n)
    degenerate = False
    if case == "zero_mu_subcritical":
        if eps is None or not 0 < eps < 1:
            raise ParameterError("zero_mu_subcritical needs eps in (0, 1)")
        ell_raw = delta * ln_n / math.log(1.0 / (eps * (1.0 - eps)))
        base = 1.0 / (4.0 * eps * (1.0 - eps))
        degenerate = base == 1.0
        formula = "2 (k^2/n^2) (1/(4 eps (1-eps)))^(ell/2)"
        gb = lambda l: 2.0 * scale * base ** (l / 2.0)
    elif case == "at_threshold":
        if k <= math.e:
            raise ParameterError("at_threshold needs ln ln k > 0")
        ell_raw = delta * ln_n / (2.0 * math.log(math.log(k)))
        formula = "2 (k^2/n^2) (C ln k / 2)^(ell/2)"
        gb = lambda l: 2.0 * scale * (C * math.log(k) / 2.0) ** (l / 2.0)
    elif case == "slightly_above":
        if alpha is None or alpha <= 0:
            raise ParameterError("slightly_above needs alpha > 0")
        ell_raw = 8.0 * delta / (C * alpha)
        formula = "2 (k^2/n^2) k^(C alpha ell / 4)"
        gb = lambda l: 2.0 * scale * k ** (C * alpha * l / 4.0)
    elif case == "equal_sigmas":
        if mu is None:
            raise ParameterError("equal_sigmas needs mu")
        ell_raw = 2.0 if ell is None else float(ell)
        formula = "2 (k^2/n^2) exp(mu^2 ell / sigma^2)"
        gb = lambda l: 2.0 * scale * math.exp(mu * mu * l / sigma_sq)
    else:
        raise ParameterError(f"unknown case {case!r}")
    ell_int = int(ell) if ell is not None else max(1, math.floor(ell_raw))
    gamma_bar = gb(ell_int)
    log_d = _log_sda(n, k, ell_int)
    sda = math.floor(math.exp(log_d)) if log_d < 700 else None
    d = math.exp(min(log_d, 700.0))
    return SdaReport(
        case=case, n=n, delta=delta, k=k, ell=ell_int, ell_raw=ell_raw, gamma_bar=gamma_bar,
        log10_sda=log_d / math.log(10.0), sda=sda, vstat_param=1.0 / (3.0 * gamma_bar),
        vstat_nominal=n ** (1.0 + delta), query_lower_bound=(2.0 * nu - 1.0) * d,
        one_stat_bound=min(d, 1.0 / gamma_bar), formula=formula, degenerate=degenerate)
