"""Statistical-query oracles over hidden-hubs column laws, and the
single-query hub detector.

Oracles answer from an expectation that is either supplied exactly (a
callback) or estimated by Monte Carlo.  Estimation keeps sampling until its
standard error is below a tenth of the tolerance; the perturbation is then
shrunk by four standard errors, so answers stay inside the tolerance band
of the true expectation with overwhelming probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .detect import AmplifierConfig, amplify, mu_null
from .errors import OracleError, ParameterError
from .model import HubColumnLaw, ModelParams, stream_rng

KINDS = ("STAT", "VSTAT", "ONE_STAT")
MODES = ("exact", "random_uniform", "adversarial_sign")

_ESTIMATE_STREAM = 0x455354
_PERTURB_STREAM = 0x505254
_ONE_STAT_STREAM = 0x4F4E45
_CALIBRATE_STREAM = 0x43414C

Query = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OracleSpec:
    kind: str
    tolerance_param: float
    perturbation_mode: str = "exact"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown oracle kind {self.kind!r}")
        if self.perturbation_mode not in MODES:
            raise ParameterError(f"unknown perturbation mode {self.perturbation_mode!r}")
        if self.kind == "STAT" and not 0 <= self.tolerance_param <= 1:
            raise ParameterError("STAT tolerance must lie in [0, 1]")
        if self.kind == "VSTAT" and (self.tolerance_param < 1 or int(self.tolerance_param) != self.tolerance_param):
            raise ParameterError("VSTAT parameter t must be a positive integer")


@dataclass(frozen=True)
class Expectation:
    value: float
    stderr: float = 0.0
    samples: int = 0


@dataclass(frozen=True)
class OracleAnswer:
    value: float
    expectation: float
    tolerance: float
    stderr: float
    samples: int


@dataclass(frozen=True)
class Decision:
    verdict: str
    query_count: int
    query_value: float
    threshold_used: float
    tolerance: float = math.nan

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "query_count": self.query_count,
                "query_value": self.query_value, "threshold_used": self.threshold_used,
                "tolerance": self.tolerance}


def _is_planted(dist) -> bool:
    return bool(getattr(dist, "planted", False))


def _mc_mean(law: HubColumnLaw, f: Query, component: str, rng: np.random.Generator,
             target_se: Callable[[float], float], min_samples: int, max_samples: int,
             batch: int) -> Expectation:
    total = total_sq = 0.0
    count = 0
    while True:
        vals = np.asarray(f(law.sample(rng, batch, component)), dtype=np.float64)
        total += float(vals.sum())
        total_sq += float(np.dot(vals, vals))
        count += vals.size
        mean = total / count
        var = max(total_sq / count - mean * mean, 0.0)
        # floor keeps a run of all-zero answers from claiming zero error
        se = math.sqrt(max(var, 1.0 / count) / count)
        if count >= min_samples and se <= target_se(mean):
            return Expectation(mean, se, count)
        if count >= max_samples:
            raise OracleError(f"Monte Carlo error {se:.3g} still above budget {target_se(mean):.3g} "
                              f"after {count} samples")


def expectation(dist, f: Query, target_se: Callable[[float], float], seed: int = 0,
                min_samples: int = 20_000, max_samples: int = 2_000_000,
                batch: int = 5_000) -> Expectation:
    """E[f] under ``dist``: exact for a callback, Monte Carlo for a column law.

    A jointly coupled planted law is estimated per mixture component and
    recombined with weights (1 - k/n, k/n).
    """
    if not isinstance(dist, HubColumnLaw):
        return Expectation(float(dist(f)))
    if dist.planted and dist.coupling == "joint":
        w = dist.weight
        parts = []
        for idx, comp in enumerate(("null", "planted")):
            weight = 1.0 - w if comp == "null" else w
            budget = (lambda m, wt=weight: target_se(m) / math.sqrt(2.0) / max(wt, 1e-300))
            parts.append(_mc_mean(dist, f, comp, stream_rng(seed, _ESTIMATE_STREAM, idx), budget,
                                  min_samples, max_samples, batch))
        value = (1.0 - w) * parts[0].value + w * parts[1].value
        se = math.hypot((1.0 - w) * parts[0].stderr, w * parts[1].stderr)
        if se > target_se(value):
            raise OracleError(f"combined Monte Carlo error {se:.3g} above budget {target_se(value):.3g}")
        return Expectation(value, se, parts[0].samples + parts[1].samples)
    return _mc_mean(dist, f, "mixture", stream_rng(seed, _ESTIMATE_STREAM, 9), target_se,
                    min_samples, max_samples, batch)


def _perturb(dist, exp: Expectation, tol: float, mode: str, seed: int, lo: float, hi: float) -> float:
    slack = max(tol - 4.0 * exp.stderr, 0.0)
    if mode == "exact":
        value = exp.value
    elif mode == "random_uniform":
        value = exp.value + slack * (2.0 * stream_rng(seed, _PERTURB_STREAM).random() - 1.0)
    else:
        # push away from the truth: down for a planted law, up for a null one
        value = exp.value + (-slack if _is_planted(dist) else slack)
    return min(max(value, lo), hi)


def stat_answer(dist, f: Query, tau: float, mode: str = "exact", seed: int = 0, **mc) -> OracleAnswer:
    if not 0 <= tau <= 1:
        raise ParameterError("tau must lie in [0, 1]")
    exp = expectation(dist, f, lambda _m: tau / 10.0, seed, **mc)
    if exp.stderr > tau / 10.0:
        raise OracleError("Monte Carlo error exceeds tau/10")
    return OracleAnswer(_perturb(dist, exp, tau, mode, seed, -1.0, 1.0), exp.value, tau,
                        exp.stderr, exp.samples)


def stat(dist, f: Query, tau: float, mode: str = "exact", seed: int = 0, **mc) -> float:
    """STAT(tau): E[f] for f with values in [-1, 1], to within +-tau."""
    return stat_answer(dist, f, tau, mode, seed, **mc).value


def vstat_tolerance(p: float, t: float) -> float:
    """max(1/t, sqrt(p (1 - p) / t))."""
    return max(1.0 / t, math.sqrt(max(p * (1.0 - p), 0.0) / t))


def vstat_answer(dist, f: Query, t: int, mode: str = "exact", seed: int = 0, **mc) -> OracleAnswer:
    if t < 1:
        raise ParameterError("t must be a positive integer")
    exp = expectation(dist, f, lambda m: vstat_tolerance(min(max(m, 0.0), 1.0), t) / 10.0, seed, **mc)
    tol = vstat_tolerance(min(max(exp.value, 0.0), 1.0), t)
    return OracleAnswer(_perturb(dist, exp, tol, mode, seed, 0.0, 1.0), exp.value, tol,
                        exp.stderr, exp.samples)


def vstat(dist, f: Query, t: int, mode: str = "exact", seed: int = 0, **mc) -> float:
    """VSTAT(t): E[f] for 0/1-valued f, to within max(1/t, sqrt(Var f / t))."""
    return vstat_answer(dist, f, t, mode, seed, **mc).value


class OneStat:
    """1-STAT oracle: f evaluated on one fresh sample per call."""

    def __init__(self, dist: HubColumnLaw, seed: int = 0):
        self.dist = dist
        self.seed = seed
        self.calls = 0

    def __call__(self, f: Query) -> int:
        sample = self.dist.sample(stream_rng(self.seed, _ONE_STAT_STREAM, self.calls), 1)
        self.calls += 1
        return int(np.asarray(f(sample)).reshape(-1)[0])


def one_stat(dist: HubColumnLaw, f: Query, seed: int = 0) -> int:
    return OneStat(dist, seed)(f)


def hub_statistic(columns: np.ndarray, cfg: AmplifierConfig, mu0: float) -> np.ndarray:
    """Sum over coordinates of (B - mu0), one value per column."""
    return (amplify(columns, cfg) - mu0).sum(axis=-1)


def hub_query(column: np.ndarray, cfg: AmplifierConfig, mu0: float, threshold: float) -> int:
    """1 iff the truncated, amplified, centred column sum exceeds ``threshold``."""
    return int(hub_statistic(np.asarray(column, dtype=np.float64), cfg, mu0) > threshold)


def make_hub_query(cfg: AmplifierConfig, mu0: float, threshold: float) -> Query:
    """Vectorized hub query over a (batch, dim) array."""
    return lambda cols: (hub_statistic(cols, cfg, mu0) > threshold).astype(np.float64)


def calibrate_threshold(params: ModelParams, cfg: AmplifierConfig, target_null_rate: float,
                        trials: int, seed: int = 0, mu0: float | None = None,
                        batch: int = 5_000) -> float:
    """(1 - target_null_rate) empirical quantile of the hub statistic on null columns."""
    if not 0 < target_null_rate <= 1:
        raise ParameterError("target_null_rate must lie in (0, 1]")
    if trials < 10.0 / target_null_rate:
        raise ParameterError(f"need at least {math.ceil(10 / target_null_rate)} trials, got {trials}")
    mu0 = mu_null(cfg) if mu0 is None else mu0
    rng = stream_rng(seed, _CALIBRATE_STREAM)
    sd = math.sqrt(params.sigma0_sq)
    values = np.empty(trials)
    for start in range(0, trials, batch):
        b = min(batch, trials - start)
        values[start:start + b] = hub_statistic(rng.standard_normal((b, params.N)) * sd, cfg, mu0)
    return float(np.quantile(values, 1.0 - target_null_rate))


def vstat_budget(params: ModelParams, C: float = 4.0) -> int:
    """t = ceil(C n / k)."""
    return math.ceil(C * params.n / params.k)


def decision_threshold(params: ModelParams) -> float:
    """Midpoint between the null firing rate 1/N and the planted rate (k/n)(1 - 1/N)."""
    return 0.5 * (params.k / params.n) * (1.0 - 1.0 / params.N)


def sq_detect(law: HubColumnLaw, oracle: OracleSpec, cfg: AmplifierConfig, threshold: float,
              mu0: float | None = None, **mc) -> Decision:
    """Decide planted vs null with a single VSTAT query of the hub statistic."""
    if oracle.kind != "VSTAT":
        raise ParameterError("sq_detect uses a VSTAT oracle")
    mu0 = mu_null(cfg) if mu0 is None else mu0
    f = make_hub_query(cfg, mu0, threshold)
    ans = vstat_answer(law, f, int(oracle.tolerance_param), oracle.perturbation_mode, oracle.seed, **mc)
    cut = decision_threshold(law.params)
    return Decision("planted" if ans.value >= cut else "null", 1, ans.value, cut, ans.tolerance)
