"""Chi-squared amplification detector and the baseline detectors.

Each entry is clamped at a truncation level M and mapped through
``exp(gamma * min(M^2, x^2))``; rows are ranked by the sum of the result.
Row sums use numpy's pairwise summation along each row, so streamed and
materialized scoring give the same bits.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr

from .errors import NumericError, ParameterError, RegimeError
from .model import HubInstance, ModelParams

REGIMES = ("critical", "supercritical", "general")
CRITICAL_TOL = 1e-9


@dataclass(frozen=True)
class AmplifierConfig:
    regime: str
    gamma: float
    M: float
    sigma0_sq: float
    sigma1_sq: float
    L: float | None = None

    @property
    def eps(self) -> float:
        return self.sigma1_sq / (2.0 * self.sigma0_sq) - 1.0

    @property
    def cap(self) -> float:
        """Largest value the transform can produce, exp(gamma M^2).

        Evaluated exactly as ``amplify`` does, so saturated entries equal it.
        """
        return float(np.exp(self.gamma * (self.M * self.M)))

    def to_dict(self) -> dict:
        return {"regime": self.regime, "gamma": self.gamma, "M": self.M, "L": self.L,
                "sigma0_sq": self.sigma0_sq, "sigma1_sq": self.sigma1_sq}


def gamma(sigma0_sq: float, sigma1_sq: float) -> float:
    """1/(2 sigma0^2) - 1/(2 sigma1^2)."""
    if sigma0_sq <= 0 or sigma1_sq <= 0:
        raise ParameterError("variances must be positive")
    if sigma1_sq <= sigma0_sq:
        raise RegimeError(f"amplification needs sigma1^2 > sigma0^2, got {sigma1_sq} <= {sigma0_sq}")
    return 1.0 / (2.0 * sigma0_sq) - 1.0 / (2.0 * sigma1_sq)


def auto_regime(params: ModelParams, c0: float = 1.0, tol: float = CRITICAL_TOL) -> str:
    ratio = params.sigma1_sq / params.sigma0_sq
    if abs(ratio - 2.0) <= tol:
        return "critical"
    if ratio < 2.0:
        raise RegimeError(f"sigma1^2/sigma0^2 = {ratio:g} < 2: no truncation level is defined "
                          "below the critical ratio")
    if params.eps > c0 / math.log(params.n):
        return "supercritical"
    raise RegimeError(f"eps={params.eps:g} <= {c0}/ln n; choose the critical or general regime explicitly")


def truncation_level(regime: str, params: ModelParams, c0: float = 1.0,
                     tol: float = CRITICAL_TOL) -> AmplifierConfig:
    """Build the transform parameters (gamma, M and for the critical regime L)."""
    if regime == "auto":
        regime = auto_regime(params, c0, tol)
    if regime not in REGIMES:
        raise ParameterError(f"unknown regime {regime!r}")
    s0, s1, n = params.sigma0_sq, params.sigma1_sq, params.n
    if n < 3:
        raise ParameterError("truncation levels need n >= 3 so that ln ln n > 0")
    ln_n = math.log(n)
    L = None
    if regime == "critical":
        if abs(s1 - 2.0 * s0) > tol * s0:
            raise RegimeError(f"critical regime needs sigma1^2 = 2 sigma0^2, got {s1} vs {2 * s0}")
        if params.N != n:
            warnings.warn("critical regime is analysed for N == n only", stacklevel=2)
        L2 = 2.0 * (ln_n - math.log(ln_n))
        if L2 <= 0:
            raise ParameterError(f"L^2 = {L2} <= 0 for n={n}")
        L = math.sqrt(L2)
        M = L * math.sqrt(s0)
    elif regime == "supercritical":
        eps = params.eps
        if eps <= c0 / ln_n:
            raise RegimeError(f"supercritical regime needs eps > {c0}/ln n = {c0 / ln_n:.4g}, got {eps:.4g};"
                              " use the critical regime")
        if params.N < 3:
            raise ParameterError("supercritical level needs N >= 3")
        M2 = 2.0 * s0 * (ln_n - math.log(eps) - math.log(math.log(params.N)) - 0.5 * math.log(ln_n))
        if M2 <= 0:
            raise ParameterError(f"M^2 = {M2:.4g} <= 0: n too small for eps={eps}")
        M = math.sqrt(M2)
    else:
        if params.eps <= 0:
            raise RegimeError(f"general regime needs eps > 0, got {params.eps}")
        M = math.sqrt(2.0 * s0) * math.sqrt(ln_n)
    cfg = AmplifierConfig(regime=regime, gamma=gamma(s0, s1), M=M, sigma0_sq=s0, sigma1_sq=s1, L=L)
    if not math.isfinite(cfg.cap):
        raise NumericError("exp(gamma M^2) overflows")
    return cfg


def amplify_entry(x: float, cfg: AmplifierConfig) -> float:
    return math.exp(cfg.gamma * min(cfg.M * cfg.M, x * x))


def amplify(matrix: np.ndarray, cfg: AmplifierConfig) -> np.ndarray:
    a = np.asarray(matrix, dtype=np.float64)
    return np.exp(cfg.gamma * np.minimum(cfg.M * cfg.M, a * a))


def _gauss_log_pdf(x, variance):
    return -0.5 * x * x / variance - 0.5 * math.log(2.0 * math.pi * variance)


def amplified_expectation(cfg: AmplifierConfig, variance: float,
                          g: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """E[g(B)] with B = exp(gamma min(M^2, x^2)) and x ~ N(0, variance).

    Quadrature on [0, M] plus the exact tail mass beyond M, where B is
    constant.  ``g`` defaults to the identity.
    """
    if variance <= 0:
        raise ParameterError("variance must be positive")
    if cfg.gamma == 0.0 and g is None:
        return 1.0
    g = (lambda b: b) if g is None else g
    gm, M = cfg.gamma, cfg.M

    def integrand(x):
        return 2.0 * g(math.exp(gm * x * x)) * math.exp(_gauss_log_pdf(x, variance))

    inner, err = integrate.quad(integrand, 0.0, M, epsabs=1e-13, epsrel=1e-13, limit=200)
    # absolute floor for O(1) values such as mu0, relative for large moments
    if not math.isfinite(inner) or err > max(1e-9, 1e-11 * abs(inner)):
        raise NumericError(f"quadrature did not converge (estimate {inner}, error {err})")
    tail = 2.0 * math.exp(float(log_ndtr(-M / math.sqrt(variance))))
    return inner + float(g(cfg.cap)) * tail


def mu_null(cfg: AmplifierConfig, sigma0_sq: float | None = None) -> float:
    """Mean of the transformed entry under the null distribution."""
    return amplified_expectation(cfg, cfg.sigma0_sq if sigma0_sq is None else sigma0_sq)


def iter_blocks(source, block_rows: int = 512) -> Iterator[tuple[int, np.ndarray]]:
    if isinstance(source, HubInstance):
        yield from source.row_blocks(block_rows)
        return
    a = np.asarray(source, dtype=np.float64)
    if a.ndim != 2:
        raise ParameterError("expected a 2-D matrix")
    for start in range(0, a.shape[0], block_rows):
        yield start, a[start:start + block_rows]


def _shape(source) -> tuple[int, int]:
    return source.shape if isinstance(source, HubInstance) else np.shape(source)


def scan_rows(source, scorers: dict[str, Callable[[np.ndarray], np.ndarray]],
              block_rows: int = 512) -> dict[str, np.ndarray]:
    """One pass over the rows, applying every row-scoring function per block."""
    N = _shape(source)[0]
    out = {name: np.empty(N) for name in scorers}
    for start, block in iter_blocks(source, block_rows):
        for name, fn in scorers.items():
            out[name][start:start + block.shape[0]] = fn(block)
    return out


def chi2_row_scorer(cfg: AmplifierConfig) -> Callable[[np.ndarray], np.ndarray]:
    return lambda block: amplify(block, cfg).sum(axis=1)


def degree_row_scorer(sigma0_sq: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda block: (block * block / sigma0_sq - 1.0).sum(axis=1)


def score_rows(source, cfg: AmplifierConfig, block_rows: int = 512,
               mu0: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row sums of B and the same sums centred by n * mu0."""
    scores = scan_rows(source, {"chi2": chi2_row_scorer(cfg)}, block_rows)["chi2"]
    n = _shape(source)[1]
    mu0 = mu_null(cfg) if mu0 is None else mu0
    return scores, scores - n * mu0


def top_s(scores: Sequence[float], s: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Indices of the s largest scores and the rows tied at the selection boundary.

    Ties go to the smaller row index.  The tie report lists every row whose
    score equals the boundary score when that group straddles the cut.
    """
    sc = np.asarray(scores, dtype=np.float64)
    if not 0 <= s <= sc.size:
        raise ParameterError(f"need 0 <= s <= {sc.size}, got {s}")
    order = np.lexsort((np.arange(sc.size), -sc))
    selected = tuple(sorted(int(i) for i in order[:s]))
    ties: tuple[int, ...] = ()
    if 0 < s < sc.size:
        boundary = sc[order[s - 1]]
        if sc[order[s]] == boundary:
            ties = tuple(int(i) for i in np.flatnonzero(sc == boundary))
    return selected, ties


@dataclass
class DetectionResult:
    detector: str
    scores: np.ndarray
    centered_scores: np.ndarray
    selected: tuple[int, ...]
    ties: tuple[int, ...] = ()
    config: AmplifierConfig | None = None
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self, params: ModelParams | None = None, seed: int | None = None,
                metrics: "RecoveryMetrics | None" = None, scores_path: str | None = None) -> dict:
        d = {
            "detector": self.detector,
            "params": None if params is None else params.to_dict(),
            "seed": seed,
            "selected": list(self.selected),
            "ties": list(self.ties),
            "metrics": None if metrics is None else metrics.to_dict(),
        }
        if scores_path is not None:
            d["scores_path"] = scores_path
        if self.config is not None:
            d["config"] = self.config.to_dict()
        if not self.converged:
            d["converged"] = False
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), sort_keys=True)


@dataclass(frozen=True)
class RecoveryMetrics:
    exact: bool
    precision: float
    recall: float
    rank_margin: float

    def to_dict(self) -> dict:
        return {"exact": self.exact, "precision": self.precision, "recall": self.recall,
                "rank_margin": self.rank_margin}


def _params_of(source, params: ModelParams | None) -> ModelParams:
    if params is not None:
        return params
    if isinstance(source, HubInstance):
        return source.params
    raise ParameterError("params are required when detecting on a bare matrix")


def _default_regime(source, params: ModelParams, regime: str) -> str:
    if regime != "auto":
        return regime
    if isinstance(source, HubInstance) and source.model == "heterogeneous":
        return "general"
    return auto_regime(params)


def detect(source, params: ModelParams | None = None, regime: str = "auto",
           cfg: AmplifierConfig | None = None, s: int | None = None,
           c0: float = 1.0, block_rows: int = 512) -> DetectionResult:
    """Chi-squared amplification detector: top-s row sums of B."""
    params = _params_of(source, params)
    if cfg is None:
        cfg = truncation_level(_default_regime(source, params, regime), params, c0=c0)
    scores, centered = score_rows(source, cfg, block_rows)
    selected, ties = top_s(scores, params.s if s is None else s)
    return DetectionResult("chi2", scores, centered, selected, ties, config=cfg)


def degree_detect(source, sigma0_sq: float, s: int, block_rows: int = 512) -> DetectionResult:
    """Row sums of A_ij^2/sigma0^2 - 1."""
    scores = scan_rows(source, {"degree": degree_row_scorer(sigma0_sq)}, block_rows)["degree"]
    selected, ties = top_s(scores, s)
    return DetectionResult("degree", scores, scores, selected, ties)


def spectral_detect(source, s: int, iterations: int = 100, tol: float = 1e-10) -> DetectionResult:
    """Power iteration on A A^T from the normalized all-ones vector.

    Rows are ranked by |u_i| of the top left singular vector estimate.  If the
    iterate has not settled after ``iterations`` steps the last iterate is
    used and ``converged`` is False.
    """
    a = source.dense() if isinstance(source, HubInstance) else np.asarray(source, dtype=np.float64)
    u = np.full(a.shape[0], 1.0 / math.sqrt(a.shape[0]))
    converged = False
    for _ in range(iterations):
        w = a @ (a.T @ u)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        w /= norm
        # sign-insensitive change
        delta = min(np.linalg.norm(w - u), np.linalg.norm(w + u))
        u = w
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn("power iteration did not converge; returning last iterate", stacklevel=2)
    scores = np.abs(u)
    selected, ties = top_s(scores, s)
    return DetectionResult("spectral", scores, scores, selected, ties, converged=converged)


def evaluate(result: DetectionResult, truth) -> RecoveryMetrics:
    """Compare a detection against the planted hub rows."""
    rows = truth.hub_rows if isinstance(truth, HubInstance) else tuple(truth)
    S = set(int(i) for i in rows)
    N = result.scores.size
    if len(S) != len(result.selected) or any(not 0 <= i < N for i in S):
        raise ParameterError(f"truth has {len(S)} rows in range, selection has {len(result.selected)}")
    hits = len(S & set(result.selected))
    precision = hits / len(result.selected) if result.selected else 0.0
    recall = hits / len(S) if S else 0.0
    mask = np.zeros(N, dtype=bool)
    mask[list(S)] = True
    lo = result.scores[mask].min() if mask.any() else math.inf
    hi = result.scores[~mask].max() if (~mask).any() else -math.inf
    exact = set(result.selected) == S
    return RecoveryMetrics(exact, precision, recall, float(lo - hi))


DETECTORS = ("chi2", "degree", "spectral")


def run_detectors(instance: HubInstance, detectors: Iterable[str], regime: str = "auto",
                  cfg: AmplifierConfig | None = None, block_rows: int = 512,
                  spectral_iterations: int = 100) -> dict[str, DetectionResult]:
    """Run several detectors on one instance, sharing a single pass over the rows."""
    detectors = list(detectors)
    p = instance.params
    scorers = {}
    if "chi2" in detectors:
        if cfg is None:
            cfg = truncation_level(_default_regime(instance, p, regime), p)
        scorers["chi2"] = chi2_row_scorer(cfg)
    if "degree" in detectors:
        scorers["degree"] = degree_row_scorer(p.sigma0_sq)
    sums = scan_rows(instance, scorers, block_rows) if scorers else {}
    out = {}
    for name in detectors:
        if name == "chi2":
            sel, ties = top_s(sums["chi2"], p.s)
            out[name] = DetectionResult("chi2", sums["chi2"], sums["chi2"] - p.n * mu_null(cfg),
                                        sel, ties, config=cfg)
        elif name == "degree":
            sel, ties = top_s(sums["degree"], p.s)
            out[name] = DetectionResult("degree", sums["degree"], sums["degree"], sel, ties)
        elif name == "spectral":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out[name] = spectral_detect(instance, p.s, spectral_iterations)
        else:
            raise ParameterError(f"unknown detector {name!r}")
    return out
