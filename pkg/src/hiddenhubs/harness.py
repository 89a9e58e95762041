"""Experiment runner: JSON configs, sweeps with reproducible per-trial seeds,
paired detector comparisons and the validation suite.
"""

from __future__ import annotations

import ast
import csv
import hashlib
import io
import itertools
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from . import detect as _detect
from . import theory
from .errors import HubsError, NumericError, ParameterError, RegimeError
from .model import MODELS, ModelParams, NoisePolicy, corrupt, generate, stream_rng

CSV_COLUMNS = ("n", "N", "k", "s", "sigma0_sq", "sigma1_sq", "mu", "eps", "model", "detector",
               "trial", "seed", "status", "exact_recovery", "precision", "recall", "rank_margin",
               "runtime_ms")

CONFIG_KEYS = {"grid", "detectors", "model", "trials", "root_seed", "noise", "output", "regime",
               "heterogeneous", "timing", "block_rows"}
GRID_KEYS = {"n", "N", "k", "s", "sigma0_sq", "sigma1_sq", "eps", "mu"}
NOISE_KEYS = {"budget_per_row", "placement", "replacement_value"}
HETERO_KEYS = {"variance_cycle", "special_size", "c"}


# ---------------------------------------------------------------- k-rules

_RULE_FUNCS = {"sqrt": math.sqrt, "ln": math.log, "log": math.log, "pow": math.pow,
               "exp": math.exp, "ceil": math.ceil, "floor": math.floor}
_RULE_CONSTS = {"e": math.e, "pi": math.pi}
_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b, ast.Mult: lambda a, b: a * b,
           ast.Div: lambda a, b: a / b, ast.Pow: lambda a, b: a ** b}


def eval_rule(expr: str, **env: float) -> float:
    """Evaluate an arithmetic size rule such as ``n^0.4`` or ``2*sqrt(n*ln(n))``.

    Only numbers, the variables in ``env``, + - * / ^ ** and the functions
    sqrt, ln, log, pow, exp, ceil, floor are accepted.
    """
    try:
        tree = ast.parse(expr.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ParameterError(f"cannot parse rule {expr!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in env:
                return float(env[node.id])
            if node.id in _RULE_CONSTS:
                return _RULE_CONSTS[node.id]
            raise ParameterError(f"unknown name {node.id!r} in rule {expr!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _RULE_FUNCS and not node.keywords:
            return float(_RULE_FUNCS[node.func.id](*[ev(a) for a in node.args]))
        raise ParameterError(f"unsupported syntax in rule {expr!r}")

    try:
        return ev(tree)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise ParameterError(f"rule {expr!r} failed: {exc}") from exc


def resolve_size(value, **env: float) -> int:
    """An int is kept; a rule string is evaluated and rounded up."""
    if isinstance(value, bool):
        raise ParameterError(f"bad size {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if value != int(value):
            raise ParameterError(f"non-integer size {value}")
        return int(value)
    if isinstance(value, str):
        # round first so that e.g. 4096^0.5 = 64.00000000000001 stays 64
        return math.ceil(round(eval_rule(value, **env), 9))
    raise ParameterError(f"bad size {value!r}")


def min_special_size(n: int, N: int, eps: float, cycle, sigma0_sq: float = 1.0, c: float = 1.0) -> int:
    """Smallest |T| whose mass sum_j n^(-sigma0^2/sigma_j^2), with variances
    cycling through ``cycle``, reaches (c/sqrt(eps)) ln N sqrt(ln n).
    """
    need = c / math.sqrt(eps) * math.log(N) * math.sqrt(math.log(n))
    tau, size = 0.0, 0
    while tau < need:
        tau += n ** (-sigma0_sq / cycle[size % len(cycle)])
        size += 1
        if size > n:
            raise ParameterError("no special-set size up to n reaches the required mass")
    return size


# ---------------------------------------------------------------- config

def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ParameterError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ParameterError(f"unknown key(s) in {where}: {sorted(extra)}")


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class ExperimentConfig:
    """Sweep description.

    ``grid`` maps n, N, k, s, sigma0_sq, sigma1_sq | eps, mu to value lists.
    N defaults to n and s to k; either may be a rule string over n (and k
    for s).  Exactly one of sigma1_sq and eps is given.
    """
    grid: dict
    detectors: list = field(default_factory=lambda: ["chi2"])
    model: str = "general"
    trials: int = 1
    root_seed: int = 0
    noise: NoisePolicy | None = None
    output: str | None = None
    regime: str = "auto"
    heterogeneous: dict | None = None
    timing: bool = False
    block_rows: int = 512

    def __post_init__(self) -> None:
        _check_keys(self.grid, GRID_KEYS, "grid")
        if "n" not in self.grid or "k" not in self.grid:
            raise ParameterError("grid needs n and k")
        if ("sigma1_sq" in self.grid) == ("eps" in self.grid):
            raise ParameterError("grid needs exactly one of sigma1_sq and eps")
        self.grid = {key: _as_list(v) for key, v in self.grid.items()}
        if any(len(v) == 0 for v in self.grid.values()):
            raise ParameterError("grid lists must be non-empty")
        self.detectors = _as_list(self.detectors)
        if not self.detectors or any(d not in _detect.DETECTORS for d in self.detectors):
            raise ParameterError(f"detectors must be a non-empty subset of {_detect.DETECTORS}")
        if len(set(self.detectors)) != len(self.detectors):
            raise ParameterError("duplicate detectors")
        if self.model not in MODELS or self.model == "null":
            raise ParameterError(f"model must be one of general, submatrix, heterogeneous")
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ParameterError("trials must be a positive integer")
        if isinstance(self.root_seed, bool) or not isinstance(self.root_seed, int) or self.root_seed < 0:
            raise ParameterError("root_seed must be a non-negative integer")
        if self.regime not in ("auto",) + _detect.REGIMES:
            raise ParameterError(f"unknown regime {self.regime!r}")
        if isinstance(self.noise, dict):
            _check_keys(self.noise, NOISE_KEYS, "noise")
            self.noise = NoisePolicy(**self.noise)
        if self.model == "heterogeneous":
            if self.heterogeneous is None:
                raise ParameterError("heterogeneous model needs a 'heterogeneous' section")
            _check_keys(self.heterogeneous, HETERO_KEYS, "heterogeneous")
            if not self.heterogeneous.get("variance_cycle"):
                raise ParameterError("heterogeneous.variance_cycle must be a non-empty list")
        elif self.heterogeneous is not None:
            raise ParameterError("'heterogeneous' section given for a non-heterogeneous model")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(d, CONFIG_KEYS, "config")
        if "grid" not in d:
            raise ParameterError("config needs a grid")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = {"grid": self.grid, "detectors": self.detectors, "model": self.model,
             "trials": self.trials, "root_seed": self.root_seed, "regime": self.regime,
             "output": self.output, "timing": self.timing, "block_rows": self.block_rows,
             "noise": None if self.noise is None else {
                 "budget_per_row": self.noise.budget_per_row, "placement": self.noise.placement,
                 "replacement_value": self.noise.replacement_value}}
        if self.heterogeneous is not None:
            d["heterogeneous"] = self.heterogeneous
        return d


@dataclass(frozen=True)
class Cell:
    index: int
    params: ModelParams | None
    raw: dict
    error: str | None = None


def expand_cells(cfg: ExperimentConfig) -> list[Cell]:
    """Cartesian product of the grid in key order n, N, k, s, sigma0_sq, sigma1_sq|eps, mu."""
    g = cfg.grid
    var_key = "sigma1_sq" if "sigma1_sq" in g else "eps"
    axes = [g["n"], g.get("N", [None]), g["k"], g.get("s", [None]), g.get("sigma0_sq", [1.0]),
            g[var_key], g.get("mu", [0.0])]
    cells = []
    for idx, (n, N, k, s, s0, v, mu) in enumerate(itertools.product(*axes)):
        raw = {"n": n, "N": N, "k": k, "s": s, "sigma0_sq": s0, var_key: v, "mu": mu}
        try:
            n_i = resolve_size(n)
            N_i = n_i if N is None else resolve_size(N, n=n_i)
            k_i = resolve_size(k, n=n_i, N=N_i)
            if not 1 <= k_i <= n_i:
                raise ParameterError(f"k={k_i} outside [1, n={n_i}]")
            s_i = k_i if s is None else resolve_size(s, n=n_i, N=N_i, k=k_i)
            if var_key == "eps":
                p = ModelParams.from_eps(n_i, N_i, s_i, k_i, float(v), float(s0), float(mu))
            else:
                p = ModelParams(n_i, N_i, s_i, k_i, float(s0), float(v), float(mu))
            cells.append(Cell(idx, p, raw))
        except ParameterError as exc:
            cells.append(Cell(idx, None, raw, str(exc)))
    return cells


def trial_seed(root_seed: int, cell: int, trial: int) -> int:
    """63-bit seed from a hash of (root_seed, cell index, trial index)."""
    h = hashlib.blake2b(f"{root_seed}:{cell}:{trial}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


# ---------------------------------------------------------------- trials

def _variances(cfg: ExperimentConfig, p: ModelParams) -> list:
    h = cfg.heterogeneous
    cycle = [float(v) for v in h["variance_cycle"]]
    size = h.get("special_size", "auto")
    if size == "auto":
        size = min_special_size(p.n, p.N, p.eps, cycle, p.sigma0_sq, float(h.get("c", 1.0)))
    else:
        size = resolve_size(size, n=p.n, N=p.N, k=p.k)
    row = [cycle[j % len(cycle)] for j in range(size)]
    return [row] * p.s


def _status(exc: Exception) -> str:
    if isinstance(exc, RegimeError):
        return "regime_error"
    if isinstance(exc, NumericError):
        return "numeric_error"
    return "parameter_error"


def run_trial(cfg: ExperimentConfig, params: ModelParams, seed: int) -> dict:
    """Generate one instance and run every configured detector on it.

    Returns {detector: (status, metrics or None, runtime_ms)}.
    """
    out = {}
    amp, amp_error = None, None
    try:
        variances = _variances(cfg, params) if cfg.model == "heterogeneous" else None
        inst = generate(cfg.model, params, seed, variances=variances, materialize="spectral" in cfg.detectors)
        regime = cfg.regime
        if regime == "auto" and cfg.model == "heterogeneous":
            regime = "general"
        if "chi2" in cfg.detectors or cfg.noise is not None:
            try:
                amp = _detect.truncation_level(_detect.auto_regime(params) if regime == "auto" else regime,
                                               params)
            except (HubsError, ValueError, ArithmeticError) as exc:
                if cfg.noise is not None:
                    raise
                amp_error = exc
        if cfg.noise is not None:
            inst = corrupt(inst, cfg.noise, amp)
    except (HubsError, ValueError, ArithmeticError) as exc:
        return {d: (_status(exc), None, None) for d in cfg.detectors}
    for name in cfg.detectors:
        if name == "chi2" and amp_error is not None:
            out[name] = (_status(amp_error), None, None)
            continue
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = _detect.run_detectors(inst, [name], regime, cfg=amp, block_rows=cfg.block_rows)[name]
            metrics = _detect.evaluate(res, inst)
            out[name] = ("ok", metrics, (time.perf_counter() - t0) * 1e3)
        except (HubsError, ValueError, ArithmeticError) as exc:
            out[name] = (_status(exc), None, None)
    return out


def _trial_task(args):
    cfg_dict, params_dict, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_trial(cfg, ModelParams.from_dict(params_dict), seed)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class SweepResult:
    rows: list[dict]
    summary: dict
    csv_text: str


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    if trials == 0:
        return (math.nan, math.nan)
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return (float(ci.low), float(ci.high))


def _summarize(cfg: ExperimentConfig, cells: list[Cell], rows: list[dict]) -> dict:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["_cell"], r["detector"]), []).append(r)
    out = []
    for (ci, det), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        hits = sum(1 for r in ok if r["exact_recovery"])
        lo, hi = wilson_interval(hits, len(ok))
        statuses: dict[str, int] = {}
        for r in rs:
            statuses[r["status"]] = statuses.get(r["status"], 0) + 1
        out.append({"cell": ci, "params": cells[ci].raw if cells[ci].params is None else cells[ci].params.to_dict(),
                    "detector": det, "trials": len(rs), "completed": len(ok), "exact_recoveries": hits,
                    "rate": hits / len(ok) if ok else None, "wilson95": [lo, hi], "status_counts": statuses})
    return {"config": cfg.to_dict(), "cells": out}


def run_sweep(cfg: ExperimentConfig, threads: int = 1, out: str | Path | None = None) -> SweepResult:
    """Run every (cell, trial), one instance shared by all detectors of a trial.

    Rows come out in (cell, detector, trial) order whatever ``threads`` is.
    ``threads=0`` uses all cores.  Writes ``out`` (CSV) and a ``.summary.json``
    next to it when a path is given or configured.
    """
    cells = expand_cells(cfg)
    tasks, keys = [], []
    for cell in cells:
        if cell.params is None:
            continue
        for t in range(cfg.trials):
            seed = trial_seed(cfg.root_seed, cell.index, t)
            tasks.append((cfg.to_dict(), cell.params.to_dict(), seed))
            keys.append((cell.index, t, seed))
    workers = (os.cpu_count() or 1) if threads == 0 else threads
    if workers < 1:
        raise ParameterError("threads must be >= 0")
    if workers == 1 or len(tasks) <= 1:
        results = [_trial_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_task, tasks))
    by_key = {(c, t): (seed, res) for (c, t, seed), res in zip(keys, results)}

    rows = []
    for cell in cells:
        p = cell.params
        for det in cfg.detectors:
            for t in range(cfg.trials):
                if p is None:
                    raw = cell.raw
                    row = {c: None for c in CSV_COLUMNS}
                    row.update({key: raw.get(key) for key in ("n", "N", "k", "s", "sigma0_sq", "sigma1_sq", "mu", "eps")})
                    row.update(model=cfg.model, detector=det, trial=t,
                               seed=trial_seed(cfg.root_seed, cell.index, t), status="parameter_error")
                else:
                    seed, res = by_key[(cell.index, t)]
                    status, m, ms = res[det]
                    row = {"n": p.n, "N": p.N, "k": p.k, "s": p.s, "sigma0_sq": p.sigma0_sq,
                           "sigma1_sq": p.sigma1_sq, "mu": p.mu, "eps": p.eps, "model": cfg.model,
                           "detector": det, "trial": t, "seed": seed, "status": status,
                           "exact_recovery": None if m is None else int(m.exact),
                           "precision": None if m is None else m.precision,
                           "recall": None if m is None else m.recall,
                           "rank_margin": None if m is None else m.rank_margin,
                           "runtime_ms": ms if cfg.timing else None}
                row["_cell"] = cell.index
                rows.append(row)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    summary = _summarize(cfg, cells, rows)
    target = out if out is not None else cfg.output
    if target is not None:
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(buf.getvalue())
        target.with_suffix(".summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return SweepResult(rows, summary, buf.getvalue())


def compare(params: ModelParams, trials: int, root_seed: int = 0, model: str = "general",
            detectors=("chi2", "degree", "spectral"), threads: int = 1, **kw) -> dict:
    """Paired recovery rates of several detectors on identical instances."""
    cfg = ExperimentConfig(
        grid={"n": [params.n], "N": [params.N], "k": [params.k], "s": [params.s],
              "sigma0_sq": [params.sigma0_sq], "sigma1_sq": [params.sigma1_sq], "mu": [params.mu]},
        detectors=list(detectors), model=model, trials=trials, root_seed=root_seed, **kw)
    res = run_sweep(cfg, threads=threads)
    per = {d: [r for r in res.rows if r["detector"] == d] for d in detectors}
    rates = {}
    for d, rs in per.items():
        ok = [r for r in rs if r["status"] == "ok"]
        hits = sum(r["exact_recovery"] for r in ok)
        rates[d] = {"rate": hits / len(ok) if ok else None, "exact_recoveries": hits,
                    "completed": len(ok), "wilson95": list(wilson_interval(hits, len(ok)))}
    paired = {}
    for a, b in itertools.combinations(detectors, 2):
        pairs = [(x["exact_recovery"], y["exact_recovery"]) for x, y in zip(per[a], per[b])
                 if x["status"] == "ok" and y["status"] == "ok"]
        paired[f"{a}-{b}"] = {
            "difference": (sum(x - y for x, y in pairs) / len(pairs)) if pairs else None,
            f"only_{a}": sum(1 for x, y in pairs if x and not y),
            f"only_{b}": sum(1 for x, y in pairs if y and not x)}
    return {"params": params.to_dict(), "model": model, "trials": trials, "root_seed": root_seed,
            "rates": rates, "paired": paired, "rows": res.rows}


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class ValidationReport:
    level: str
    checks: list[Check]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"level": self.level, "passed": self.passed, "seconds": self.seconds,
                "checks": [c.to_dict() for c in self.checks]}


def _amplifier(regime: str, n: int, eps: float, gamma_fn: Callable) -> _detect.AmplifierConfig:
    s1 = 2.0 * (1.0 + eps) if regime == "supercritical" else 2.0
    p = ModelParams(n, n, 1, 1, 1.0, s1)
    ref = _detect.truncation_level(regime, p)
    return _detect.AmplifierConfig(regime, gamma_fn(1.0, s1), ref.M, 1.0, s1, ref.L)


def run_validate(level: str = "fast", gamma_fn: Callable = _detect.gamma,
                 amplify_fn: Callable = _detect.amplify) -> ValidationReport:
    """Bundle of numerical self-checks.

    ``gamma_fn`` and ``amplify_fn`` are injectable so that deliberately broken
    versions can be shown to trip the checks.
    """
    if level not in ("fast", "full"):
        raise ParameterError("level must be fast or full")
    full = level == "full"
    t0 = time.perf_counter()
    checks: list[Check] = []

    def record(name, fn):
        try:
            ok, detail = fn()
        except (HubsError, ValueError, ArithmeticError, FloatingPointError) as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        checks.append(Check(name, bool(ok), detail))

    def chi2_grid():
        worst = 0.0
        for r in (0.5, 1.0, 1.5, 1.9):
            for mu in (0.0, 0.5, 1.0):
                a = theory.chi2_closed(1.0, r, mu).value
                b = theory.chi2_quadrature(1.0, r, mu)
                worst = max(worst, abs(a - b))
        inf = not theory.chi2_closed(1.0, 2.0).finite
        return worst <= 1e-6 and inf, f"max |closed - quadrature| = {worst:.3g}; sigma1^2=2 infinite: {inf}"

    samples = 1_000_000 if full else 200_000
    ns = (256, 4096, 65536) if full else (4096,)

    def mu0_bounds(regime, eps):
        def run():
            upper = math.sqrt(2.0 * (1.0 + eps)) if regime == "supercritical" else math.sqrt(2.0)
            worst = []
            for n in ns:
                a = _amplifier(regime, n, eps, gamma_fn)
                x = stream_rng(7, n).standard_normal(samples)
                with np.errstate(over="ignore"):
                    b = np.asarray(amplify_fn(x, a), dtype=np.float64)
                if not np.all(np.isfinite(b)):
                    return False, f"n={n}: non-finite amplified values"
                m, se = float(b.mean()), float(b.std(ddof=1) / math.sqrt(samples))
                worst.append(f"n={n}: {m:.5f}+-{se:.1e}")
                if not (1.0 - 4 * se <= m <= upper + 4 * se):
                    return False, f"n={n}: mu0={m:.5f} outside [1, {upper:.5f}] (se {se:.1e})"
            return True, "; ".join(worst)
        return run

    def cap_bound():
        a = _amplifier("critical", 4096, 0.0, gamma_fn)
        probe = np.array([0.0, 1.0, a.M, 2 * a.M, 10.0, 40.0, -40.0])
        with np.errstate(over="ignore"):
            b = np.asarray(amplify_fn(probe, a), dtype=np.float64)
        cap = math.exp(a.gamma * a.M * a.M)
        ok = bool(np.all(np.isfinite(b)) and np.all(b <= cap * (1 + 1e-12)) and np.all(b >= 1.0 - 1e-12))
        return ok, f"max amplified {np.max(b):.6g} vs cap {cap:.6g}"

    def scalar_vs_vector():
        a = _amplifier("supercritical", 1024, 0.5, gamma_fn)
        x = stream_rng(11).standard_normal(200) * 2.0
        vec = np.asarray(amplify_fn(x, a))
        sc = np.array([_detect.amplify_entry(float(v), a) for v in x])
        d = float(np.max(np.abs(vec - sc)))
        return d <= 1e-12 * float(np.max(sc)), f"max difference {d:.3g}"

    def moments():
        a = _amplifier("critical", 4096, 0.0, gamma_fn)
        parts = []
        for dist, l in (("null", 2), ("null", 4), ("planted", 2)):
            m = theory.moment_bound_check(dist, l, a, trials=samples, seed=3)
            if abs(m.estimate - m.exact) > 6 * m.stderr + 1e-9 * abs(m.exact):
                return False, f"{dist} l={l}: MC {m.estimate:.4g} vs quadrature {m.exact:.4g}"
            parts.append(f"{dist} l={l}: c={m.implied_c:.3g}")
        return True, "; ".join(parts)

    def correlation():
        pts = [(50, 3, 1, 1.2), (40, 2, 2, 1.1), (30, 3, 2, 1.25)] + ([(60, 4, 3, 1.15), (25, 2, 1, 1.3)] if full else [])
        worst = 0.0
        for n, k, r, s1 in pts:
            cp = theory.CorrelationParams(n, k, r, 1.0, s1)
            exact = theory.pairwise_corr_subcritical(cp)
            est, se = theory.pairwise_corr_mc(cp, samples=400_000 if full else 100_000, seed=n)
            z = abs(est - exact) / se
            worst = max(worst, z)
        return worst <= 4.0, f"worst |z| = {worst:.2f} over {len(pts)} points"

    def sda():
        v = theory.sda_value(100, 5, 2)
        return v == 16, f"sda_value(100, 5, 2) = {v}"

    def streaming():
        p = ModelParams(300, 257, 5, 20, 1.0, 3.0)
        inst = generate("general", p, 5, materialize=False)
        a = _detect.detect(inst, block_rows=37)
        b = _detect.detect(inst.materialize().dense(), params=p)
        same = np.array_equal(a.scores, b.scores) and a.selected == b.selected
        return same, "streamed and materialized scores identical" if same else "scores differ"

    record("chi2_closed_vs_quadrature", chi2_grid)
    record("mu0_bounds_critical", mu0_bounds("critical", 0.0))
    record("mu0_bounds_supercritical", mu0_bounds("supercritical", 0.5))
    record("amplifier_cap", cap_bound)
    record("scalar_vs_vectorized_amplify", scalar_vs_vector)
    record("moment_quadrature", moments)
    record("pairwise_correlation_mc", correlation)
    record("sda_exact", sda)
    record("streaming_equivalence", streaming)
    return ValidationReport(level, checks, time.perf_counter() - t0)
