"""Command-line front end: ``hiddenhubs <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 parameter error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import detect as _detect
from . import harness, sq, theory
from .errors import HubsError, OracleError, ParameterError
from .matrix_io import load_instance, save_instance, write_matrix
from .model import HubColumnLaw, ModelParams, NoisePolicy, corrupt, generate, tau


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True, default=_jsonable)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def _add_params(p: argparse.ArgumentParser, need_k: bool = True) -> None:
    p.add_argument("--n", type=int, required=True, help="columns")
    p.add_argument("--N", type=int, help="rows (default n)")
    p.add_argument("--k", type=str, required=need_k, help="planted entries per hub row, int or rule like n^0.4")
    p.add_argument("--s", type=str, help="hub rows (default k)")
    p.add_argument("--sigma0-sq", type=float, default=1.0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sigma1-sq", type=float)
    g.add_argument("--eps", type=float)
    p.add_argument("--mu", type=float, default=0.0)


def _params(a) -> ModelParams:
    n = a.n
    N = n if a.N is None else a.N
    k = harness.resolve_size(int(a.k) if a.k.isdigit() else a.k, n=n, N=N)
    s = k if a.s is None else harness.resolve_size(int(a.s) if a.s.isdigit() else a.s, n=n, N=N, k=k)
    if a.eps is not None:
        return ModelParams.from_eps(n, N, s, k, a.eps, a.sigma0_sq, a.mu)
    s1 = 2.0 * a.sigma0_sq if a.sigma1_sq is None else a.sigma1_sq
    return ModelParams(n, N, s, k, a.sigma0_sq, s1, a.mu)


def _amp(a, params: ModelParams) -> _detect.AmplifierConfig:
    regime = getattr(a, "regime", "auto")
    return _detect.truncation_level(_detect.auto_regime(params) if regime == "auto" else regime, params)


# ---------------------------------------------------------------- commands

def cmd_generate(a) -> int:
    params = _params(a)
    variances = None
    if a.model == "heterogeneous":
        cycle = [float(v) for v in a.variance_cycle.split(",")]
        size = (harness.min_special_size(params.n, params.N, params.eps, cycle, params.sigma0_sq)
                if a.special_size == "auto" else int(a.special_size))
        variances = [[cycle[j % len(cycle)] for j in range(size)]] * params.s
    inst = generate(a.model, params, a.seed, variances=variances)
    if a.noise_budget:
        regime = "general" if a.model == "heterogeneous" and a.regime == "auto" else a.regime
        cfg = _detect.truncation_level(_detect.auto_regime(params) if regime == "auto" else regime, params)
        inst = corrupt(inst, NoisePolicy(a.noise_budget, a.placement), cfg)
    side = save_instance(inst, a.out)
    report = {"matrix": str(a.out), "sidecar": str(side), "model": a.model, "seed": a.seed,
              "params": params.to_dict(), "hub_rows": list(inst.hub_rows),
              "corrupted_entries": len(inst.corrupted_entries)}
    if inst.support is not None:
        report["tau"] = tau(params, inst.support).tolist()
    _emit(report)
    return 0


def cmd_detect(a) -> int:
    inst = load_instance(a.input)
    dets = list(_detect.DETECTORS) if a.detector == "all" else a.detector.split(",")
    results = _detect.run_detectors(inst, dets, a.regime, block_rows=a.block_rows)
    out = []
    for name, res in results.items():
        metrics = _detect.evaluate(res, inst) if inst.support is not None else None
        scores_path = None
        if a.scores:
            scores_path = f"{a.scores}.{name}.bin"
            write_matrix(scores_path, res.scores.reshape(1, -1))
        out.append(res.to_dict(params=inst.params, seed=inst.seed, metrics=metrics, scores_path=scores_path))
    _emit(out[0] if len(out) == 1 else out, a.out)
    return 0


def cmd_theory(a) -> int:
    what = a.what
    if what == "chi2":
        if a.sigma1_sq is None:
            raise ParameterError("theory chi2 needs --sigma1-sq")
        rep = theory.chi2_closed(a.sigma0_sq, a.sigma1_sq, a.mu).to_dict()
        if a.truncation is not None:
            rep["truncated_value"] = theory.chi2_quadrature(a.sigma0_sq, a.sigma1_sq, a.mu, a.truncation)
            rep["truncation"] = a.truncation
        elif rep.get("finite"):
            rep["quadrature_value"] = theory.chi2_quadrature(a.sigma0_sq, a.sigma1_sq, a.mu)
        rep["inputs"] = {"sigma0_sq": a.sigma0_sq, "sigma1_sq": a.sigma1_sq, "mu": a.mu}
    elif what in ("truncation", "thresholds", "detectability"):
        if a.n is None:
            raise ParameterError(f"theory {what} needs --n")
        if a.k is None:
            a.k = "1"
        params = _params(a)
        if what == "detectability":
            ok, margin = theory.predict_detectability(params)
            rep = {"detectable": ok, "margin": margin, "params": params.to_dict(),
                   "formula": "margin = sqrt(chi^2) k / sqrt(n)"}
        else:
            cfg = _amp(a, params)
            rep = {"config": cfg.to_dict(), "mu0": _detect.mu_null(cfg), "params": params.to_dict()}
            if cfg.regime == "critical":
                rep["formula"] = "M = sigma0 sqrt(2 (ln n - ln ln n))"
            elif cfg.regime == "supercritical":
                rep["formula"] = "M^2 = 2 sigma0^2 (ln n - ln eps - ln ln N - 0.5 ln ln n)"
            else:
                rep["formula"] = "M = sigma0 sqrt(2 ln n)"
            if what == "thresholds":
                rep["thresholds"] = theory.threshold_formulas(params, cfg, c=a.c).to_dict()
    elif what == "sda":
        rep = {"sda": theory.sda_value(a.n, int(a.k), a.ell), "formula": "floor(ell! (n/k^2)^ell / 2)",
               "inputs": {"n": a.n, "k": int(a.k), "ell": a.ell}}
    elif what == "query-bounds":
        rep = theory.query_bounds(a.case, a.n, a.delta, eps=a.eps, C=a.C, alpha=a.alpha, mu=a.mu,
                                  sigma_sq=a.sigma0_sq, ell=a.ell).to_dict()
    elif what == "corr":
        s1 = a.sigma1_sq
        if s1 is None:
            s1 = 1.5 * a.sigma0_sq if a.regime in ("auto", "subcritical") else 2.0 * a.sigma0_sq
        cp = theory.CorrelationParams(a.n, int(a.k), a.r, a.sigma0_sq, s1, a.mu, a.C)
        if a.regime in ("auto", "subcritical"):
            value = theory.pairwise_corr_subcritical(cp)
            formula = "(k/n)^2 (beta^r - 1)"
        else:
            value = theory.pairwise_corr_truncated(cp, a.regime)
            formula = ("alpha (C ln k / 2)^(r/2)" if a.regime == "at_threshold" else "alpha k^(C alpha r / 4)")
        rep = {"value": value, "regime": a.regime, "formula": formula, "inputs": cp.__dict__}
    else:  # pragma: no cover - argparse restricts choices
        raise AssertionError(what)
    _emit(rep)
    return 0


def cmd_sq_demo(a) -> int:
    params = _params(a)
    cfg = _amp(a, params)
    mu0 = _detect.mu_null(cfg)
    trials = a.calibration_trials or math.ceil(100 * params.N)
    threshold = sq.calibrate_threshold(params, cfg, 1.0 / params.N, trials, seed=a.seed)
    law = HubColumnLaw(params, tuple(range(params.k)))
    if not a.planted:
        law = law.null_law()
    t = a.t or sq.vstat_budget(params, a.C)
    oracle = sq.OracleSpec("VSTAT", t, a.mode, a.seed)
    dec = sq.sq_detect(law, oracle, cfg, threshold, mu0)
    _emit({"distribution": "planted" if a.planted else "null", "params": params.to_dict(),
           "t": t, "mode": a.mode, "hub_threshold": threshold, "query_value": dec.query_value,
           "tolerance": dec.tolerance,
           "tolerance_band": [dec.query_value - dec.tolerance, dec.query_value + dec.tolerance],
           "decision_threshold": dec.threshold_used, "verdict": dec.verdict,
           "query_count": dec.query_count})
    return 0


def cmd_compare(a) -> int:
    params = _params(a)
    seed = a.seed if a.seed is not None else 0
    res = harness.compare(params, a.trials, seed, model=a.model, detectors=a.detectors.split(","),
                          threads=a.threads)
    res.pop("rows")
    _emit(res, a.out)
    return 0


def cmd_sweep(a) -> int:
    cfg = harness.ExperimentConfig.from_json(a.config)
    if a.seed is not None:
        cfg.root_seed = a.seed
    out = a.out or cfg.output
    res = harness.run_sweep(cfg, threads=a.threads, out=out)
    if out is None:
        sys.stdout.write(res.csv_text)
    else:
        _emit({"csv": str(out), "summary": str(Path(out).with_suffix(".summary.json")),
               "rows": len(res.rows)})
    return 0


def cmd_validate(a) -> int:
    rep = harness.run_validate(a.level)
    _emit(rep.to_dict(), a.out)
    return 0 if rep.passed else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hiddenhubs", description="Hidden hubs: generators, detectors, "
                                 "theory calculators, SQ oracles and sweeps.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample an instance and write it with its ground-truth sidecar")
    _add_params(g)
    g.add_argument("--model", choices=("null", "general", "submatrix", "heterogeneous"), default="general")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="matrix path; the sidecar gets a .json suffix")
    g.add_argument("--variance-cycle", default="3,4", help="heterogeneous model: comma-separated variances")
    g.add_argument("--special-size", default="auto", help="heterogeneous model: |T_i| or 'auto'")
    g.add_argument("--noise-budget", type=int, default=0, help="corrupted planted entries per hub row")
    g.add_argument("--placement", choices=("worst_case_band", "uniform_random"), default="worst_case_band")
    g.add_argument("--regime", choices=("auto",) + _detect.REGIMES, default="auto")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("detect", help="run detectors on a written instance")
    d.add_argument("--input", required=True)
    d.add_argument("--detector", default="chi2", help="chi2, degree, spectral, a comma list, or all")
    d.add_argument("--regime", choices=("auto",) + _detect.REGIMES, default="auto")
    d.add_argument("--block-rows", type=int, default=512)
    d.add_argument("--scores", help="prefix for binary score files")
    d.add_argument("--out")
    d.set_defaults(func=cmd_detect)

    t = sub.add_parser("theory", help="closed-form and numerical reports")
    t.add_argument("what", choices=("chi2", "truncation", "thresholds", "detectability", "sda",
                                    "query-bounds", "corr"))
    t.add_argument("--n", type=int)
    t.add_argument("--N", type=int)
    t.add_argument("--k", type=str)
    t.add_argument("--s", type=str)
    t.add_argument("--sigma0-sq", type=float, default=1.0)
    t.add_argument("--sigma1-sq", type=float, default=None)
    t.add_argument("--eps", type=float)
    t.add_argument("--mu", type=float, default=0.0)
    t.add_argument("--truncation", type=float)
    t.add_argument("--regime", default="auto")
    t.add_argument("--c", type=float, default=1.0)
    t.add_argument("--ell", type=int)
    t.add_argument("--case", choices=("zero_mu_subcritical", "at_threshold", "slightly_above", "equal_sigmas"))
    t.add_argument("--delta", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--C", type=float, default=2.0)
    t.add_argument("--r", type=int)
    t.set_defaults(func=cmd_theory)

    q = sub.add_parser("sq-demo", help="single VSTAT query detection on a null or planted column law")
    _add_params(q)
    q.add_argument("--planted", action="store_true")
    q.add_argument("--mode", choices=sq.MODES, default="exact")
    q.add_argument("--C", type=float, default=4.0)
    q.add_argument("--t", type=int)
    q.add_argument("--regime", choices=("auto",) + _detect.REGIMES, default="auto")
    q.add_argument("--calibration-trials", type=int)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_sq_demo)

    c = sub.add_parser("compare", help="paired recovery rates of detectors on identical instances")
    _add_params(c)
    c.add_argument("--model", choices=("general", "submatrix"), default="general")
    c.add_argument("--detectors", default="chi2,degree,spectral")
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--seed", type=int)
    c.add_argument("--threads", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="run a JSON-configured sweep")
    w.add_argument("--config", required=True)
    w.add_argument("--out")
    w.add_argument("--threads", type=int, default=1, help="0 = all cores")
    w.add_argument("--seed", type=int, help="override root_seed")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="numerical self-checks")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OracleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HubsError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
