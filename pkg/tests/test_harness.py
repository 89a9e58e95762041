import csv
import io
import json
import math

import numpy as np
import pytest

from hiddenhubs import detect as D
from hiddenhubs import harness as H
from hiddenhubs.cli import main
from hiddenhubs.errors import ParameterError
from hiddenhubs.matrix_io import load_instance, read_matrix, save_instance, write_matrix
from hiddenhubs.model import ModelParams, NoisePolicy, corrupt, plant_general, plant_heterogeneous


def small_cfg(**kw):
    base = {"grid": {"n": [120], "k": [12], "sigma1_sq": [3.0]}, "detectors": ["chi2", "degree"],
            "trials": 3, "root_seed": 5}
    base.update(kw)
    return H.ExperimentConfig.from_dict(base)


@pytest.mark.parametrize("rule, n, want", [
    ("n^0.4", 16384, 49),
    ("n^0.5", 4096, 64),
    ("sqrt(n)*ln(n)^(1/4)", 4096, 109),
    ("2*sqrt(n*ln(n))", 4096, 370),
    ("sqrt(n)/2", 4096, 32),
    ("n^0.45", 1000, 23),
])
def test_resolve_size_rules(rule, n, want):
    assert H.resolve_size(rule, n=n) == want


def test_eval_rule_rejects_code():
    for bad in ("__import__('os')", "n.real", "[n]", "open('x')", "lambda: 1", "m + 1"):
        with pytest.raises(ParameterError):
            H.eval_rule(bad, n=10)
    with pytest.raises(ParameterError):
        H.eval_rule("ln(0)", n=10)
    assert H.eval_rule("pow(n, 2) - e^0", n=3) == pytest.approx(8.0)
    assert H.resolve_size(7) == 7
    with pytest.raises(ParameterError):
        H.resolve_size(2.5)


def test_min_special_size():
    size = H.min_special_size(8192, 8192, 0.5, [3.0, 4.0])
    need = math.sqrt(2) * math.log(8192) * math.sqrt(math.log(8192))
    mass = lambda m: sum(8192 ** (-1 / [3.0, 4.0][j % 2]) for j in range(m))
    assert mass(size) >= need > mass(size - 1)
    with pytest.raises(ParameterError):
        H.min_special_size(100, 100, 0.5, [2.0])


def test_config_strict_keys(tmp_path):
    with pytest.raises(ParameterError):
        small_cfg(colour="red")
    with pytest.raises(ParameterError):
        H.ExperimentConfig.from_dict({"grid": {"n": [10], "k": [2], "eps": [0.5], "q": [1]}})
    with pytest.raises(ParameterError):
        H.ExperimentConfig.from_dict({"grid": {"n": [10], "k": [2], "eps": [0.5], "sigma1_sq": [3]}})
    with pytest.raises(ParameterError):
        small_cfg(noise={"budget_per_row": 1, "where": "x"})
    with pytest.raises(ParameterError):
        small_cfg(trials=0)
    with pytest.raises(ParameterError):
        small_cfg(detectors=["chi2", "magic"])
    with pytest.raises(ParameterError):
        small_cfg(model="heterogeneous")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParameterError):
        H.ExperimentConfig.from_json(p)


def test_config_round_trip():
    cfg = small_cfg(noise={"budget_per_row": 2})
    again = H.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_trial_seed():
    assert H.trial_seed(0, 0, 0) == H.trial_seed(0, 0, 0)
    seeds = {H.trial_seed(r, c, t) for r in range(3) for c in range(3) for t in range(3)}
    assert len(seeds) == 27 and all(0 <= s < 2 ** 63 for s in seeds)


def test_single_cell_single_row():
    res = H.run_sweep(small_cfg(trials=1, detectors=["chi2"]))
    lines = res.csv_text.strip().split("\n")
    assert lines[0] == ",".join(H.CSV_COLUMNS)
    assert len(lines) == 2 and len(res.rows) == 1


def test_sweep_rows_and_summary(tmp_path):
    out = tmp_path / "s.csv"
    res = H.run_sweep(small_cfg(), out=out)
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 6
    assert [r["detector"] for r in rows] == ["chi2"] * 3 + ["degree"] * 3
    assert [int(r["trial"]) for r in rows] == [0, 1, 2] * 2
    assert all(r["status"] == "ok" and r["runtime_ms"] == "" for r in rows)
    summ = json.loads(out.with_suffix(".summary.json").read_text())
    cell = summ["cells"][0]
    lo, hi = cell["wilson95"]
    assert lo <= cell["rate"] <= hi
    assert res.summary == summ


def test_sweep_deterministic_and_parallel_equals_serial():
    cfg = small_cfg(grid={"n": [100, 150], "k": ["n^0.5"], "eps": [0.5]})
    a = H.run_sweep(cfg).csv_text
    assert a == H.run_sweep(cfg).csv_text
    assert a == H.run_sweep(cfg, threads=2).csv_text
    assert a != H.run_sweep(small_cfg(grid={"n": [100, 150], "k": ["n^0.5"], "eps": [0.5]},
                                      root_seed=6)).csv_text


def test_sweep_records_regime_error():
    # sigma1^2 = 1.5 has no auto regime; chi2 fails per row while degree still runs
    res = H.run_sweep(small_cfg(grid={"n": [80], "k": [8], "sigma1_sq": [1.5]}))
    status = {(r["detector"], r["status"]) for r in res.rows}
    assert status == {("chi2", "regime_error"), ("degree", "ok")}
    bad = H.run_sweep(small_cfg(grid={"n": [80], "k": [200], "sigma1_sq": [3.0]}, detectors=["chi2"]))
    assert all(r["status"] == "parameter_error" for r in bad.rows)


def test_sweep_heterogeneous_and_noise():
    cfg = H.ExperimentConfig.from_dict({
        "grid": {"n": [200], "k": [5], "eps": [0.5]}, "model": "heterogeneous", "trials": 2,
        "heterogeneous": {"variance_cycle": [3.0, 4.0], "special_size": 60}})
    assert all(r["status"] == "ok" for r in H.run_sweep(cfg).rows)
    noisy = small_cfg(noise={"budget_per_row": 2}, detectors=["chi2"])
    assert all(r["status"] == "ok" for r in H.run_sweep(noisy).rows)


def test_timing_column():
    res = H.run_sweep(small_cfg(trials=1, timing=True))
    assert all(r["runtime_ms"] > 0 for r in res.rows)


def test_compare_paired():
    p = ModelParams.square(150, 15, sigma1_sq=3.0)
    out = H.compare(p, 4, root_seed=1, detectors=("chi2", "degree"))
    assert set(out["rates"]) == {"chi2", "degree"}
    pair = out["paired"]["chi2-degree"]
    diff = out["rates"]["chi2"]["rate"] - out["rates"]["degree"]["rate"]
    assert pair["difference"] == pytest.approx(diff)
    assert pair["difference"] == pytest.approx((pair["only_chi2"] - pair["only_degree"]) / 4)


def test_wilson_interval():
    lo, hi = H.wilson_interval(10, 20)
    assert lo == pytest.approx(0.299298, abs=1e-5) and hi == pytest.approx(0.700702, abs=1e-5)
    assert all(math.isnan(v) for v in H.wilson_interval(0, 0))


# ---------------------------------------------------------------- files

def test_matrix_file_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((7, 5))
    write_matrix(tmp_path / "m.bin", a, flags=3)
    b, flags = read_matrix(tmp_path / "m.bin")
    assert flags == 3 and b.tobytes() == a.tobytes()
    (tmp_path / "junk.bin").write_bytes(b"nope" + bytes(40))
    with pytest.raises(Exception):
        read_matrix(tmp_path / "junk.bin")


def test_instance_round_trip_detect_bit_exact(tmp_path):
    p = ModelParams.square(150, 10, sigma1_sq=3.0)
    inst = plant_general(p, 9)
    cfg = D.truncation_level("supercritical", p)
    inst = corrupt(inst, NoisePolicy(2), cfg, seed=1)
    save_instance(inst, tmp_path / "i.bin")
    back = load_instance(tmp_path / "i.bin")
    assert back.dense().tobytes() == inst.dense().tobytes()
    assert back.hub_rows == inst.hub_rows
    assert back.corrupted_entries == inst.corrupted_entries
    a, b = D.detect(inst), D.detect(back)
    assert a.scores.tobytes() == b.scores.tobytes() and a.selected == b.selected


def test_heterogeneous_round_trip(tmp_path):
    p = ModelParams(100, 80, 3, 5, 1.0, 3.0)
    inst = plant_heterogeneous(p, [[3.0, 4.0] * 10] * 3, 2)
    save_instance(inst, tmp_path / "h.bin")
    back = load_instance(tmp_path / "h.bin")
    assert back.dense().tobytes() == inst.dense().tobytes()
    assert D.evaluate(D.detect(back), back) == D.evaluate(D.detect(inst), inst)


# ---------------------------------------------------------------- CLI

def run_cli(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_cli_generate_then_detect(tmp_path, capsys):
    path = str(tmp_path / "g.bin")
    code, _ = run_cli(capsys, "generate", "--n", "150", "--k", "10", "--sigma1-sq", "3", "--seed", "4",
                      "--out", path)
    assert code == 0
    code, out = run_cli(capsys, "detect", "--input", path)
    assert code == 0
    got = json.loads(out.out)
    p = ModelParams.square(150, 10, sigma1_sq=3.0)
    inst = plant_general(p, 4)
    ref = D.detect(inst)
    assert got["selected"] == list(ref.selected)
    assert got["metrics"]["exact"] == D.evaluate(ref, inst).exact


def test_cli_theory_chi2(capsys):
    code, out = run_cli(capsys, "theory", "chi2", "--sigma1-sq", "1.5")
    assert code == 0
    assert json.loads(out.out)["value"] == pytest.approx(0.154701, abs=1e-6)


def test_cli_exit_codes(tmp_path, capsys):
    code, out = run_cli(capsys, "generate", "--n", "10", "--k", "50", "--out", str(tmp_path / "x.bin"))
    assert code == 2 and "error" in out.err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": {"n": [50], "k": [5], "eps": [0.5]}, "bogus": 1}))
    code, _ = run_cli(capsys, "sweep", "--config", str(cfg))
    assert code == 2
    with pytest.raises(SystemExit) as exc:
        main(["theory", "nonsense"])
    assert exc.value.code == 2
    code, _ = run_cli(capsys, "detect", "--input", str(tmp_path / "missing.bin"))
    assert code == 2


def test_cli_sweep_seed_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": {"n": [60], "k": [6], "eps": [0.5]}, "trials": 2}))
    code, a = run_cli(capsys, "sweep", "--config", str(cfg), "--seed", "3")
    assert code == 0
    ref = H.run_sweep(H.ExperimentConfig.from_dict({"grid": {"n": [60], "k": [6], "eps": [0.5]},
                                                   "trials": 2, "root_seed": 3}))
    assert a.out == ref.csv_text


def test_cli_sq_demo(capsys):
    code, out = run_cli(capsys, "sq-demo", "--n", "200", "--k", "80", "--eps", "0.5", "--planted",
                        "--calibration-trials", "20000", "--regime", "supercritical")
    assert code == 0
    d = json.loads(out.out)
    assert d["verdict"] == "planted" and d["query_count"] == 1
    lo, hi = d["tolerance_band"]
    assert lo < d["query_value"] < hi


def test_cli_compare(capsys):
    code, out = run_cli(capsys, "compare", "--n", "100", "--k", "10", "--sigma1-sq", "3", "--trials", "2",
                        "--detectors", "chi2,degree", "--seed", "1")
    assert code == 0
    assert set(json.loads(out.out)["rates"]) == {"chi2", "degree"}


# ---------------------------------------------------------------- validation

def test_validate_fast_passes():
    rep = H.run_validate("fast")
    assert rep.passed, [c for c in rep.checks if not c.passed]
    assert rep.seconds < 60


def test_validate_catches_flipped_gamma():
    rep = H.run_validate("fast", gamma_fn=lambda s0, s1: -D.gamma(s0, s1))
    failed = {c.name for c in rep.checks if not c.passed}
    assert {"mu0_bounds_critical", "mu0_bounds_supercritical"} <= failed


def test_validate_catches_missing_truncation():
    def untruncated(x, cfg):
        return np.exp(cfg.gamma * np.square(np.asarray(x, dtype=np.float64)))
    rep = H.run_validate("fast", amplify_fn=untruncated)
    failed = {c.name for c in rep.checks if not c.passed}
    assert "amplifier_cap" in failed


def test_cli_validate_exit_code(capsys):
    code, out = run_cli(capsys, "validate", "--level", "fast")
    assert code == 0 and json.loads(out.out)["passed"]
