import math

import numpy as np
import pytest
from scipy import stats

from hiddenhubs.detect import truncation_level
from hiddenhubs.errors import ParameterError
from hiddenhubs.model import (HubColumnLaw, ModelParams, NoisePolicy, PlantedSupport, corrupt,
                              corruption_band, generate, noise_budget, plant_general,
                              plant_heterogeneous, plant_submatrix, sample_hub_column, sample_null,
                              tau)


def test_params_validation():
    with pytest.raises(ParameterError):
        ModelParams(2, 2, 1, 1, sigma0_sq=0.0)
    with pytest.raises(ParameterError):
        ModelParams(10, 10, 11, 1)
    with pytest.raises(ParameterError):
        ModelParams(10, 10, 1, 11)
    with pytest.raises(ParameterError):
        ModelParams(10, 10, 1, 1, sigma1_sq=-1.0)


def test_eps_and_delta_are_derived():
    p = ModelParams(4096, 4096, 64, 64, 1.0, 3.0)
    assert p.eps == pytest.approx(0.5)
    assert p.delta == pytest.approx(0.0, abs=1e-12)
    assert ModelParams(10, 10, 1, 1, 1.0, 1.0).eps == pytest.approx(-0.5)
    q = ModelParams.from_eps(100, 50, 3, 4, 0.25, sigma0_sq=2.0)
    assert q.sigma1_sq == pytest.approx(5.0)
    assert ModelParams.from_dict(q.to_dict()) == q


def test_null_mean_clt():
    p = ModelParams.square(1000, 1, sigma1_sq=2.0)
    a = sample_null(p, 7).dense()
    assert a.shape == (1000, 1000)
    assert abs(a.mean()) <= 4 / math.sqrt(a.size)
    assert a.var() == pytest.approx(1.0, abs=4 * math.sqrt(2 / a.size))


def test_generation_is_deterministic():
    p = ModelParams.square(200, 10, sigma1_sq=3.0)
    a, b = plant_general(p, 11), plant_general(p, 11)
    assert np.array_equal(a.dense(), b.dense())
    assert a.hub_rows == b.hub_rows
    assert not np.array_equal(a.dense(), plant_general(p, 12).dense())


def test_streaming_rows_match_materialized():
    p = ModelParams(150, 97, 6, 9, 1.0, 3.0)
    lazy = plant_general(p, 3, materialize=False)
    full = lazy.materialize().dense()
    blocks = np.vstack([b for _, b in lazy.row_blocks(13)])
    assert np.array_equal(blocks, full)
    assert np.array_equal(lazy.row_block(40, 41)[0], full[40])


def test_full_row_planting():
    p = ModelParams(50, 20, 1, 50, 1.0, 4.0, mu=1.0)
    inst = plant_general(p, 5)
    (i,) = inst.hub_rows
    assert np.array_equal(inst.support.special_columns[i], np.arange(50))
    assert np.all(inst.support.special_variance[i] == 4.0)


def test_support_validity():
    p = ModelParams(300, 120, 8, 17, 1.0, 3.0)
    inst = plant_general(p, 9)
    inst.support.validate(p.N, p.n)
    assert len(inst.hub_rows) == 8
    for i in inst.hub_rows:
        assert inst.support.special_columns[i].size == 17


def test_planted_variance_pooled():
    p = ModelParams.square(500, 22, sigma0_sq=1.0, sigma1_sq=3.0)
    vals = []
    for seed in range(50):
        inst = plant_general(p, seed)
        a = inst.dense()
        for i in inst.hub_rows:
            vals.append(a[i, inst.support.special_columns[i]])
    x = np.concatenate(vals)
    # se of a sample variance of Gaussian data: sigma^2 sqrt(2/m)
    assert abs(x.var() - 3.0) <= 3 * 3.0 * math.sqrt(2 / x.size)


def test_special_sets_independent_across_rows():
    # n=6, k=2: P(T_1 = T_2) = 1/C(6,2) = 1/15
    p = ModelParams(6, 4, 2, 2, 1.0, 3.0)
    R = 3000
    eq = 0
    for seed in range(R):
        inst = plant_general(p, seed, materialize=False)
        r0, r1 = inst.hub_rows
        eq += np.array_equal(inst.support.special_columns[r0], inst.support.special_columns[r1])
    assert stats.binomtest(eq, R, 1 / 15).pvalue > 1e-3


def test_submatrix_shares_columns():
    p = ModelParams.square(100, 10, sigma1_sq=3.0)
    inst = plant_submatrix(p, 2)
    cols = [tuple(inst.support.special_columns[i]) for i in inst.hub_rows]
    assert len(set(cols)) == 1
    with pytest.raises(ParameterError):
        plant_submatrix(ModelParams(100, 100, 5, 10, 1.0, 3.0), 2)


def test_heterogeneous_tau_example():
    p = ModelParams(16, 4, 1, 4, 1.0, 2.0)
    inst = plant_heterogeneous(p, [[2.0, 2.0, 2.0, 2.0]], 0)
    assert tau(p, inst.support)[0] == pytest.approx(1.0, abs=1e-15)


def test_tau_limits_and_homogeneous_identity():
    p = ModelParams(400, 10, 2, 30, 1.0, 3.0)
    inst = plant_general(p, 4, materialize=False)
    assert np.allclose(tau(p, inst.support), 30 * 400 ** (-1 / 3))
    big = plant_heterogeneous(p, [[1e12] * 7, [1e12] * 5], 1, materialize=False)
    assert np.allclose(tau(p, big.support), [7, 5])


def test_heterogeneous_warns_and_rejects():
    p = ModelParams(50, 10, 1, 3, 1.0, 3.0)
    with pytest.warns(UserWarning):
        plant_heterogeneous(p, [[2.0, 3.0]], 0)
    with pytest.raises(ParameterError):
        plant_heterogeneous(p, [[]], 0)


def test_heterogeneous_two_groups():
    p = ModelParams(400, 100, 4, 40, 1.0, 3.0)
    row = [3.0, 4.0] * 40
    g3, g4 = [], []
    for seed in range(30):
        inst = plant_heterogeneous(p, [row] * 4, seed)
        a = inst.dense()
        for i in inst.hub_rows:
            c, v = inst.support.special_columns[i], inst.support.special_variance[i]
            g3.append(a[i, c[v == 3.0]])
            g4.append(a[i, c[v == 4.0]])
    x3, x4 = np.concatenate(g3), np.concatenate(g4)
    assert abs(x3.var() - 3.0) <= 4 * 3.0 * math.sqrt(2 / x3.size)
    assert abs(x4.var() - 4.0) <= 4 * 4.0 * math.sqrt(2 / x4.size)


def test_homogeneous_heterogeneous_agree_in_distribution():
    p = ModelParams(300, 60, 5, 12, 1.0, 3.0)
    a = plant_heterogeneous(p, [[3.0] * 12] * 5, 8)
    b = plant_general(p, 8)
    # same seed streams: identical support and values
    assert a.hub_rows == b.hub_rows
    assert np.array_equal(a.dense(), b.dense())


def test_column_law_mixture_variance():
    p = ModelParams(10, 20, 3, 1, 1.0, 3.0)
    for coupling in ("joint", "independent"):
        cols = sample_hub_column(p, [0, 4, 7], seed=3, size=200_000, coupling=coupling)
        v = cols[:, [0, 4, 7]].var(axis=0)
        # 0.1*3 + 0.9*1; var of the sample variance bounded via fourth moment
        x = cols[:, 0]
        se = math.sqrt(np.var(x ** 2) / x.size)
        assert np.all(np.abs(v - 1.2) < 4 * se)
        assert cols[:, 1].var() == pytest.approx(1.0, abs=0.02)


def test_column_law_full_weight_and_empty_set():
    p = ModelParams(10, 8, 2, 10, 1.0, 4.0, mu=2.0)
    cols = sample_hub_column(p, [1, 2], seed=1, size=50_000)
    assert cols[:, 1].mean() == pytest.approx(2.0, abs=0.05)
    assert cols[:, 1].var() == pytest.approx(4.0, rel=0.05)
    null = HubColumnLaw(p, ())
    assert not null.planted
    x = sample_hub_column(p, [], seed=1, size=50_000)
    assert x.mean() == pytest.approx(0.0, abs=0.02)


def test_noise_budget_and_band():
    assert noise_budget(0.5) == 3
    lo, hi = corruption_band(3.416, 0.5, 1.0)
    assert lo == pytest.approx(2.830, abs=1e-3)
    assert hi == 3.416


def test_corrupt_budget_zero_is_identity():
    p = ModelParams.square(200, 20, sigma1_sq=3.0)
    inst = plant_general(p, 1)
    cfg = truncation_level("supercritical", p)
    assert corrupt(inst, NoisePolicy(0), cfg) is inst


def test_corrupt_changes_only_logged_cells():
    p = ModelParams.square(400, 40, sigma1_sq=3.0)
    inst = plant_general(p, 2)
    cfg = truncation_level("supercritical", p)
    out = corrupt(inst, NoisePolicy(3), cfg)
    before, after = inst.dense(), out.dense()
    changed = set(zip(*np.nonzero(before != after)))
    logged = {(r, c) for r, c, _o, _n in out.corrupted_entries}
    assert changed == logged
    lo, hi = corruption_band(cfg.M, cfg.eps, 1.0)
    for r, c, old, new in out.corrupted_entries:
        assert lo <= abs(old) <= hi and new == 0.0
        assert c in inst.support.special_columns[r]
    per_row = {}
    for r, *_ in out.corrupted_entries:
        per_row[r] = per_row.get(r, 0) + 1
    for i in inst.hub_rows:
        assert per_row.get(i, 0) + out.shortfall.get(i, 0) == 3


def test_corrupt_streaming_matches_materialized():
    p = ModelParams.square(300, 30, sigma1_sq=3.0)
    cfg = truncation_level("supercritical", p)
    a = corrupt(plant_general(p, 6, materialize=False), NoisePolicy(2, "uniform_random"), cfg)
    b = corrupt(plant_general(p, 6), NoisePolicy(2, "uniform_random"), cfg)
    assert a.corrupted_entries == b.corrupted_entries
    assert np.array_equal(a.dense(), b.dense())


def test_corrupt_budget_too_large():
    p = ModelParams.square(100, 2, sigma1_sq=3.0)
    with pytest.raises(ParameterError):
        corrupt(plant_general(p, 1), NoisePolicy(3), truncation_level("supercritical", p))


def test_support_roundtrip():
    p = ModelParams(60, 30, 3, 5, 1.0, 3.0)
    s = plant_general(p, 1).support
    t = PlantedSupport.from_dict(s.to_dict())
    assert t.hub_rows == s.hub_rows
    for i in s.hub_rows:
        assert np.array_equal(t.special_columns[i], s.special_columns[i])


def test_generate_dispatch():
    p = ModelParams.square(50, 5, sigma1_sq=3.0)
    assert generate("null", p, 1).support is None
    assert generate("submatrix", p, 1).model == "submatrix"
    with pytest.raises(ParameterError):
        generate("heterogeneous", p, 1)
    with pytest.raises(ParameterError):
        generate("bogus", p, 1)


@pytest.mark.parametrize("model", ["general", "submatrix"])
def test_cellwise_moments_over_reseeds(model):
    # per-cell mean/variance over reseeds against model values, with support held fixed
    p = ModelParams.square(200, 10, sigma1_sq=3.0)
    R = 200
    fixed = plant_general(p, 0, materialize=False) if model == "general" else plant_submatrix(p, 0, materialize=False)
    from hiddenhubs.model import generate_rows
    acc = np.zeros((p.N, p.n))
    acc2 = np.zeros((p.N, p.n))
    for seed in range(1, R + 1):
        a = generate_rows(p, seed, fixed.support, 0, p.N)
        acc += a
        acc2 += a * a
    var_model = np.ones((p.N, p.n))
    for i in fixed.hub_rows:
        var_model[i, fixed.support.special_columns[i]] = 3.0
    mean = acc / R
    # standardized cell means are N(0, 1/R) under the model
    z = mean / np.sqrt(var_model / R)
    assert np.abs(z).max() < 5.5
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    ratio = (acc2 / R) / var_model
    assert ratio.mean() == pytest.approx(1.0, abs=4 * math.sqrt(2 / (R * z.size)))
