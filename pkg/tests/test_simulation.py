import json

import numpy as np
import pytest

from funcextremile.curves import Curve, CurveSample, Grid
from funcextremile.errors import CampaignError, EmptyNeighborhoodError
from funcextremile.extremile import gaussian_extremile
from funcextremile.regression import ExtremileRegression
from funcextremile.simulation import (ScenarioConfig, attach_pmse, bspline_basis, crossing_in_rep,
                                      crossing_rate, gen_scenario, oracle_estimator, run_mc,
                                      run_pmse, scenario_basis, true_extremile, true_extremiles,
                                      write_amse_csv, write_audit_jsonl, write_crossing_csv,
                                      write_pmse_csv)


def cox_de_boor(i, p, knots, x):
    """Textbook recursion with the right end of the last span closed."""
    if p == 0:
        last = knots[i + 1] == knots[-1] and knots[i] < knots[i + 1]
        return 1.0 if knots[i] <= x < knots[i + 1] or (last and x == knots[-1]) else 0.0
    left = right = 0.0
    if knots[i + p] > knots[i]:
        left = (x - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(i, p - 1, knots, x)
    if knots[i + p + 1] > knots[i + 1]:
        right = ((knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1])
                 * cox_de_boor(i + 1, p - 1, knots, x))
    return left + right


KNOTS7 = [0, 0, 0, 0, 0.25, 0.5, 0.75, 1, 1, 1, 1]
SMALL = dict(n=40, S=30, B_reps=4, seed=5)


def test_bspline_partition_of_unity_and_support():
    g = Grid.uniform(101)
    basis = np.array([c.values for c in bspline_basis(7, g)])
    np.testing.assert_allclose(basis.sum(axis=0), 1.0, atol=1e-10)
    assert np.all(basis >= 0)
    for j in range(7):
        support = g.points[basis[j] > 0]
        lo, hi = KNOTS7[j], KNOTS7[j + 4]
        assert support.min() >= lo - 1e-12 and support.max() <= hi + 1e-12


def test_bspline_matches_recursion_oracle():
    g = Grid.uniform(21)
    basis = bspline_basis(7, g)
    for k, s in enumerate(g.points):
        for j in range(7):
            assert basis[j].values[k] == pytest.approx(cox_de_boor(j, 3, KNOTS7, s), abs=1e-13)
    mid = np.flatnonzero(g.points == 0.5)[0]
    assert [round(b.values[mid], 12) for b in basis] == pytest.approx(
        [cox_de_boor(j, 3, KNOTS7, 0.5) for j in range(7)], abs=1e-12)


def test_bspline_needs_cubic_order():
    with pytest.raises(ValueError):
        bspline_basis(3, Grid.uniform(5))


def test_scenario_functions():
    g = Grid.uniform(11)
    a = scenario_basis("A", g)
    assert a.shape == (5, 11) and np.all(a[:, 0] == 0) and np.all(a[:, -1] == 0)
    b = scenario_basis("B", g)
    np.testing.assert_allclose(b[0], 1.0)
    np.testing.assert_allclose(b[4], np.cos(40 * np.pi * g.points))


def test_config_validation():
    for bad in (dict(n=10), dict(S=5), dict(tau_grid=(0.5, 0.2)), dict(B_reps=0),
                dict(split_fraction=1.0), dict(scenario="C"), dict(kernel="box")):
        with pytest.raises(ValueError):
            ScenarioConfig(**bad)
    assert ScenarioConfig(scenario="b").scenario == "B"
    assert ScenarioConfig(n=200).n_train == 160


def test_generation_is_deterministic_and_rep_specific():
    cfg = ScenarioConfig(**SMALL)
    a = gen_scenario(cfg, 3)
    b = gen_scenario(cfg, 3)
    c = gen_scenario(cfg, 4)
    assert np.array_equal(a[0].values, b[0].values) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])


def test_degenerate_coefficients():
    cfg = ScenarioConfig(coef_scale=0.0, beta0=1.5, **SMALL)
    sample, y, sigma = gen_scenario(cfg, 0)
    assert np.all(sample.values == 0) and np.all(sigma == 1)
    eps = np.random.default_rng(np.random.SeedSequence(5, spawn_key=(0,)))
    eps.standard_normal((40, 5))
    np.testing.assert_allclose(y, 1.5 + 0.25 * eps.standard_normal(40), atol=1e-15)


@pytest.mark.parametrize("scenario, means, sds", [
    ("A", [0, 0, 0, 0, 0], [0.5, 0.5, 0.25, 0.05, 0.05]),
    ("B", [0, 2, 0, 0, 0], [0.25, 1.0, 0.5, 0.05, 0.05]),
])
def test_coefficient_moments(scenario, means, sds):
    cfg = ScenarioConfig(scenario=scenario, n=10_000, S=200, seed=9)
    sample, _, _ = gen_scenario(cfg, 0)
    basis = scenario_basis(scenario, cfg.grid)
    coefs = np.linalg.lstsq(basis.T, sample.values.T, rcond=None)[0].T
    n = cfg.n
    for k in range(5):
        se_mean = sds[k] / np.sqrt(n)
        se_var = sds[k] ** 2 * np.sqrt(2 / (n - 1))
        assert abs(coefs[:, k].mean() - means[k]) < 3 * se_mean
        assert abs(coefs[:, k].var(ddof=1) - sds[k] ** 2) < 3 * se_var


def test_truth_formula():
    cfg = ScenarioConfig(beta0=0.7, **SMALL)
    g = cfg.grid
    zero = Curve.constant(g, 0.0)
    assert true_extremile(zero, 0.9, cfg) == pytest.approx(0.7 + 0.25 * gaussian_extremile(0.9))
    x = Curve.from_function(g, lambda s: s)
    lin = 0.7 + np.sum(g.quad_weights * 2 * np.cos(2 * np.pi * g.points) * g.points)
    assert true_extremile(x, 0.5, cfg) == pytest.approx(lin, abs=1e-14)
    vals = [true_extremile(x, t, cfg) for t in (0.1, 0.5, 0.9)]
    assert vals[0] < vals[1] < vals[2]


def test_crossing_detection():
    ok = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]])
    assert not crossing_in_rep(ok)
    bad = ok.copy()
    bad[1, 1] = -0.1
    assert crossing_in_rep(bad)
    assert crossing_rate([ok] * 9 + [bad]) == pytest.approx(0.1)
    gap = np.array([[1.0, np.nan, 0.5]])
    assert crossing_in_rep(gap)
    assert not crossing_in_rep(np.array([[1.0], [0.0]]))


def test_crossing_agrees_with_all_pairs_scan():
    rng = np.random.default_rng(0)
    for _ in range(200):
        est = np.cumsum(rng.normal(0.3, 0.5, size=(4, 5)), axis=1)
        est[rng.uniform(size=est.shape) < 0.15] = np.nan
        scan = any(est[i, j] > est[i, k] for i in range(4) for j in range(5)
                   for k in range(j + 1, 5))
        assert crossing_in_rep(est) == scan


def test_truth_as_estimator_gives_zero_error():
    cfg = ScenarioConfig(**SMALL)
    res = run_mc(cfg, estimator=oracle_estimator, with_quantile=False)
    assert np.all(res.amse == 0) and np.all(res.sd == 0)
    assert res.crossing_rate_extremile == 0.0
    apmse, sd = run_pmse(cfg, estimator=oracle_estimator)
    assert np.all(apmse == 0) and np.all(sd == 0)


def test_single_replication_reports_zero_sd_with_flag():
    res = run_mc(ScenarioConfig(**{**SMALL, "B_reps": 1}), with_quantile=False)
    assert not res.sd_defined and np.all(res.sd == 0)


def test_median_only_campaign_is_local_linear_mean():
    cfg = ScenarioConfig(tau_grid=(0.5,), **SMALL)
    res = run_mc(cfg, with_quantile=False)
    mses = []
    for rep in range(cfg.B_reps):
        sample, y, _ = gen_scenario(cfg, rep)
        est = ExtremileRegression().fit(sample, y).local_linear_mean(sample)
        truth = true_extremiles(sample, [0.5], cfg)[:, 0]
        mses.append(np.mean((est - truth) ** 2))
    np.testing.assert_allclose(res.per_rep_mse[:, 0], mses, rtol=1e-12)


def test_campaigns_are_bitwise_deterministic_and_prefix_stable():
    cfg = ScenarioConfig(**SMALL)
    a = run_mc(cfg)
    b = run_mc(cfg)
    assert np.array_equal(a.per_rep_mse, b.per_rep_mse)
    assert a.crossing_rate_quantile == b.crossing_rate_quantile
    shorter = run_mc(cfg.with_updates(B_reps=2))
    assert np.array_equal(shorter.per_rep_mse, a.per_rep_mse[:2])


def test_failed_replications_are_counted_then_fatal():
    calls = {"n": 0}

    def flaky(train, y, points, taus, config, **kw):
        calls["n"] += 1
        if calls["n"] == 1:
            raise EmptyNeighborhoodError("synthetic failure")
        return oracle_estimator(train, y, points, taus, config)

    cfg = ScenarioConfig(**{**SMALL, "B_reps": 20})
    res = run_mc(cfg, estimator=flaky, with_quantile=False)
    assert res.failed_reps == [0] and res.reps_used == 19
    assert any(a.get("error") for a in res.audit)

    def always(*a, **k):
        raise EmptyNeighborhoodError("synthetic failure")

    with pytest.raises(CampaignError):
        run_mc(cfg, estimator=always, with_quantile=False)


def test_nan_cells_are_excluded_from_the_mean():
    def holes(train, y, points, taus, config, **kw):
        est = oracle_estimator(train, y, points, taus, config) + 0.1
        est[0, :] = np.nan
        return est

    res = run_mc(ScenarioConfig(**SMALL), estimator=holes, with_quantile=False)
    np.testing.assert_allclose(res.amse, 0.01, rtol=1e-10)
    assert res.failed_cells == SMALL["B_reps"] * 9


def test_pmse_split_sizes():
    seen = []

    def spy(train, y, points, taus, config, **kw):
        seen.append((train.n, points.n))
        return oracle_estimator(train, y, points, taus, config)

    run_pmse(ScenarioConfig(n=200, S=20, B_reps=2, seed=1), estimator=spy)
    assert seen == [(160, 40), (160, 40)]


def test_table_writers(tmp_path):
    cfg = ScenarioConfig(**{**SMALL, "B_reps": 2})
    res = attach_pmse(run_mc(cfg))
    write_amse_csv(tmp_path / "amse.csv", [res])
    write_pmse_csv(tmp_path / "pmse.csv", [res])
    write_crossing_csv(tmp_path / "crossing.csv", [res])
    write_audit_jsonl(tmp_path / "audit.jsonl", [res])
    rows = (tmp_path / "amse.csv").read_text().splitlines()
    assert rows[0].split(",")[2:] == [f"tau_{t:g}" for t in cfg.tau_grid]
    assert len(rows) == 5
    first = rows[1].split(",")[-9:]
    assert float(first[0]) == pytest.approx(1e3 * res.amse[0], rel=1e-15)
    audit = [json.loads(line) for line in (tmp_path / "audit.jsonl").read_text().splitlines()]
    assert {a["kind"] for a in audit} == {"mc", "pmse"} and len(audit) == 4
