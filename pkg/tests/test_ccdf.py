import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from funcextremile.ccdf import (BandwidthGrid, CcdfModel, a_hat, ccdf_weights_at_responses,
                                clamp_cdf, default_hf_grid, eval_ccdf, loo_bandwidths,
                                select_hf_opt, small_ball_hat, v_hat)
from funcextremile.curves import Curve, CurveSample, Grid, distance_matrix, pairwise_distances
from funcextremile.errors import EmptyNeighborhoodError, SelectionError
from funcextremile.extremile import little_j
from funcextremile.kernels import KernelSpec

from conftest import random_sample

MESH = 512


# ---- literal transcription oracle, written loop by loop -------------------------


def oracle_F(y, dist, resp, h, kernel):
    w = [kernel(d / h) for d in dist]
    tot = sum(w)
    if tot == 0:
        return None
    return sum(wi for wi, yi in zip(w, resp) if yi <= y) / tot


def oracle_V(h, dist, kappa):
    n = len(dist)
    pi = sum(1 for d in dist if d <= h) / n
    return math.inf if pi == 0 else kappa * math.log(n) / (n * pi)


def oracle_select(dist, resp, grid, kappa, kernel):
    mesh = np.unique(np.concatenate([resp, np.linspace(min(resp), max(resp), MESH)]))
    curves = {}
    for h in grid:
        vals = [oracle_F(y, dist, resp, h, kernel) for y in mesh]
        curves[h] = None if vals[0] is None else np.array(vals)
    crit = []
    for h in grid:
        if curves[h] is None:
            crit.append(math.inf)
            continue
        best = 0.0
        for hp in grid:
            if curves[hp] is None:
                continue
            diff = curves[hp] - curves[max(h, hp)]
            integral = np.trapezoid(diff**2, mesh)
            best = max(best, integral - oracle_V(hp, dist, kappa))
        crit.append(best + oracle_V(h, dist, kappa))
    return grid[int(np.argmin(crit))], crit


# ---------------------------------------------------------------------------------


@given(st.integers(0, 100_000))
def test_ccdf_is_a_distribution_function(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    sample = random_sample(rng, n)
    y = rng.normal(size=n)
    x0 = sample[int(rng.integers(n))]
    kernel = ["epanechnikov", "gaussian", "uniform"][seed % 3]
    h = float(np.max(distance_matrix(sample, x0))) * rng.uniform(0.3, 2.0) + 1e-9
    grid = np.sort(rng.normal(0, 2, 40))
    F = eval_ccdf(grid, x0, sample, y, h, kernel)
    assert np.all(np.diff(F) >= 0)
    assert np.all((F >= 0) & (F <= 1))
    assert eval_ccdf(y.max(), x0, sample, y, h, kernel) == 1.0
    assert eval_ccdf(y.min() - 1, x0, sample, y, h, kernel) == 0.0


def test_ccdf_matches_loop_oracle():
    rng = np.random.default_rng(3)
    sample = random_sample(rng, 25)
    y = rng.normal(size=25)
    x0 = sample[0] * 0.5
    dist = distance_matrix(sample, x0)
    k = KernelSpec("epanechnikov")
    for h in (np.median(dist), dist.max() * 1.01):
        for t in (-1.0, 0.0, 0.3, 2.0):
            assert eval_ccdf(t, x0, sample, y, h) == pytest.approx(oracle_F(t, dist, y, h, k),
                                                                   abs=1e-14)


def test_empty_neighbourhood_is_an_error():
    sample = random_sample(np.random.default_rng(4), 10)
    x0 = sample[0] + 100.0
    with pytest.raises(EmptyNeighborhoodError):
        eval_ccdf(0.0, x0, sample, np.zeros(10), 1e-3)


def test_small_ball_and_variance_proxy():
    g = Grid.uniform(3)
    sample = CurveSample(g, np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3.0]]))
    x0 = Curve.constant(g, 0.0)
    assert small_ball_hat(x0, 1.0, sample) == 0.5          # closed ball counts distance 1
    assert v_hat(1.0, x0, sample, kappa=2) == pytest.approx(2 * math.log(4) / (4 * 0.5))
    assert v_hat(0.5, x0, sample) == pytest.approx(math.log(4) / 1.0)
    x_far = Curve.constant(g, 50.0)
    assert v_hat(1.0, x_far, sample) == math.inf
    # the alternative form divides by n ln(pi_hat): a full ball gives +inf
    assert v_hat(10.0, x0, sample, form="printed") == math.inf
    assert v_hat(1.0, x0, sample, form="printed") == pytest.approx(
        math.log(4) / (4 * math.log(0.5)))


def test_bandwidth_grid_validation():
    assert list(BandwidthGrid([0.3, 0.1, 0.3])) == [0.1, 0.3]
    for bad in ([], [0.0, 1.0], [np.inf]):
        with pytest.raises(ValueError):
            BandwidthGrid(bad)


def test_default_grid_spans_distance_percentiles():
    sample = random_sample(np.random.default_rng(5), 40)
    pw = pairwise_distances(sample)
    g = default_hf_grid(pw)
    upper = pw[np.triu_indices(40, 1)]
    assert len(g) == 20
    assert g.values[0] == pytest.approx(np.percentile(upper, 5))
    assert g.values[-1] == pytest.approx(np.percentile(upper, 95))


@pytest.mark.parametrize("seed", range(8))
def test_a_hat_matches_transcription(seed):
    rng = np.random.default_rng(100 + seed)
    sample = random_sample(rng, 20)
    y = rng.normal(size=20)
    x0 = sample[1] * 1.1
    dist = distance_matrix(sample, x0)
    grid = np.sort(rng.uniform(0.2, 1.2, 6)) * dist.max()
    k = KernelSpec("epanechnikov")
    _, crit = oracle_select(dist, y, grid, 1.0, k)
    for h, c in zip(grid, crit):
        if math.isfinite(c):
            assert a_hat(h, x0, sample, y, grid) + v_hat(h, x0, sample) == pytest.approx(
                c, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_selection_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 30))
    sample = random_sample(rng, n)
    y = rng.normal(size=n) + sample.values[:, 0]
    x0 = sample[0]
    dist = distance_matrix(sample, x0)
    grid = np.unique(np.geomspace(0.05, 1.2, 8) * dist.max())
    kappa = [0.5, 1.0, 2.0][seed % 3]
    expected, _ = oracle_select(dist, y, grid, kappa, KernelSpec("epanechnikov"))
    assert select_hf_opt(x0, sample, y, grid, kappa) == expected


def test_a_hat_requires_member_bandwidth():
    sample = random_sample(np.random.default_rng(1), 10)
    with pytest.raises(ValueError):
        a_hat(0.123, sample[0], sample, np.zeros(10), [0.5, 1.0])


def test_selection_fails_when_every_ball_is_empty():
    sample = random_sample(np.random.default_rng(1), 10)
    with pytest.raises(SelectionError):
        select_hf_opt(sample[0] + 1e3, sample, np.zeros(10), [0.1, 0.2])


def test_smaller_kappa_never_selects_larger_bandwidths(scenario_a_benchmark_draw):
    _, sample, y, _ = scenario_a_benchmark_draw
    grid = default_hf_grid(pairwise_distances(sample))
    small = loo_bandwidths(sample, y, grid, kappa=0.5)
    large = loo_bandwidths(sample, y, grid, kappa=2.0)
    assert all(h in grid for h in small) and all(h in grid for h in large)
    assert np.all(small <= large)


def test_loo_selection_holds_each_observation_out(scenario_a_small):
    _, sample, y, _ = scenario_a_small
    grid = default_hf_grid(pairwise_distances(sample), 8)
    bw = loo_bandwidths(sample, y, grid)
    for i in (0, 17, 59):
        rest = sample.without(i)
        assert bw[i] == select_hf_opt(sample[i], rest, np.delete(y, i), grid)


def test_model_weights_use_clamped_held_out_cdf(scenario_a_small):
    _, sample, y, _ = scenario_a_small
    model = CcdfModel.fit(sample, y, grid_size=8)
    n = sample.n
    for i in (3, 40):
        rest = sample.without(i)
        F = eval_ccdf(y[i], sample[i], rest, np.delete(y, i), model.selected_bandwidths[i])
        assert model.own_cdf[i] == pytest.approx(F, abs=1e-15)
    w = model.weights(0.9)
    np.testing.assert_allclose(w, little_j(clamp_cdf(model.own_cdf, n), 0.9))
    np.testing.assert_allclose(
        w, ccdf_weights_at_responses(sample, y, model.selected_bandwidths, tau=0.9))
    assert np.all(model.weights(0.5) == 1.0)
    assert clamp_cdf(np.array([0.0, 1.0]), n).tolist() == [1 / (2 * n), 1 - 1 / (2 * n)]


def test_model_evaluate_selects_at_new_curve(scenario_a_small):
    _, sample, y, _ = scenario_a_small
    model = CcdfModel.fit(sample, y, grid_size=8)
    x0 = sample[5] * 0.9
    h = select_hf_opt(x0, sample, y, model.grid)
    assert model.evaluate(0.1, x0) == eval_ccdf(0.1, x0, sample, y, h)
