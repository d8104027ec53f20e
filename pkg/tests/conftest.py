import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from funcextremile.curves import CurveSample, Grid
from funcextremile.simulation import ScenarioConfig, gen_scenario

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def grid():
    return Grid.uniform(41)


@pytest.fixture(scope="session")
def scenario_a_small():
    """A Scenario A draw small enough for per-test refits."""
    cfg = ScenarioConfig(scenario="A", n=60, S=40, seed=123)
    sample, y, sigma = gen_scenario(cfg, 0)
    return cfg, sample, y, sigma


@pytest.fixture(scope="session")
def scenario_a_benchmark_draw():
    cfg = ScenarioConfig(scenario="A", n=200, S=100, seed=321)
    sample, y, sigma = gen_scenario(cfg, 0)
    return cfg, sample, y, sigma


def random_sample(rng, n, S=25, scale=1.0):
    g = Grid.uniform(S)
    s = g.points
    basis = np.array([np.ones_like(s), np.sin(2 * np.pi * s), np.cos(2 * np.pi * s), s])
    coefs = scale * rng.normal(size=(n, basis.shape[0]))
    return CurveSample(g, coefs @ basis)
