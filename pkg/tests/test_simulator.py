import math

import numpy as np
import pytest
from scipy import stats

from karlin_lil.exact_moments import mean_binomial_exact, mean_poisson_exact, var_poisson_exact
from karlin_lil.simulator import (ConfigError, SimConfig, _truncated_poisson_sum, build_layout,
                                  layout_for, rng_for, simulate_binomial_path, simulate_coupled,
                                  simulate_poisson_path, stack)
from karlin_lil.weights import Finite, PiPolyLog, Zipf


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(Zipf(0.5), (10.0, 5.0))
    with pytest.raises(ConfigError):
        SimConfig(Zipf(0.5), ())
    with pytest.raises(ConfigError):
        SimConfig(Zipf(0.5), (1.0,), replicates=0)
    with pytest.raises(ConfigError):
        list(simulate_binomial_path(SimConfig(Zipf(0.5), (1.5,))))


def test_rng_streams_are_distinct_and_stable():
    a = rng_for(1, 0, 0).random(4)
    b = rng_for(1, 0, 0).random(4)
    c = rng_for(1, 1, 0).random(4)
    d = rng_for(1, 0, 1).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_poisson_means_and_variances_match_exact():
    z = Zipf(0.5)
    grid = (1e2, 1e4, 1e6)
    cfg = SimConfig(z, grid, j_max=2, replicates=400, seed=3, threads=2)
    paths = list(simulate_poisson_path(cfg))
    for j in (1, 2):
        x = stack(paths, j).astype(float)
        for i, t in enumerate(grid):
            m = mean_poisson_exact(z, j, t).value
            v = var_poisson_exact(z, j, t).value
            se = math.sqrt(v / x.shape[0])
            assert abs(x[:, i].mean() - m) < 4.5 * se
            # sample variance within a generous chi-square band
            assert 0.7 < x[:, i].var(ddof=1) / v < 1.35


def test_counts_are_consistent():
    cfg = SimConfig(PiPolyLog(2.0), (10.0, 1e3, 1e6), j_max=3, replicates=3, seed=0)
    for p in simulate_poisson_path(cfg):
        # K_j = K*_j + K_{j+1}
        assert np.array_equal(p.K[:, :-1], p.K_star + p.K[:, 1:])
        assert np.all(np.diff(p.balls) >= 0)
        # at least-one counts never decrease along a path
        assert np.all(np.diff(p.K[:, 0]) >= 0)


def test_binomial_path_ball_counts_exact():
    cfg = SimConfig(Zipf(0.5), (1.0, 10.0, 1000.0), j_max=2, replicates=5, seed=1)
    for p in simulate_binomial_path(cfg):
        assert list(p.balls) == [1, 10, 1000]
        assert p.K_star[0, 0] == 1


def test_binomial_mean_matches_exact():
    z = Zipf(0.5)
    cfg = SimConfig(z, (100.0, 1000.0), j_max=1, replicates=400, seed=5, threads=2)
    x = stack(list(simulate_binomial_path(cfg)), 1).astype(float)
    for i, n in enumerate((100, 1000)):
        m = mean_binomial_exact(z, 1, n).value
        assert abs(x[:, i].mean() - m) < 4.5 * x[:, i].std(ddof=1) / math.sqrt(x.shape[0])


def test_finite_model_two_boxes():
    f = Finite([0.5, 0.5])
    cfg = SimConfig(f, (2.0,), j_max=2, replicates=2000, seed=2)
    x = stack(list(simulate_binomial_path(cfg)), 1)[:, 0]
    # two balls in two boxes: either both apart (K*_1 = 2) or together (0)
    assert set(np.unique(x)) <= {0, 2}
    assert abs(np.mean(x == 2) - 0.5) < 0.05


def test_coupled_paths():
    z = Zipf(0.5)
    cfg = SimConfig(z, (100.0, 1000.0, 10000.0), j_max=1, replicates=200, seed=4)
    pairs = list(simulate_coupled(cfg))
    det = stack([p[0] for p in pairs], 1).astype(float)
    poi = stack([p[1] for p in pairs], 1).astype(float)
    assert [int(b) for b in pairs[0][0].balls] == [100, 1000, 10000]
    assert np.corrcoef(det[:, -1], poi[:, -1])[0, 1] > 0.8
    m = mean_poisson_exact(z, 1, 1e4).value
    assert abs(poi[:, -1].mean() - m) < 4.5 * poi[:, -1].std(ddof=1) / math.sqrt(200)


def test_thread_count_does_not_change_results():
    cfg1 = SimConfig(Zipf(0.5), (1e2, 1e5), j_max=2, replicates=8, seed=9, threads=1)
    cfg4 = SimConfig(Zipf(0.5), (1e2, 1e5), j_max=2, replicates=8, seed=9, threads=4)
    a = [list(p.rows()) for p in simulate_poisson_path(cfg1)]
    b = [list(p.rows()) for p in simulate_poisson_path(cfg4)]
    assert a == b


def test_layout_certificate():
    lay = build_layout(Zipf(0.5), 1e8)
    cert = lay.certificate()
    assert cert["collision_bound"] <= 1e-6
    # cell aggregation shifts the mean by a tiny fraction of it
    bias = lay.aggregation_bias(1, 1e8)
    assert abs(bias["bias"]) < 1e-3 * bias["exact_mean"]


def test_truncated_poisson_sum_law():
    # sum of Poisson(lam) conditioned on >= r, checked against the exact conditional mean
    rng = np.random.default_rng(0)
    for lam, r in [(0.3, 1), (2.0, 2), (0.05, 3), (5.0, 3)]:
        draws = np.array([_truncated_poisson_sum(rng, np.array([lam]), np.array([1]), r)
                          for _ in range(20000)])
        assert draws.min() >= r
        k = np.arange(r, 200)
        pmf = stats.poisson.pmf(k, lam)
        mean = (k * pmf).sum() / pmf.sum()
        sd = math.sqrt((k * k * pmf).sum() / pmf.sum() - mean**2)
        assert abs(draws.mean() - mean) < 4.5 * sd / math.sqrt(draws.size)


def test_deep_horizon_runs():
    # the singleton sea and the cells keep 1e10 affordable
    cfg = SimConfig(Zipf(0.5), (1e10,), j_max=1, replicates=1, seed=0)
    p = next(simulate_poisson_path(cfg))
    m = mean_poisson_exact(Zipf(0.5), 1, 1e10).value
    assert abs(p.K_star[0, 0] - m) < 6 * math.sqrt(m)
    assert layout_for(cfg).certificate()["cells"] > 0
