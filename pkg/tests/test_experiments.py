import math

import numpy as np
import pytest

from karlin_lil import experiments as ex
from karlin_lil.weights import Zipf, default_models


def test_parse_grid():
    g = ex.parse_grid("geometric:1e2:1e4:3")
    np.testing.assert_allclose(g.values(), [1e2, 1e3, 1e4])
    assert isinstance(ex.parse_grid("tau:0.1:5"), ex.TauGrid)
    for bad in ("geometric:1:2", "linear:1:2:3", "geometric:a:2:3"):
        with pytest.raises(ValueError):
            ex.parse_grid(bad)


def test_tau_grid_levels_grow():
    g = ex.TauGrid(0.1, 6)
    lv = g.levels(mu=1.0, q=0.0)
    assert np.all(np.diff(lv) > 0)
    # successive ratios of exp(n^(1+g)) diverge
    assert np.all(np.diff(lv[1:] / lv[:-1]) > 0)
    t = g.values(Zipf(0.5), 1)
    assert np.all(np.diff(t) > 0)


def test_level_crossing():
    z = Zipf(0.5)
    from karlin_lil.exact_moments import var_poisson_exact
    t = ex.level_crossing(z, 1, 50.0, 1e12)
    assert var_poisson_exact(z, 1, t).value >= 50.0
    assert var_poisson_exact(z, 1, t / (1 + 1e-5)).value < 50.0
    assert ex.level_crossing(z, 1, 1e30, 1e6) is None


def test_ratio_convergence_zipf_passes():
    rep = ex.ratio_convergence(Zipf(0.5), 1, ex.Geometric(1e4, 1e10, 4))
    assert rep.verdicts["mean_ratio"]["verdict"] == "pass"
    assert rep.verdicts["var_ratio"]["verdict"] == "pass"
    # verdicts recomputable from the table
    last = [r for r in rep.tables["ratios"] if r["status"] == "ok"][-1]
    assert abs(last["mean_ratio"] - 1) <= rep.config["tol"]


def test_ratio_convergence_big_counts():
    rep = ex.ratio_convergence(Zipf(0.5), 2, ex.Geometric(1e6, 1e10, 3), kind="atleast")
    assert rep.verdicts["mean_ratio"]["verdict"] == "pass"
    assert rep.verdicts["var_ratio"]["verdict"] == "pass"


def test_clt_inconclusive_when_underpowered():
    rep = ex.clt_check(Zipf(0.5), 1, 100.0, 50)
    assert rep.verdicts["ks"]["verdict"] == "inconclusive"


def test_window_fraction_bounds():
    row = ex.window_fraction(Zipf(0.5), 1, 1e6)
    assert 0.0 < row["fraction"] < 1.0
    whole = ex.window_fraction(Zipf(0.5), 1, 1e6, lo=0.0, hi=math.inf)
    assert whole["fraction"] == pytest.approx(1.0, abs=1e-9)


def test_depoisson_small():
    rep = ex.depoissonization_check(Zipf(0.5), 1, [100, 1000], k_cap=2000)
    gaps = [r["mean_gap"] for r in rep.tables["depoisson"]]
    assert gaps[1] < gaps[0]


def test_lil_normalizer_table():
    for m in default_models():
        rep = ex.lil_paths(m, 2, [1e3, 1e4], 4, seed=1)
        assert rep.verdicts["normalizer"]["verdict"] == "pass"
        # too few grid points: no boundedness claim
        assert rep.verdicts["bounded"]["verdict"] == "inconclusive"


def test_lil_coupled_runs():
    rep = ex.lil_paths(Zipf(0.5), 1, ex.Geometric(1e2, 1e6, 12), 20, seed=2, scheme="coupled")
    assert "det_bounded" in rep.verdicts and "bounded" in rep.verdicts
    with pytest.raises(ValueError):
        ex.lil_paths(Zipf(0.5), 1, [1e3], 2, scheme="bogus")


def test_defaults_are_copied():
    d = ex.defaults()
    d["lil"]["slack"] = 99
    assert ex.DEFAULTS["lil"]["slack"] == 0.5
