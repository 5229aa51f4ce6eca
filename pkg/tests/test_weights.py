import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from karlin_lil.weights import (AlphaOneLogSq, Finite, PiPolyLog, PiStretchedExp, WeightError,
                                Zipf, default_models, parse_family)


@pytest.mark.parametrize("model", default_models(), ids=lambda m: m.family)
def test_probabilities_sum_and_decrease(model):
    p = model.probs(4096)
    assert np.all(p > 0)
    assert np.all(np.diff(p) <= 0)
    head = p.sum()
    tail = model.tail_mass(4096)
    assert head + tail == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("model", default_models(), ids=lambda m: m.family)
def test_rho_counts_boxes(model):
    # rho(t) = #{k : 1/p_k <= t}, checked against the table directly
    p = model.probs(1 << 16)
    for t in (10.0, 1e3, 1e4):
        assert model.rho(t) == int(np.sum(1.0 / p <= t))


def test_zipf_tail_matches_power_law():
    z = Zipf(0.5)
    # p_k ~ k^(-2) / zeta(2), so the tail beyond k is about 1/(k zeta(2))
    k = 10**5
    assert z.tail_mass(k) * k * math.pi**2 / 6 == pytest.approx(1.0, rel=1e-4)


def test_log_probs_range_matches_table():
    z = Zipf(0.5)
    a = z.log_probs(5000)[3000:5000]
    b = z.log_probs_range(3000, 5000)
    np.testing.assert_allclose(a, b, rtol=1e-13)


def test_stretched_inverse_is_accurate():
    m = PiStretchedExp(1.0, 0.5)
    x = np.geomspace(1.0, 1e20, 301)
    v = m.v_of(x)
    np.testing.assert_allclose(m.big_r(v), x, rtol=1e-12)


@pytest.mark.parametrize("spec,cls", [("zipf:alpha=0.5", Zipf), ("pipolylog:beta=2", PiPolyLog),
                                      ("pistretch:sigma=1,lambda=0.5", PiStretchedExp),
                                      ("alpha1logsq", AlphaOneLogSq),
                                      ("finite:p=0.5/0.3/0.2", Finite)])
def test_parse_family(spec, cls):
    m = parse_family(spec)
    assert isinstance(m, cls)
    assert type(parse_family(m.spec_string())) is cls


@pytest.mark.parametrize("bad", ["nope", "zipf:alpha=2", "zipf:beta=1", "zipf:alpha=x",
                                 "pipolylog:beta=-1", "pistretch:sigma=1,lambda=1.5",
                                 "finite:p=0.2/0.5", "finite:q=1"])
def test_parse_family_rejects(bad):
    with pytest.raises(WeightError):
        parse_family(bad)


def test_regime_kinds():
    kinds = [m.regime_info().kind for m in default_models()]
    assert kinds == ["PiPolyLog", "PiStretchedExp", "RegVar", "RegVarOne"]
    assert Zipf(0.3).regime_info().alpha == pytest.approx(0.3)
    assert AlphaOneLogSq().regime_info().alpha == 1.0


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(0.05, 0.95), k=st.integers(1, 10**6))
def test_zipf_probabilities_positive_and_monotone(alpha, k):
    z = Zipf(alpha)
    assert 0.0 < z.prob(k + 1) <= z.prob(k)


@settings(max_examples=25, deadline=None)
@given(t=st.floats(2.0, 1e12))
def test_rho_continuous_brackets_rho(t):
    m = PiPolyLog(2.0)
    # floor relation between the continuous profile and the box count
    assert m.rho(t) <= m.rho_continuous(t) + 1.0 + 1e-6 * m.rho_continuous(t)
