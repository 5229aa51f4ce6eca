import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from karlin_lil import asymptotics as asy
from karlin_lil.weights import AlphaOneLogSq, PiPolyLog, PiStretchedExp, Zipf


def _c_by_integral(j, alpha):
    """alpha * int_0^inf x^(-alpha-1) Var(Bernoulli(P_j(x))) dx, computed independently."""
    def f(x):
        q = math.exp(j * math.log(x) - x - math.lgamma(j + 1))
        return x ** (-alpha - 1.0) * q * (1.0 - q)
    a, _ = integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-12, limit=200)
    b, _ = integrate.quad(f, 1, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    return alpha * (a + b)


@pytest.mark.parametrize("j,alpha", [(1, 0.5), (2, 0.5), (3, 0.25), (5, 0.9)])
def test_c_j_alpha_matches_integral(j, alpha):
    assert asy.c_j_alpha(j, alpha) == pytest.approx(_c_by_integral(j, alpha), rel=1e-9)


def test_known_values():
    # closed form 0.5 sqrt(pi) (1 - sqrt(2)/8) = 0.7295627 (quoted elsewhere as 0.729564)
    exact = 0.5 * math.sqrt(math.pi) * (1.0 - math.sqrt(2.0) / 8.0)
    assert asy.c_j_alpha(1, 0.5) == pytest.approx(exact, rel=1e-14)
    assert abs(asy.c_j_alpha(1, 0.5) - 0.729564) < 1.5e-6
    assert asy.c_j_one(2) == pytest.approx(0.4375, abs=1e-15)
    # alpha -> 1 limit of c_{j,alpha} agrees with c_{j,1}
    assert asy.c_j_alpha(2, 1.0) == pytest.approx(0.4375, rel=1e-12)


def test_c_j_one_by_integral():
    for j in (2, 3, 4):
        assert asy.c_j_one(j) == pytest.approx(_c_by_integral(j, 1.0), rel=1e-9)


def test_domain_errors():
    with pytest.raises(asy.DomainError):
        asy.c_j_alpha(1, 1.0)
    with pytest.raises(asy.DomainError):
        asy.c_j_one(1)
    with pytest.raises(ValueError):
        asy.c_j_alpha(0, 0.5)


def test_pi_constants():
    reg = PiPolyLog(2.0).regime_info()
    assert asy.mean_constant(reg, 3) == pytest.approx(1 / 3)
    # 1/j - (2j-1)!/((j!)^2 4^j) at j = 1
    assert asy.var_constant(reg, 1) == pytest.approx(0.75)
    bm, bv = asy.big_counts_constants(reg, 1)
    assert (bm, bv) == (1.0, pytest.approx(math.log(2.0)))


def test_big_counts_regvar_constants():
    reg = Zipf(0.5).regime_info()
    bm, bv = asy.big_counts_constants(reg, 1)
    assert bm == pytest.approx(math.gamma(0.5))
    assert bv == pytest.approx(math.sqrt(math.pi) * (math.sqrt(2) - 1), rel=1e-12)


def test_alpha_one_constants():
    reg = AlphaOneLogSq().regime_info()
    assert asy.mean_constant(reg, 2) == pytest.approx(0.5)
    assert asy.big_counts_constants(reg, 2) == (pytest.approx(1.0), pytest.approx(0.5))


@pytest.mark.parametrize("model,kind,const", [
    (PiPolyLog(2.0), "LogVar", 1.0),
    (PiPolyLog(1.0), "LogVar", math.sqrt(2.0)),
    (PiStretchedExp(1.0, 0.5), "LogLogVar", 2.0),
    (Zipf(0.5), "LogLogVar", math.sqrt(2.0)),
    (AlphaOneLogSq(), "LogLogVar", math.sqrt(2.0)),
])
def test_lil_spec_table(model, kind, const):
    spec = asy.lil_spec(model, 1)
    assert spec.normalizer_kind == kind
    assert spec.lil_constant == pytest.approx(const, rel=1e-15)


def test_alpha_one_bound_only():
    s1 = asy.lil_spec(AlphaOneLogSq(), 1)
    s2 = asy.lil_spec(AlphaOneLogSq(), 2)
    assert s1.upper_bound_only and s1.exotic_verdict == "fails"
    assert not s2.upper_bound_only


def test_normalizers():
    s = asy.lil_spec(Zipf(0.5), 1)
    assert s.normalizer(math.exp(math.e)) == pytest.approx(1.0)
    p = asy.lil_spec(PiPolyLog(2.0), 1)
    assert p.normalizer(math.e) == pytest.approx(1.0)


def test_exotic_check_verdicts():
    # log L_hat = -(log t)^2 drops fast enough: the ratios go to zero
    assert asy.exotic_check(lambda y: -y * y).verdict == "holds"
    # a constant L_hat gives ratios identically one
    assert asy.exotic_check(lambda y: 0.0).verdict == "fails"
    # the stub exp(-log t / log log t) keeps ratios near 0.75 for every n reachable here
    stub = asy.exotic_check(lambda y: -y / math.log(y) if y > 1.0 else 0.0)
    assert stub.verdict == "fails"
    with pytest.raises(ValueError):
        asy.exotic_check(lambda y: 0.0, n_max=5)


def test_l_hat_matches_defining_integral():
    m = AlphaOneLogSq()
    for t in (1e3, 1e6, 1e10):
        # by parts: int_t^inf rho(y)/y^2 dy = rho(t)/t + int_{rho(t)}^inf p(x) dx
        x0 = m.rho_continuous(t)
        by_parts = x0 / t + m._tail_integral_w(x0) / m.normalizer
        assert asy.l_hat(m, t) == pytest.approx(by_parts, rel=1e-9)
    # and slowly approaches the asymptote 1/(Z log t) from above
    r = [asy.l_hat(m, t) * m.normalizer * math.log(t) for t in (1e4, 1e8, 1e16)]
    assert r[0] > r[1] > r[2] > 1.0


def test_double_factorial_identity_exact():
    for j in range(1, 21):
        r = asy.double_factorial_ratio(j)
        other = Fraction(2 * math.factorial(2 * j - 1), 4**j * math.factorial(j) * math.factorial(j - 1))
        assert r == other
        assert r < 1


@settings(max_examples=50, deadline=None)
@given(j=st.integers(1, 10), alpha=st.floats(0.01, 0.99))
def test_c_positive(j, alpha):
    assert asy.c_j_alpha(j, alpha) > 0


def test_positivity_table():
    rows = asy.positivity_table()
    assert all(r["c"] > 0 for r in rows)
    assert len(rows) == 10 * 9 + 9
