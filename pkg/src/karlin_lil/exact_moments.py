"""Exact means and variances of occupancy counts with truncation certificates.

Per-box sums are evaluated over an explicit head 1..K and a tail k > K.
The tail is handled in one of two ways:

* bound: every per-box term is at most p_k t once p_k t <= 1, so the tail
  lies in [0, t * tail_mass(K)];
* bracket: when the summand f(x) = g(t p(x)) is convex and decreasing on
  [K, inf), sum_{k>K} f(k) lies in [I(K) - f(K)/2, I(K + 1/2)] where I(a)
  is the integral of f over [a, inf).

The estimate is the midpoint of whichever interval is narrower and the
error bound is its half-width (plus the quadrature error estimate).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, special

from .weights import MAX_TABLE, WeightModel

DEFAULT_TOL = 1e-9
DEFAULT_REL_TOL = 1e-12
DEFAULT_K_CAP = 20_000
# direct box sums stop here; ~1e8 log-weight evaluations is a few seconds
MAX_SUM_BOXES = 1 << 27

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


class TruncationError(ArithmeticError):
    """The requested error budget is out of reach within the box table."""

    def __init__(self, message: str, best_bound: float, k: int) -> None:
        super().__init__(message)
        self.best_bound = best_bound
        self.k = k


@dataclass(frozen=True)
class MomentResult:
    value: float
    error_bound: float
    k_truncation: int
    status: str = "ok"

    def to_json(self) -> dict:
        return asdict(self)


# -- per-box kernels g(u), u = p t --------------------------------------------

def poisson_pmf(j: int, u):
    """e^-u u^j / j! evaluated in log space; 0 for j < 0."""
    u = np.asarray(u, dtype=float)
    if j < 0:
        return np.zeros_like(u)
    return np.exp(special.xlogy(j, u) - u - special.gammaln(j + 1))


class Kernel:
    """g(u) with g(0) = 0, g(u) <= u for u <= 1, plus derivatives."""

    name = "kernel"

    def value(self, u):
        raise NotImplementedError

    def over_u(self, u):
        """g(u)/u, finite as u -> 0."""
        raise NotImplementedError

    def derivs(self, u):
        raise NotImplementedError


class ExactlyJ(Kernel):
    def __init__(self, j: int) -> None:
        self.j = j
        self.name = f"exactly{j}"

    def value(self, u):
        return poisson_pmf(self.j, u)

    def over_u(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp(special.xlogy(self.j - 1, u) - u - special.gammaln(self.j + 1))

    def derivs(self, u):
        j = self.j
        pm = [poisson_pmf(j - i, u) for i in range(3)]
        return pm[1] - pm[0], pm[2] - 2 * pm[1] + pm[0]


class AtLeastJ(Kernel):
    def __init__(self, j: int) -> None:
        self.j = j
        self.name = f"atleast{j}"

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if self.j == 1:
            return -np.expm1(-u)
        return special.gammainc(self.j, u)

    def over_u(self, u):
        u = np.asarray(u, dtype=float)
        tiny = u < 1e-8
        safe = np.where(tiny, 1.0, u)
        lead = np.exp(special.xlogy(self.j - 1, u) - special.gammaln(self.j + 1))
        series = lead * (1.0 - u * self.j / (self.j + 1.0))
        return np.where(tiny, series, self.value(safe) / safe)

    def derivs(self, u):
        j = self.j
        a, b = poisson_pmf(j - 1, u), poisson_pmf(j - 2, u)
        return a, b - a


class BernoulliVariance(Kernel):
    """g(1 - g) for an inner kernel g."""

    def __init__(self, inner: Kernel) -> None:
        self.inner = inner
        self.name = f"var_{inner.name}"

    def value(self, u):
        g = self.inner.value(u)
        return g * (1.0 - g)

    def over_u(self, u):
        return self.inner.over_u(u) * (1.0 - self.inner.value(u))

    def derivs(self, u):
        g = self.inner.value(u)
        d1, d2 = self.inner.derivs(u)
        return d1 * (1.0 - 2 * g), d2 * (1.0 - 2 * g) - 2 * d1**2


# -- generic certified box sums ------------------------------------------------

def _convex_tail(model: WeightModel, kernel: Kernel, t: float, k: int) -> bool:
    """Second derivative of x -> g(t p(x)) is nonnegative on a dense
    geometric sample of [k, k * 1e15]."""
    x = k * np.logspace(0.0, 15.0, 601)
    u = t * model.prob_continuous(x)
    d1, d2 = model.dlog_w(x)
    g1, g2 = kernel.derivs(u)
    up = u * d1
    upp = u * (d1**2 + d2)
    f2 = g2 * up**2 + g1 * upp
    decreasing = np.all(g1 * up <= 0.0)
    return bool(decreasing and np.all(f2 >= -1e-300))


def tail_integral(model: WeightModel, kernel: Kernel, t: float, a: float) -> tuple[float, float]:
    """Integral of g(t p(x)) over [a, inf) and its quadrature error."""
    log_t = math.log(t)

    def integrand_y(y):
        lp = float(model.log_w_of_logx(y)) - model.log_normalizer
        u = math.exp(lp + log_t)
        return float(kernel.over_u(u)) * math.exp(lp + log_t + y)

    if model.heavy_tail:
        # z = 1/log x maps the slowly decaying tail onto a finite interval
        def by_z(z):
            if z <= 0.0:
                return 0.0
            return integrand_y(1.0 / z) / z**2

        val, err = integrate.quad(by_z, 0.0, 1.0 / math.log(a), epsabs=0.0,
                                  epsrel=1e-13, limit=500)
    else:
        val, err = integrate.quad(integrand_y, math.log(a), math.inf, epsabs=0.0,
                                  epsrel=1e-13, limit=500)
    return val, abs(err)


def _near_integral(model: WeightModel, kernel: Kernel, t: float, a: float) -> float:
    """Integral of g(t p(x)) over [a, a + 1/2] by Gauss-Legendre."""
    x = a + 0.25 * (_GL_X + 1.0)
    u = t * model.prob_continuous(x)
    return float(0.25 * np.dot(_GL_W, kernel.value(u)))


@dataclass(frozen=True)
class _Tail:
    lower: float
    upper: float
    quad_err: float = 0.0

    @property
    def mid(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def err(self) -> float:
        return 0.5 * (self.upper - self.lower) + self.quad_err


def _tail(model: WeightModel, kernel: Kernel, t: float, k: int, quad_ok: bool) -> _Tail:
    if k >= model.n_boxes:
        return _Tail(0.0, 0.0)
    best = _Tail(0.0, math.inf)
    if t * model.prob(k + 1) <= 1.0:
        best = _Tail(0.0, t * model.tail_mass(k))
    if quad_ok and best.err > 0.0 and _convex_tail(model, kernel, t, k):
        fk = float(kernel.value(t * model.prob(k)))
        ik, qerr = tail_integral(model, kernel, t, float(k))
        lower = ik - 0.5 * fk
        upper = ik - _near_integral(model, kernel, t, float(k))
        cand = _Tail(max(lower, 0.0), max(upper, lower, 0.0), qerr)
        if cand.err < best.err:
            best = cand
    return best


def _start_k(model: WeightModel, t: float) -> int:
    k = 1024
    x = model.rho_continuous(max(t, 1.0))
    while k < 4 * x and k < MAX_SUM_BOXES:
        k *= 2
    return int(min(k, model.n_boxes)) if math.isfinite(model.n_boxes) else k


def _head_sum(model: WeightModel, fn, a: int, b: int, chunk: int = 1 << 21) -> float:
    """sum of fn(log p_k) over a < k <= b, in chunks so memory stays flat."""
    total = 0.0
    lo = a
    while lo < b:
        hi = min(lo + chunk, b) if b > MAX_TABLE else b
        total += float(np.sum(fn(model.log_probs_range(lo, hi))))
        lo = hi
    return total


def _budget(tol: float, rel_tol: float, value: float) -> float:
    return max(tol, rel_tol * abs(value))


def box_sum(model: WeightModel, kernel: Kernel, t: float, tol: float = DEFAULT_TOL,
            rel_tol: float = DEFAULT_REL_TOL, max_k: int = MAX_SUM_BOXES) -> MomentResult:
    """Certified sum_k g(p_k t)."""
    return _box_sums(model, [kernel], t, tol, rel_tol, max_k)[0]


def _head_sums(model: WeightModel, kernels, t: float, a: int, b: int, chunk: int = 1 << 21):
    """Head sums of several kernels in one pass over log p_k, a < k <= b."""
    out = np.zeros(len(kernels))
    inner = kernels[0]
    shared = all(k is inner or getattr(k, "inner", None) is inner for k in kernels)
    lo = a
    while lo < b:
        hi = min(lo + chunk, b) if b > MAX_TABLE else b
        u = t * np.exp(model.log_probs_range(lo, hi))
        if shared:
            # a kernel and its Bernoulli variance share g(u)
            g = inner.value(u)
            vals = [g if k is inner else g * (1.0 - g) for k in kernels]
        else:
            vals = [k.value(u) for k in kernels]
        out += [float(np.sum(v)) for v in vals]
        lo = hi
    return out


def _box_sums(model: WeightModel, kernels, t: float, tol: float = DEFAULT_TOL,
              rel_tol: float = DEFAULT_REL_TOL, max_k: int = MAX_SUM_BOXES) -> list[MomentResult]:
    """Certified sums for several kernels that share the head pass."""
    if t <= 0:
        raise ValueError("time must be positive")
    n = len(kernels)
    k = _start_k(model, t)
    best: list[MomentResult | None] = [None] * n
    done_res: list[MomentResult | None] = [None] * n
    head = np.zeros(n)
    done = 0
    while True:
        k = int(min(k, max_k, model.n_boxes))
        head += _head_sums(model, kernels, t, done, k)
        done = k
        for i, kernel in enumerate(kernels):
            if done_res[i] is not None:
                continue
            tail = _tail(model, kernel, t, k, quad_ok=True)
            value = head[i] + tail.mid
            res = MomentResult(value, tail.err, k)
            if best[i] is None or not res.error_bound >= best[i].error_bound:
                best[i] = res
            if math.isfinite(value) and tail.err <= _budget(tol, rel_tol, value):
                done_res[i] = res
        if all(r is not None for r in done_res):
            return done_res
        if k >= max_k or k >= model.n_boxes:
            i = next(i for i, r in enumerate(done_res) if r is None)
            b = best[i]
            raise TruncationError(
                f"{kernels[i].name} at t={t:g}: error {b.error_bound:.3g} exceeds budget "
                f"{_budget(tol, rel_tol, b.value):.3g} with K={k}",
                b.error_bound, k)
        k *= 2


# -- Poissonized scheme ----------------------------------------------------

def mean_poisson_exact(model: WeightModel, j: int, t: float, kind: str = "exactly",
                       tol: float = DEFAULT_TOL, rel_tol: float = DEFAULT_REL_TOL) -> MomentResult:
    """E K*_j(t) (kind="exactly") or E K_j(t) (kind="atleast")."""
    _check_j(j)
    kernel = ExactlyJ(j) if kind == "exactly" else AtLeastJ(j)
    return box_sum(model, kernel, t, tol, rel_tol)


def var_poisson_exact(model: WeightModel, j: int, t: float, kind: str = "exactly",
                      tol: float = DEFAULT_TOL, rel_tol: float = DEFAULT_REL_TOL) -> MomentResult:
    """Var K*_j(t) as a sum of Bernoulli variances (independent boxes)."""
    _check_j(j)
    inner = ExactlyJ(j) if kind == "exactly" else AtLeastJ(j)
    return box_sum(model, BernoulliVariance(inner), t, tol, rel_tol)


def moments_poisson_exact(model: WeightModel, j: int, t: float, kind: str = "exactly",
                          tol: float = DEFAULT_TOL,
                          rel_tol: float = DEFAULT_REL_TOL) -> tuple[MomentResult, MomentResult]:
    """(mean, variance) of K*_j(t) or K_j(t) from one pass over the boxes."""
    _check_j(j)
    inner = ExactlyJ(j) if kind == "exactly" else AtLeastJ(j)
    m, v = _box_sums(model, [inner, BernoulliVariance(inner)], t, tol, rel_tol)
    return m, v


def var_identity_rhs(model: WeightModel, j: int, t: float, tol: float = DEFAULT_TOL,
                     rel_tol: float = DEFAULT_REL_TOL) -> MomentResult:
    """E K*_j(t) - 4^-j C(2j, j) E K*_2j(2t); equals Var K*_j(t) for any (p_k)."""
    _check_j(j)
    a = mean_poisson_exact(model, j, t, tol=tol, rel_tol=rel_tol)
    b = mean_poisson_exact(model, 2 * j, 2 * t, tol=tol, rel_tol=rel_tol)
    c = math.exp(special.gammaln(2 * j + 1) - 2 * special.gammaln(j + 1) - 2 * j * math.log(2))
    return MomentResult(a.value - c * b.value, a.error_bound + c * b.error_bound,
                        max(a.k_truncation, b.k_truncation))


# -- deterministic scheme --------------------------------------------------

def log_binom(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    ok = (k >= 0) & (k <= n)
    out = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(np.where(ok, n - k, 0) + 1)
    return np.where(ok, out, -np.inf)


def binomial_box_prob(n: int, j: int, logp, p):
    """P(box with probability p holds exactly j of n balls)."""
    return np.exp(log_binom(n, j) + j * logp + special.xlog1py(n - j, -p))


def _binomial_tail(model: WeightModel, kernel: Kernel, n: int, k: int) -> _Tail:
    """Tail of binomial per-box terms: the Poisson tail at t = n widened by
    Le Cam's bound |Bin(n,p)(j) - Poi(np)(j)| <= 2 n p^2."""
    tail = _tail(model, kernel, float(n), k, quad_ok=True)
    if k >= model.n_boxes:
        return tail
    lecam = 2.0 * n * model.prob(k + 1) * model.tail_mass(k)
    return _Tail(max(tail.lower - lecam, 0.0), tail.upper + lecam, tail.quad_err)


def _binomial_sum(model: WeightModel, j: int, n: int, variance: bool, tol: float,
                  rel_tol: float) -> MomentResult:
    inner = ExactlyJ(j)
    kernel = BernoulliVariance(inner) if variance else inner
    k = _start_k(model, float(n))
    best = None
    head, done = 0.0, 0

    def terms(logp):
        pk = binomial_box_prob(n, j, logp, np.exp(logp))
        return pk * (1.0 - pk) if variance else pk

    while True:
        k = int(min(k, MAX_SUM_BOXES, model.n_boxes))
        head += _head_sum(model, terms, done, k)
        done = k
        tail = _binomial_tail(model, kernel, n, k)
        value = head + tail.mid
        res = MomentResult(value, tail.err, k)
        if best is None or not res.error_bound >= best.error_bound:
            best = res
        if math.isfinite(value) and tail.err <= _budget(tol, rel_tol, value):
            return res
        if k >= MAX_SUM_BOXES or k >= model.n_boxes:
            raise TruncationError(
                f"binomial j={j} n={n}: error {best.error_bound:.3g} over budget",
                best.error_bound, k)
        k *= 2


def mean_binomial_exact(model: WeightModel, j: int, n: int, tol: float = DEFAULT_TOL,
                        rel_tol: float = DEFAULT_REL_TOL) -> MomentResult:
    """E of the number of boxes holding exactly j of n balls."""
    _check_j(j)
    if n < j:
        raise ValueError("need n >= j")
    return _binomial_sum(model, j, int(n), False, tol, rel_tol)


def var_binomial_exact(model: WeightModel, j: int, n: int, k_cap: int = DEFAULT_K_CAP,
                       tol: float = DEFAULT_TOL, rel_tol: float = DEFAULT_REL_TOL,
                       block: int = 2048) -> MomentResult:
    """Variance of the exactly-j count after n balls (dependent boxes).

    The diagonal is certified like the means.  The O(k_cap^2) cross sum
    over pairs i != k <= k_cap is exact; pairs beyond k_cap are covered by
    a first-order estimate that is reported, not certified.
    """
    _check_j(j)
    n = int(n)
    if n < j:
        raise ValueError("need n >= j")
    diag = _binomial_sum(model, j, n, True, tol, rel_tol)
    cap = int(min(k_cap, model.n_boxes, MAX_TABLE))
    logp = np.asarray(model.log_probs(cap))
    p = np.exp(logp)
    pj = binomial_box_prob(n, j, logp, p)
    l1 = np.log1p(-p) if cap > 1 else np.zeros(cap)
    c0 = float(log_binom(n - j, j) - log_binom(n, j))
    cross = 0.0
    # a single box has no pairs
    for lo in range(0, cap if cap > 1 else 0, block):
        hi = min(lo + block, cap)
        pi = p[lo:hi, None]
        # upper triangle only: columns k > i
        cols = slice(lo, cap)
        pk = p[None, cols]
        s = np.minimum(pi + pk, 1.0)
        if n < 2 * j:
            # two boxes cannot both hold j balls
            delta = np.full(s.shape, -np.inf)
        else:
            delta = (c0 + special.xlog1py(n - 2 * j, -s)
                     - (n - j) * (l1[lo:hi, None] + l1[None, cols]))
        term = pj[lo:hi, None] * pj[None, cols] * np.expm1(delta)
        # mask the diagonal and the lower part of the leading square
        ii = np.arange(lo, hi)[:, None]
        kk = np.arange(lo, cap)[None, :]
        cross += float(np.sum(np.where(kk > ii, term, 0.0)))
    cross *= 2.0
    residual = _cross_residual(model, j, n, cap, diag.k_truncation, p, pj)
    status = "ok"
    if abs(residual) > _budget(tol, rel_tol, diag.value + cross):
        status = "warning: k_cap residual estimate exceeds tolerance"
    value = max(diag.value + cross + residual, 0.0)
    return MomentResult(value, diag.error_bound + abs(residual), max(diag.k_truncation, cap), status)


def _cross_residual(model, j, n, cap, k_far, p_head, pj_head) -> float:
    """Heuristic sum of the cross terms with max(i, k) > cap, using
    C_ik ~ P_i P_k (-j^2/n + j (p_i + p_k) - n p_i p_k) for small p."""
    if cap >= model.n_boxes:
        return 0.0
    k_far = int(min(max(k_far, cap), MAX_TABLE))
    logp = model.log_probs(k_far)
    p = np.exp(logp)
    pj = binomial_box_prob(n, j, logp, p)

    def pair_sum(pp, pv):
        s0, s1 = pv.sum(), (pv * pp).sum()
        q0, q1, q2 = (pv**2).sum(), (pv**2 * pp).sum(), (pv**2 * pp**2).sum()
        a = s0**2 - q0
        b = 2.0 * (s0 * s1 - q1)
        c = (s1**2 - q2)
        return -j * j / n * a + j * b - n * c

    return float(pair_sum(p, pj) - pair_sum(p_head, pj_head))


def _check_j(j: int) -> None:
    if int(j) != j or j < 1:
        raise ValueError("j must be a positive integer")
