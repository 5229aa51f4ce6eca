"""Weight families (p_k) for the infinite occupancy scheme.

Every family is a strictly decreasing, summable sequence given by a smooth
unnormalized profile ``w(x)`` evaluated at the integers.  The profile is
also used on the real line, for tail integrals and for grouping the far
boxes of the simulator into blocks of nearly equal probability.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special

# Largest explicit table of p_k kept in memory.
MAX_TABLE = 1 << 22


class WeightError(ValueError):
    """Raised for inadmissible family parameters or malformed family specs."""


@dataclass(frozen=True)
class Regularity:
    """Analytic regime metadata of a family.

    ``alpha`` is the regular-variation index of rho.  For the de Haan
    families ``ell`` is the auxiliary function; for the regularly varying
    ones ``scale`` is t**alpha * L(t).  ``l_hat`` is only set when
    alpha == 1.
    """

    kind: str
    alpha: float
    params: dict
    scale: Callable[[float], float]
    ell: Callable[[float], float] | None = None
    ell_closed_form: Callable[[float], float] | None = None
    slowly_varying: Callable[[float], float] | None = None
    l_hat: Callable[[float], float] | None = None
    description: str = ""


class WeightModel:
    """Base class: subclasses supply the log-profile and its inverse."""

    family = "abstract"
    # tail mass decays slower than any power (needs a compactifying quadrature)
    heavy_tail = False

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._logp = np.empty(0)
        self._prefix = np.empty(0)
        self.log_normalizer = math.log(self._normalizer())

    # -- family hooks -------------------------------------------------
    def log_w(self, x):
        """log of the unnormalized profile at real x >= 1 (vectorized)."""
        raise NotImplementedError

    def log_w_of_logx(self, y):
        """log w(e**y), stable for very large y."""
        return self.log_w(np.exp(y))

    def dlog_w(self, x):
        """(d/dx log w, d^2/dx^2 log w) at x."""
        raise NotImplementedError

    def _normalizer(self) -> float:
        raise NotImplementedError

    def _inverse_profile(self, level: float) -> float:
        """Real x with log w(x) == level (level <= log w(1))."""
        raise NotImplementedError

    def _tail_integral_w(self, x0: float) -> float:
        """Upper bound on the integral of w over [x0, inf)."""
        raise NotImplementedError

    @property
    def n_boxes(self) -> float:
        return math.inf

    # -- probabilities ------------------------------------------------
    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    def log_prob_continuous(self, x):
        return self.log_w(np.asarray(x, dtype=float)) - self.log_normalizer

    def prob_continuous(self, x):
        return np.exp(self.log_prob_continuous(x))

    def _ensure(self, n: int) -> None:
        if n <= self._logp.size:
            return
        if n > MAX_TABLE:
            raise WeightError(f"requested table of {n} boxes exceeds {MAX_TABLE}")
        with self._lock:
            if n <= self._logp.size:
                return
            size = max(1024, self._logp.size)
            while size < n:
                size *= 2
            size = int(min(size, MAX_TABLE, self.n_boxes))
            k = np.arange(1, size + 1, dtype=float)
            logp = self._log_w_table(k) - self.log_normalizer
            prefix = np.cumsum(np.exp(logp))
            # publish the larger table in one assignment each
            self._prefix = prefix
            self._logp = logp

    def _log_w_table(self, k):
        return self.log_w(k)

    def log_probs(self, n: int) -> np.ndarray:
        """log p_1..log p_n as a read-only view."""
        n = int(min(n, self.n_boxes))
        self._ensure(n)
        out = self._logp[:n]
        out.flags.writeable = False
        return out

    def log_probs_range(self, a: int, b: int) -> np.ndarray:
        """log p_k for a < k <= b, evaluated directly past the cached table."""
        b = int(min(b, self.n_boxes))
        if b <= MAX_TABLE:
            return self.log_probs(b)[a:]
        k = np.arange(a + 1, b + 1, dtype=float)
        return self._log_w_table(k) - self.log_normalizer

    def probs(self, n: int) -> np.ndarray:
        return np.exp(self.log_probs(n))

    def prob(self, k: int) -> float:
        if k < 1:
            raise ValueError("box index starts at 1")
        if k > self.n_boxes:
            return 0.0
        if k <= MAX_TABLE:
            self._ensure(k)
            return float(math.exp(self._logp[k - 1]))
        return float(self.prob_continuous(float(k)))

    def prefix_mass(self, k: int) -> float:
        if k <= 0:
            return 0.0
        k = int(min(k, self.n_boxes))
        self._ensure(k)
        return float(self._prefix[k - 1])

    def tail_mass(self, k0: int) -> float:
        """Upper bound on sum_{k > k0} p_k.

        Every profile is convex and decreasing, so p_k is at most the
        integral of p over [k - 1/2, k + 1/2] (midpoint rule).
        """
        if k0 < 1:
            raise ValueError("k0 must be >= 1")
        return self._tail_integral_w(k0 + 0.5) / self.normalizer

    def block_mass(self, a: int, b: int) -> float:
        """sum_{k=a}^{b} p_k (a <= b), exact up to rounding / quadrature."""
        if b < a:
            return 0.0
        if b <= MAX_TABLE:
            self._ensure(b)
            lo = self._prefix[a - 2] if a >= 2 else 0.0
            # direct summation avoids cancellation in the prefix difference
            if b - a < 4096:
                return float(np.exp(self._logp[a - 1:b]).sum())
            return float(self._prefix[b - 1] - lo)
        return self._euler_maclaurin_mass(float(a), float(b))

    def _euler_maclaurin_mass(self, a: float, b: float) -> float:
        def integrand(y):
            return math.exp(float(self.log_w_of_logx(y)) + y - self.log_normalizer)

        inner, _ = integrate.quad(integrand, math.log(a), math.log(b),
                                  epsabs=0.0, epsrel=1e-13, limit=200)
        fa, fb = self.prob_continuous(a), self.prob_continuous(b)
        da, _ = self.dlog_w(a)
        db, _ = self.dlog_w(b)
        return float(inner + 0.5 * (fa + fb) + (fb * db - fa * da) / 12.0)

    # -- counting function --------------------------------------------
    def rho_continuous(self, t: float) -> float:
        """Real x with p(x) == 1/t; zero when t <= 1/p_1."""
        level = self.log_normalizer - math.log(t)
        if level > float(np.ravel(self.log_w(1.0))[0]):
            return 0.0
        return self._inverse_profile(level)

    def rho(self, t: float) -> int:
        """#{k: 1/p_k <= t}."""
        if t <= 0:
            raise ValueError("t must be positive")
        level = self.log_normalizer - math.log(t)
        x = self.rho_continuous(t)
        k = int(math.floor(x))
        if math.isfinite(self.n_boxes):
            k = min(k, int(self.n_boxes))

        def hit(i: int) -> bool:
            return i >= 1 and i <= self.n_boxes and self._log_w_int(i) >= level

        while k >= 1 and not hit(k):
            k -= 1
        while hit(k + 1):
            k += 1
        return k

    def _log_w_int(self, k: int) -> float:
        if k <= self._logp.size:
            return float(self._logp[k - 1] + self.log_normalizer)
        return float(self._log_w_table(np.array([float(k)]))[0])

    def regime_info(self) -> Regularity:
        raise NotImplementedError

    def spec_string(self) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec_string()!r})"


class Zipf(WeightModel):
    """p_k proportional to k**(-1/alpha), alpha in (0, 1)."""

    family = "zipf"

    def __init__(self, alpha: float) -> None:
        if not 0.0 < alpha < 1.0:
            raise WeightError("zipf needs alpha in (0, 1)")
        self.alpha = float(alpha)
        self.s = 1.0 / self.alpha
        super().__init__()

    def log_w(self, x):
        return -self.s * np.log(x)

    def log_w_of_logx(self, y):
        return -self.s * np.asarray(y, dtype=float)

    def dlog_w(self, x):
        x = np.asarray(x, dtype=float)
        return -self.s / x, self.s / x**2

    def _normalizer(self) -> float:
        return float(special.zeta(self.s, 1.0))

    def _inverse_profile(self, level: float) -> float:
        return math.exp(-level / self.s)

    def _tail_integral_w(self, x0: float) -> float:
        return x0 ** (1.0 - self.s) / (self.s - 1.0)

    def block_mass(self, a: int, b: int) -> float:
        if b <= MAX_TABLE:
            return super().block_mass(a, b)
        hz = special.zeta(self.s, float(a)) - special.zeta(self.s, float(b) + 1.0)
        return float(hz) / self.normalizer

    def regime_info(self) -> Regularity:
        a, z = self.alpha, self.normalizer
        const = z ** (-a)
        return Regularity(
            kind="RegVar", alpha=a, params={"alpha": a},
            scale=lambda t: (t / z) ** a,
            slowly_varying=lambda t: const,
            description=f"rho(t) ~ t^{a:g} L, L = zeta({self.s:g})^(-{a:g}) = {const:.12g}",
        )

    def spec_string(self) -> str:
        return f"zipf:alpha={self.alpha:g}"


class PiPolyLog(WeightModel):
    """p_k proportional to exp(-k**(1/(beta+1))): de Haan class,
    ell(t) = (beta+1) (log t)**beta."""

    family = "pipolylog"

    def __init__(self, beta: float) -> None:
        if not beta > 0.0:
            raise WeightError("pipolylog needs beta > 0")
        self.beta = float(beta)
        self.m = self.beta + 1.0
        super().__init__()

    def log_w(self, x):
        return -np.asarray(x, dtype=float) ** (1.0 / self.m)

    def log_w_of_logx(self, y):
        return -np.exp(np.asarray(y, dtype=float) / self.m)

    def dlog_w(self, x):
        x = np.asarray(x, dtype=float)
        r = 1.0 / self.m
        return -r * x ** (r - 1.0), -r * (r - 1.0) * x ** (r - 2.0)

    def _tail_integral_w(self, x0: float) -> float:
        m = self.m
        return float(m * special.gamma(m) * special.gammaincc(m, x0 ** (1.0 / m)))

    def _normalizer(self) -> float:
        k = 1024
        while self._tail_integral_w(float(k)) > 1e-17:
            k *= 2
        ks = np.arange(1, k + 1, dtype=float)
        return float(np.exp(self.log_w(ks)).sum() + 0.5 * self._tail_integral_w(float(k)))

    def _inverse_profile(self, level: float) -> float:
        return (-level) ** self.m

    def regime_info(self) -> Regularity:
        b, m, logz = self.beta, self.m, self.log_normalizer

        def ell(t):
            return m * max(math.log(t) - logz, 0.0) ** b

        return Regularity(
            kind="PiPolyLog", alpha=0.0, params={"beta": b},
            scale=ell, ell=ell,
            ell_closed_form=lambda t: m * math.log(t) ** b,
            description=f"rho(t) = (log t - log Z)^{m:g}; ell(t) ~ {m:g} (log t)^{b:g}",
        )

    def spec_string(self) -> str:
        return f"pipolylog:beta={self.beta:g}"


class PiStretchedExp(WeightModel):
    """1/p_k = Z exp(v_k) with v_k = R^{-1}(k), R(v) = int_0^v exp(sigma u**lam) du.

    Then rho(t) = floor(R(log(t/Z))) and ell(t) = exp(sigma (log t)**lam)
    up to asymptotic equivalence.
    """

    family = "pistretch"

    def __init__(self, sigma: float, lam: float) -> None:
        if not sigma > 0.0:
            raise WeightError("pistretch needs sigma > 0")
        if not 0.0 < lam < 1.0:
            raise WeightError("pistretch needs lambda in (0, 1)")
        self.sigma = float(sigma)
        self.lam = float(lam)
        super().__init__()

    def big_r(self, v):
        v = np.asarray(v, dtype=float)
        a = 1.0 / self.lam
        w = self.sigma * np.maximum(v, 0.0) ** self.lam
        # int_0^W e^s s^(a-1) ds = W^a/a * 1F1(a; a+1; W)
        return self.sigma ** (-a) / self.lam * w**a / a * special.hyp1f1(a, a + 1.0, w)

    def big_r_prime(self, v):
        return np.exp(self.sigma * np.maximum(np.asarray(v, dtype=float), 0.0) ** self.lam)

    def v_of(self, x):
        """Vectorized R^{-1} by Newton from the right (R is convex)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lx = np.log(np.maximum(x, 1.0))
        s, lam = self.sigma, self.lam
        # asymptotic inverse of R(v) ~ exp(s v^lam) v^(1-lam) / (s lam), nudged right
        v = (lx / s) ** (1.0 / lam)
        for _ in range(3):
            rhs = lx + math.log(s * lam) - (1.0 - lam) * np.log(np.maximum(v, 1.0))
            v = (np.maximum(rhs, 0.0) / s) ** (1.0 / lam)
        v = np.maximum(1.02 * v + 1.0, x.clip(max=1.0))
        v = np.where(self.big_r(v) < x, v + 1.0, v)
        for _ in range(200):
            bad = self.big_r(v) < x
            if not bad.any():
                break
            v = np.where(bad, 2.0 * v + 1.0, v)
        for _ in range(100):
            step = (self.big_r(v) - x) / self.big_r_prime(v)
            v = v - step
            if np.all(np.abs(step) <= 1e-14 * np.maximum(v, 1.0)):
                break
        return v

    def log_w(self, x):
        return -self.v_of(x)

    def log_w_of_logx(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        small = y <= 600.0
        out = np.empty_like(y)
        out[small] = -self.v_of(np.exp(y[small]))
        # beyond exp(600) the weight is below exp(-y**(1/lam)): effectively zero
        out[~small] = -((y[~small] / self.sigma) ** (1.0 / self.lam))
        return out if out.size > 1 else out[0]

    def dlog_w(self, x):
        v = self.v_of(x)
        v1 = 1.0 / self.big_r_prime(v)
        v2 = -self.sigma * self.lam * np.maximum(v, 1e-300) ** (self.lam - 1.0) * v1**2
        return -v1, -v2

    def _tail_integral_w(self, x0: float) -> float:
        v0 = float(self.v_of(x0)[0])
        s, lam = self.sigma, self.lam
        val, err = integrate.quad(lambda v: math.exp(-v + s * v**lam), v0, math.inf,
                                  epsabs=0.0, epsrel=1e-11, limit=200)
        return (val + abs(err)) * (1.0 + 1e-9)

    def _normalizer(self) -> float:
        k = 1024
        while self._tail_integral_w(float(k)) > 1e-17:
            k *= 2
        ks = np.arange(1, k + 1, dtype=float)
        return float(np.exp(self.log_w(ks)).sum() + 0.5 * self._tail_integral_w(float(k)))

    def _inverse_profile(self, level: float) -> float:
        return float(self.big_r(-level))

    def regime_info(self) -> Regularity:
        s, lam, logz = self.sigma, self.lam, self.log_normalizer

        def ell(t):
            return math.exp(s * max(math.log(t) - logz, 0.0) ** lam)

        return Regularity(
            kind="PiStretchedExp", alpha=0.0, params={"sigma": s, "lambda": lam},
            scale=ell, ell=ell,
            ell_closed_form=lambda t: math.exp(s * math.log(t) ** lam),
            description=f"rho(t) = R(log t - log Z); ell(t) ~ exp({s:g} (log t)^{lam:g})",
        )

    def spec_string(self) -> str:
        return f"pistretch:sigma={self.sigma:g},lambda={self.lam:g}"


class AlphaOneLogSq(WeightModel):
    """p_k proportional to 1/(k (log(k + 1 + c))**2): alpha = 1 with
    L(t) = rho_continuous(t)/t ~ (log t)**-2 / Z and L_hat(t) ~ 1/(Z log t).
    L_hat is evaluated from its defining integral, not the asymptote."""

    family = "alpha1logsq"
    heavy_tail = True

    def __init__(self, c: float = 1.0) -> None:
        if not c > 0.0:
            raise WeightError("alpha1logsq needs c > 0")
        self.c = float(c)
        self.shift = 1.0 + self.c
        super().__init__()

    def log_w(self, x):
        x = np.asarray(x, dtype=float)
        return -np.log(x) - 2.0 * np.log(np.log(x + self.shift))

    def log_w_of_logx(self, y):
        y = np.asarray(y, dtype=float)
        g = y + np.log1p(self.shift * np.exp(-y))
        return -y - 2.0 * np.log(g)

    def dlog_w(self, x):
        x = np.asarray(x, dtype=float)
        xa = x + self.shift
        g = np.log(xa)
        d1 = -1.0 / x - 2.0 / (g * xa)
        d2 = 1.0 / x**2 + 2.0 / (g * xa**2) + 2.0 / (g**2 * xa**2)
        return d1, d2

    def _tail_integral_w(self, x0: float) -> float:
        val, err = integrate.quad(self._by_z, 0.0, 1.0 / math.log(x0), epsabs=0.0,
                                  epsrel=1e-13, limit=400)
        return (val + abs(err)) * (1.0 + 1e-12)

    def _by_z(self, z: float) -> float:
        # w(x) dx with x = exp(1/z): compactifies the slowly decaying tail
        if z <= 0.0:
            return 0.0
        y = 1.0 / z
        return math.exp(float(self.log_w_of_logx(y)) + y) / z**2

    def _normalizer(self) -> float:
        n = 1 << 20
        ks = np.arange(1, n + 1, dtype=float)
        head = float(np.exp(self.log_w(ks)).sum())
        return head + self._exact_tail(float(n))

    def _exact_tail(self, k0: float) -> float:
        """sum_{k > k0} w_k by Euler-Maclaurin (error ~ w'''(k0), negligible)."""
        inner, _ = integrate.quad(self._by_z, 0.0, 1.0 / math.log(k0), epsabs=0.0,
                                  epsrel=1e-13, limit=400)
        fa = math.exp(float(self.log_w(k0)))
        d1, _ = self.dlog_w(k0)
        return inner - 0.5 * fa - fa * float(d1) / 12.0

    def _inverse_profile(self, level: float) -> float:
        target = -level  # log(x) + 2 log log(x + shift) == target

        def f(lx):
            return lx + 2.0 * math.log(math.log(math.exp(lx) + self.shift)) - target

        lo, hi = 0.0, max(target, 1.0)
        if f(lo) >= 0.0:
            return 1.0
        return math.exp(optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500))

    def l_hat_exact(self, t: float) -> float:
        """int_t^inf y^-1 L(y) dy with L(y) = rho_continuous(y)/y."""
        x0 = self.rho_continuous(t)
        if x0 <= 1.0:
            raise ValueError("L_hat needs t beyond 1/p_1")

        # y = 1/p(x) = Z x g(x)^2, so int y^-2 x dy = int x y'(x)/y(x)^2 dx
        # = (1/Z) int [1/(x g^2) + 2/((x+shift) g^3)] dx, with z = 1/log x.
        def by_z(z):
            if z <= 0.0:
                return 0.0
            lx = 1.0 / z
            x = math.exp(lx) if lx < 700 else math.inf
            g = lx + math.log1p(self.shift * math.exp(-lx))
            ratio = 1.0 if not math.isfinite(x) else x / (x + self.shift)
            integrand_x = 1.0 / g**2 + 2.0 * ratio / g**3  # times dx/x
            return integrand_x / z**2

        val, _ = integrate.quad(by_z, 0.0, 1.0 / math.log(x0), epsabs=0.0,
                                epsrel=1e-12, limit=400)
        return val / self.normalizer

    def regime_info(self) -> Regularity:
        z = self.normalizer

        def slowly(t):
            return self.rho_continuous(t) / t

        return Regularity(
            kind="RegVarOne", alpha=1.0, params={"c": self.c},
            scale=lambda t: t * slowly(t),
            slowly_varying=slowly,
            l_hat=self.l_hat_exact,
            description=f"rho(t) ~ t L(t), L(t) ~ {1 / z:.6g} (log t)^-2, L_hat(t) ~ {1 / z:.6g}/log t",
        )

    def spec_string(self) -> str:
        return f"alpha1logsq:c={self.c:g}"


class Finite(WeightModel):
    """Finitely many boxes; a degenerate model used as a test oracle."""

    family = "finite"

    def __init__(self, probs) -> None:
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p <= 0):
            raise WeightError("finite model needs positive probabilities")
        if np.any(np.diff(p) > 0):
            raise WeightError("finite model probabilities must be nonincreasing")
        self.p = p / p.sum()
        super().__init__()

    @property
    def n_boxes(self) -> float:
        return float(self.p.size)

    def _normalizer(self) -> float:
        return 1.0

    def _log_w_table(self, k):
        idx = k.astype(int) - 1
        return np.log(self.p[np.clip(idx, 0, self.p.size - 1)])

    def log_w(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.ceil(x).astype(int) - 1, 0, self.p.size - 1)
        return np.where(x <= self.p.size, np.log(self.p[idx]), -np.inf)

    def dlog_w(self, x):
        z = np.zeros_like(np.asarray(x, dtype=float))
        return z, z

    def _tail_integral_w(self, x0: float) -> float:
        k0 = int(x0)
        return float(self.p[k0:].sum())

    def tail_mass(self, k0: int) -> float:
        return float(self.p[int(k0):].sum())

    def block_mass(self, a: int, b: int) -> float:
        return float(self.p[a - 1:b].sum())

    def _inverse_profile(self, level: float) -> float:
        return float(np.sum(np.log(self.p) >= level))

    def regime_info(self) -> Regularity:
        n = self.p.size
        return Regularity(kind="Finite", alpha=0.0, params={"p": self.p.tolist()},
                          scale=lambda t: float(n), description=f"{n} boxes")

    def spec_string(self) -> str:
        return "finite:p=" + "/".join(f"{x:.17g}" for x in self.p)


_FAMILIES = {
    "zipf": (Zipf, {"alpha": "alpha"}),
    "pipolylog": (PiPolyLog, {"beta": "beta"}),
    "pistretch": (PiStretchedExp, {"sigma": "sigma", "lambda": "lam"}),
    "alpha1logsq": (AlphaOneLogSq, {"c": "c"}),
}


def parse_family(spec: str) -> WeightModel:
    """Build a model from strings like ``"zipf:alpha=0.5"``.

    >>> parse_family("pistretch:sigma=1,lambda=0.5").lam
    0.5
    """
    name, _, rest = spec.strip().partition(":")
    name = name.lower()
    if name == "finite":
        key, _, val = rest.partition("=")
        if key != "p" or not val:
            raise WeightError("finite family expects finite:p=a/b/c")
        try:
            return Finite([float(v) for v in val.split("/")])
        except ValueError as exc:
            raise WeightError(str(exc)) from None
    if name not in _FAMILIES:
        raise WeightError(f"unknown family {name!r}; expected one of {sorted(_FAMILIES)}")
    cls, keys = _FAMILIES[name]
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        key = key.strip().lower()
        if not eq or key not in keys:
            raise WeightError(f"bad parameter {item!r} for family {name}")
        try:
            kwargs[keys[key]] = float(val)
        except ValueError:
            raise WeightError(f"parameter {key} is not a number: {val!r}") from None
    missing = set(keys.values()) - set(kwargs)
    if missing and name != "alpha1logsq":
        raise WeightError(f"family {name} is missing {sorted(missing)}")
    return cls(**kwargs)


def default_models() -> list[WeightModel]:
    """One model per regime at the default parameters."""
    return [PiPolyLog(2.0), PiStretchedExp(1.0, 0.5), Zipf(0.5), AlphaOneLogSq(1.0)]
