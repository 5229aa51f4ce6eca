"""Monte Carlo engines for the occupancy scheme, Poissonized and deterministic.

Boxes are split into three zones.

* Head: the first boxes, simulated one by one.
* Cells: runs of consecutive boxes whose probabilities differ by a factor of
  at most ``1 + delta``.  Inside a cell every box gets the mean probability
  of the run, so the boxes are exchangeable and only the census (how many
  boxes hold 0, 1, ..., cap balls, where ``cap = j_max + 1`` means "at least
  cap") is stored.  The resulting bias on the means is reported by
  ``Layout.aggregation_bias``.
* Sea: all boxes past the last cell.  Each ball landing there is counted as
  a singleton.  ``Layout.collision_bound`` bounds the expected number of
  sea boxes that get two or more balls, summed over the whole grid.

Random streams are keyed by (seed, replicate, stream, step) with a Philox
generator, so results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy import special

from .weights import MAX_TABLE, WeightModel

INT64_SAFE = 1 << 62
_STREAM_MAIN, _STREAM_ARRIVALS = 0, 1


class ConfigError(ValueError):
    """Simulation request that cannot be met with a certified horizon."""


@dataclass(frozen=True)
class SimConfig:
    model: WeightModel
    grid: tuple
    j_max: int = 5
    replicates: int = 1
    seed: int = 0
    delta: float = 0.01
    head_min: int = 1024
    head_max: int = 1 << 16
    collision_tol: float = 1e-6
    cell_ball_budget: int = 50_000_000
    threads: int = 1

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size == 0:
            raise ConfigError("grid must be a non-empty list")
        if np.any(g < 0) or np.any(np.diff(g) <= 0):
            raise ConfigError("grid must be nonnegative and strictly increasing")
        if self.replicates < 1 or self.j_max < 1:
            raise ConfigError("replicates and j_max must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        object.__setattr__(self, "grid", tuple(float(x) for x in g))

    @property
    def cap(self) -> int:
        return self.j_max + 1

    def integer_grid(self) -> np.ndarray:
        g = np.asarray(self.grid)
        if np.any(g != np.round(g)):
            raise ConfigError("ball-count grid must hold integers")
        return g.astype(np.int64)


@dataclass
class OccupancyPath:
    """Counts along a grid for one replicate.

    ``K[i, j-1]`` is the number of boxes with at least j balls
    (j = 1..j_max+1) and ``K_star[i, j-1]`` the number with exactly j
    (j = 1..j_max).  ``overflow`` counts sea balls, ``excess`` the balls
    held by boxes with more than j_max balls.
    """

    replicate: int
    grid: np.ndarray
    K: np.ndarray
    K_star: np.ndarray
    balls: np.ndarray
    overflow: np.ndarray
    excess: np.ndarray
    scheme: str = "poisson"

    def rows(self) -> Iterator[dict]:
        for i, g in enumerate(self.grid):
            for j in range(1, self.K_star.shape[1] + 1):
                yield {
                    "replicate": self.replicate, "grid_value": _num(g), "j": j,
                    "K_j": int(self.K[i, j - 1]), "K_j_star": int(self.K_star[i, j - 1]),
                    "balls": int(self.balls[i]), "overflow_count": int(self.overflow[i]),
                }


def _num(x: float):
    return int(x) if float(x).is_integer() and abs(x) < 2**53 else float(x)


# -- box layout ---------------------------------------------------------------

@dataclass
class Layout:
    model: WeightModel
    horizon: float
    head_p: np.ndarray
    cell_lo: list
    cell_n: np.ndarray
    cell_mass: np.ndarray
    sea_start: int | None
    sea_mass: float
    collision_bound: float
    delta: float
    probs: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        allp = np.concatenate([self.head_p, self.cell_mass, [self.sea_mass]])
        self.probs = allp / allp.sum()

    @property
    def cell_p(self) -> np.ndarray:
        return self.cell_mass / self.cell_n

    @property
    def n_head(self) -> int:
        return self.head_p.size

    @property
    def n_cells(self) -> int:
        return self.cell_n.size

    def aggregated_mean(self, j: int, t: float) -> float:
        """E K*_j(t) for the model the engine actually samples."""
        from .exact_moments import poisson_pmf
        val = float(np.sum(poisson_pmf(j, t * self.head_p)))
        val += float(np.sum(self.cell_n * poisson_pmf(j, t * self.cell_p)))
        if j == 1:
            val += t * self.sea_mass
        return val

    def aggregation_bias(self, j: int, t: float) -> dict:
        """Difference of the sampled-model mean and the certified exact mean."""
        from .exact_moments import mean_poisson_exact
        exact = mean_poisson_exact(self.model, j, t)
        agg = self.aggregated_mean(j, t)
        return {"j": j, "t": t, "aggregated_mean": agg, "exact_mean": exact.value,
                "bias": agg - exact.value, "exact_error_bound": exact.error_bound}

    def certificate(self) -> dict:
        return {
            "horizon": self.horizon, "head_boxes": self.n_head, "cells": self.n_cells,
            "delta": self.delta,
            "sea_start": None if self.sea_start is None else str(self.sea_start),
            "sea_mass": self.sea_mass, "expected_sea_balls": self.horizon * self.sea_mass,
            "collision_bound": self.collision_bound,
        }


def _sea_start(model: WeightModel, horizon: float, tol: float) -> tuple[int, float]:
    k = 1024
    while True:
        bound = 0.5 * horizon**2 * _prob(model, k + 1) * model.tail_mass(k)
        if bound < tol:
            return k, bound
        if k > 1e30:
            raise ConfigError(f"no sea horizon with collision bound < {tol:g}")
        k *= 2


def _prob(model: WeightModel, k: int) -> float:
    if k <= MAX_TABLE:
        return model.prob(k)
    return float(model.prob_continuous(float(k)))


@lru_cache(maxsize=32)
def build_layout(model: WeightModel, horizon: float, delta: float = 0.01,
                 head_min: int = 1024, head_max: int = 1 << 16,
                 collision_tol: float = 1e-6) -> Layout:
    """Head / cell / sea partition for times (or ball counts) up to horizon."""
    horizon = max(float(horizon), 1.0)
    if math.isfinite(model.n_boxes):
        n = int(model.n_boxes)
        return Layout(model, horizon, model.probs(n).copy(), [], np.zeros(0, np.int64),
                      np.zeros(0), None, 0.0, 0.0, delta)
    sea, bound = _sea_start(model, horizon, collision_tol)
    # boxes join cells once neighbours differ by less than a factor 1 + delta
    step = math.log1p(delta)
    h = head_min
    while h < head_max and h < sea:
        d1, _ = model.dlog_w(float(h))
        if -float(np.ravel(d1)[0]) <= step:
            break
        h *= 2
    h = int(min(h, head_max, sea))
    head_p = model.probs(h).copy()
    lo_list, n_list, mass_list = [], [], []
    lo = h + 1
    while lo <= sea:
        level = float(np.ravel(model.log_w(float(lo)))[0]) - step
        hi = int(math.floor(model._inverse_profile(level)))
        hi = max(lo, min(hi, sea, lo + INT64_SAFE - 1))
        lo_list.append(lo)
        n_list.append(hi - lo + 1)
        mass_list.append(model.block_mass(lo, hi))
        lo = hi + 1
    sea_mass = model.tail_mass(sea)
    return Layout(model, horizon, head_p, lo_list, np.asarray(n_list, dtype=np.int64),
                  np.asarray(mass_list, dtype=float), sea, sea_mass, bound, delta)


def layout_for(cfg: SimConfig, horizon: float | None = None) -> Layout:
    hz = cfg.grid[-1] if horizon is None else horizon
    lay = build_layout(cfg.model, float(hz), cfg.delta, cfg.head_min, cfg.head_max,
                       cfg.collision_tol)
    return lay


# -- random streams -------------------------------------------------------------

def rng_for(seed: int, replicate: int, step: int, stream: int = _STREAM_MAIN) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1),
                                spawn_key=(int(replicate), int(stream), int(step)))
    return np.random.Generator(np.random.Philox(ss))


# -- per-replicate state ----------------------------------------------------------

class _State:
    def __init__(self, lay: Layout, cap: int) -> None:
        self.lay = lay
        self.cap = cap
        self.head = np.zeros(lay.n_head, dtype=np.int64)
        self.census = np.zeros((lay.n_cells, cap + 1), dtype=np.int64)
        self.census[:, 0] = lay.cell_n
        self.cell_balls = 0
        self.sea_balls = 0

    @property
    def balls(self) -> int:
        return int(self.head.sum()) + self.cell_balls + self.sea_balls

    def snapshot(self) -> tuple[np.ndarray, int, int, int]:
        cap = self.cap
        hist = np.bincount(np.minimum(self.head, cap), minlength=cap + 1)
        hist = hist + self.census.sum(axis=0)
        at_least = np.cumsum(hist[::-1])[::-1][1:]  # K_1..K_cap
        at_least = at_least.astype(np.int64)
        at_least[0] += self.sea_balls
        held = np.arange(cap) @ hist[:cap] + self.sea_balls
        balls = self.balls
        return at_least, balls, self.sea_balls, balls - int(held)

    # Poissonized increments ---------------------------------------------------
    def poisson_step(self, rng: np.random.Generator, dt: float) -> None:
        lay = self.lay
        if lay.n_head:
            self.head += rng.poisson(lay.head_p * dt)
        if lay.n_cells:
            self.cell_balls += _census_poisson_step(rng, self.census, lay.cell_p * dt, self.cap)
        if lay.sea_mass > 0.0:
            self.sea_balls += int(rng.poisson(lay.sea_mass * dt))

    # fixed number of balls ----------------------------------------------------
    def ball_step(self, rng: np.random.Generator, n: int) -> None:
        lay = self.lay
        counts = rng.multinomial(n, lay.probs)
        h, c = lay.n_head, lay.n_cells
        self.head += counts[:h]
        b = counts[h:h + c]
        if c and b.any():
            self.cell_balls += int(b.sum())
            _census_ball_step(rng, self.census, lay.cell_n, b, self.cap)
        self.sea_balls += int(counts[-1]) if lay.sea_mass > 0.0 else 0


# below this success probability a binomial draw is replaced by a Poisson one
# (Le Cam: total variation <= n p^2); numpy's binomial inversion can loop
# forever for n near 1e18 with p near 1e-17
_POISSON_P = 1e-10


def _binomial(rng, n: np.ndarray, p: np.ndarray) -> np.ndarray:
    small = p < _POISSON_P
    out = np.zeros_like(n)
    big = ~small
    if big.any():
        out[big] = rng.binomial(n[big], p[big])
    if small.any():
        out[small] = np.minimum(rng.poisson(n[small] * p[small]), n[small])
    return out


def _census_poisson_step(rng, census: np.ndarray, lam: np.ndarray, cap: int) -> int:
    """Every box gets an independent Poisson(lam) number of balls."""
    old = census.copy()
    census[:] = 0
    balls = 0
    for s in range(cap):
        rem = old[:, s].copy()
        if not rem.any():
            continue
        tail = np.ones_like(lam)  # P(N >= m)
        for m in range(cap - s):
            # draw the boxes that move past m: P(N > m | N >= m) keeps full
            # precision when lam is far below the double epsilon
            nxt = special.gammainc(m + 1, lam)
            q = np.clip(np.where(tail > 0.0, nxt / np.where(tail > 0.0, tail, 1.0), 0.0), 0.0, 1.0)
            tail = nxt
            y = _binomial(rng, rem, q)
            x = rem - y
            census[:, s + m] += x
            balls += m * int(x.sum())
            rem -= x
        census[:, cap] += rem
        if rem.any():
            balls += _truncated_poisson_sum(rng, lam, rem, cap - s)
    sat = old[:, cap]
    census[:, cap] += sat
    if sat.any():
        balls += int(rng.poisson(sat * lam).sum())
    return balls


def _truncated_poisson_sum(rng, lam: np.ndarray, count: np.ndarray, r: int) -> int:
    """Sum of count[i] Poisson(lam[i]) draws, each conditioned to be >= r.

    View each draw as the points of a rate-lam process on [0, 1].  Given at
    least r points, the r-th arrival tau has the Gamma(r, lam) law cut at 1
    and the remaining points are Poisson(lam (1 - tau)).  So the sum is
    r * count + Poisson(lam * sum(1 - tau)), one Poisson draw per cell.
    """
    keep = count > 0
    lam, count = lam[keep], count[keep]
    lam_b = np.repeat(lam, count)
    if r == 1:
        # truncated exponential by inversion
        u = rng.random(lam_b.size)
        tau = -np.log1p(u * np.expm1(-lam_b)) / lam_b
    else:
        sf_cell = special.gammainc(r, lam)  # P(tau <= 1), per cell
        sf = np.repeat(sf_cell, count)
        tau = np.empty(lam_b.size)
        # gamma proposals where the cut keeps most of the mass
        easy = sf >= 0.3
        idx = np.flatnonzero(easy)
        while idx.size:
            x = rng.standard_gamma(r, idx.size) / lam_b[idx]
            ok = x <= 1.0
            tau[idx[ok]] = x[ok]
            idx = idx[~ok]
        # small lam: propose x^(r-1) on [0, 1], accept w.p. exp(-lam x) >= exp(-lam)
        idx = np.flatnonzero(~easy)
        while idx.size:
            x = rng.random(idx.size) ** (1.0 / r)
            ok = rng.random(idx.size) <= np.exp(-lam_b[idx] * x)
            tau[idx[ok]] = x[ok]
            idx = idx[~ok]
    tau = np.minimum(tau, 1.0)
    ends = np.cumsum(count)
    rest = np.add.reduceat(1.0 - tau, ends - count)
    return int(r * count.sum() + rng.poisson(lam * rest).sum())


def _census_ball_step(rng, census: np.ndarray, cell_n: np.ndarray, b: np.ndarray, cap: int) -> None:
    """Drop b[c] balls uniformly on the cell_n[c] boxes of each cell.

    Boxes in a cell are exchangeable, so they are laid out by state: the
    first census[c, 0] indices hold 0 balls, the next census[c, 1] hold 1,
    and so on.  A box hit h times moves from state s to min(s + h, cap).
    """
    cells = np.repeat(np.arange(b.size), b)
    idx = rng.integers(0, cell_n[cells])
    order = np.lexsort((idx, cells))
    cells, idx = cells[order], idx[order]
    new = np.ones(cells.size, dtype=bool)
    new[1:] = (cells[1:] != cells[:-1]) | (idx[1:] != idx[:-1])
    starts = np.flatnonzero(new)
    hits = np.diff(np.append(starts, cells.size))
    uc, ui = cells[starts], idx[starts]
    bounds = np.cumsum(census, axis=1)[uc]
    state = np.sum(bounds <= ui[:, None], axis=1)
    to = np.minimum(state + hits, cap)
    np.subtract.at(census, (uc, state), 1)
    np.add.at(census, (uc, to), 1)


# -- engines --------------------------------------------------------------------

def _empty_path(rep: int, grid: np.ndarray, cap: int, scheme: str) -> OccupancyPath:
    g = grid.size
    return OccupancyPath(rep, grid, np.zeros((g, cap), np.int64), np.zeros((g, cap - 1), np.int64),
                         np.zeros(g, np.int64), np.zeros(g, np.int64), np.zeros(g, np.int64), scheme)


def _record(path: OccupancyPath, i: int, st: _State) -> None:
    at_least, balls, sea, excess = st.snapshot()
    path.K[i] = at_least
    path.K_star[i] = at_least[:-1] - at_least[1:]
    path.balls[i] = balls
    path.overflow[i] = sea
    path.excess[i] = excess


def _poisson_replicate(cfg: SimConfig, lay: Layout, rep: int) -> OccupancyPath:
    grid = np.asarray(cfg.grid)
    st = _State(lay, cfg.cap)
    path = _empty_path(rep, grid, cfg.cap, "poisson")
    prev = 0.0
    for i, t in enumerate(grid):
        if t > prev:
            st.poisson_step(rng_for(cfg.seed, rep, i), t - prev)
        _record(path, i, st)
        prev = t
    return path


def _check_ball_budget(cfg: SimConfig, lay: Layout, n_max: float) -> None:
    expected = n_max * float(lay.cell_mass.sum())
    if expected > cfg.cell_ball_budget:
        raise ConfigError(
            f"about {expected:.3g} balls per replicate would land in aggregated cells; "
            f"budget is {cfg.cell_ball_budget:.3g} (lower the grid or raise head_max)")


def _binomial_replicate(cfg: SimConfig, lay: Layout, rep: int) -> OccupancyPath:
    grid = cfg.integer_grid()
    st = _State(lay, cfg.cap)
    path = _empty_path(rep, grid, cfg.cap, "binomial")
    prev = 0
    for i, n in enumerate(grid):
        if n > prev:
            st.ball_step(rng_for(cfg.seed, rep, i), int(n - prev))
        _record(path, i, st)
        prev = int(n)
    return path


def _coupled_replicate(cfg: SimConfig, lay: Layout, rep: int) -> tuple[OccupancyPath, OccupancyPath]:
    """One ball stream X_1, X_2, ...; the n-th ball arrives at S_n, a sum of
    unit exponentials.  The deterministic count is read after n_i balls,
    the Poissonized one after pi(n_i) = #{m: S_m <= n_i} balls."""
    grid = cfg.integer_grid()
    arr = rng_for(cfg.seed, rep, 0, _STREAM_ARRIVALS)
    incr = arr.poisson(np.diff(np.concatenate([[0], grid])).astype(float))
    arrivals = np.cumsum(incr)
    targets = np.unique(np.concatenate([grid, arrivals]))
    det = _empty_path(rep, grid, cfg.cap, "binomial")
    poi = _empty_path(rep, grid.astype(float), cfg.cap, "poisson")
    want_det = {int(n): i for i, n in enumerate(grid)}
    want_poi: dict[int, list] = {}
    for i, n in enumerate(arrivals):
        want_poi.setdefault(int(n), []).append(i)
    st = _State(lay, cfg.cap)
    prev = 0
    for step, n in enumerate(targets):
        n = int(n)
        if n > prev:
            st.ball_step(rng_for(cfg.seed, rep, step), n - prev)
        if n in want_det:
            _record(det, want_det[n], st)
        for i in want_poi.get(n, ()):
            _record(poi, i, st)
        prev = n
    return det, poi


def _run(cfg: SimConfig, fn) -> Iterator:
    reps = range(cfg.replicates)
    if cfg.threads <= 1:
        for r in reps:
            yield fn(r)
        return
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        # map returns results in submission order, whatever the scheduling
        yield from pool.map(fn, reps)


def simulate_poisson_path(cfg: SimConfig) -> Iterator[OccupancyPath]:
    """Poissonized scheme on a time grid; one path per replicate."""
    lay = layout_for(cfg)
    return _run(cfg, lambda r: _poisson_replicate(cfg, lay, r))


def simulate_binomial_path(cfg: SimConfig) -> Iterator[OccupancyPath]:
    """Deterministic scheme on a ball-count grid; one path per replicate."""
    cfg.integer_grid()
    lay = layout_for(cfg)
    _check_ball_budget(cfg, lay, cfg.grid[-1])
    return _run(cfg, lambda r: _binomial_replicate(cfg, lay, r))


def simulate_coupled(cfg: SimConfig) -> Iterator[tuple[OccupancyPath, OccupancyPath]]:
    """Coupled (deterministic, Poissonized) paths sharing one ball stream."""
    cfg.integer_grid()
    n_max = cfg.grid[-1]
    horizon = n_max + 10.0 * math.sqrt(n_max) + 20.0
    lay = layout_for(cfg, horizon)
    _check_ball_budget(cfg, lay, horizon)
    return _run(cfg, lambda r: _coupled_replicate(cfg, lay, r))


def stack(paths: Sequence[OccupancyPath], j: int, star: bool = True) -> np.ndarray:
    """(replicates, grid) array of K*_j (or K_j) values."""
    col = j - 1
    return np.stack([(p.K_star if star else p.K)[:, col] for p in paths])
