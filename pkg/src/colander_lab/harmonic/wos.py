"""Walk-on-spheres estimation of harmonic measure in colander domains."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError
from ..rng import directions_from_uniforms, draws_needed, uniforms, walk_keys
from ..setgen import BallUnion, Colander

CHUNK = 16_384
CENSOR_LIMIT = 1e-3

ESCAPED, ABSORBED, CENSORED = 1, 0, -1


@dataclass(frozen=True)
class WoSConfig:
    delta: float
    n_walks: int = 100_000
    max_steps: int = 100_000
    seed: int = 0

    def check(self, rho_outer: float):
        if not 0 < self.delta <= 1e-2 * rho_outer:
            raise ConfigError("delta must lie in (0, 0.01 * rho_outer]")
        if self.n_walks < 1:
            raise ConfigError("n_walks must be positive")
        if self.max_steps < 1000:
            raise ConfigError("max_steps must be at least 1000")

    @classmethod
    def default(cls, rho_outer: float, **kw) -> "WoSConfig":
        return cls(delta=1e-4 * rho_outer, **kw)


@dataclass(frozen=True)
class EstimateCI:
    p_hat: float
    stderr: float
    n_success: int
    n_fail: int
    n_censored: int
    flagged: bool = False

    @property
    def n(self) -> int:
        return self.n_success + self.n_fail

    @classmethod
    def from_counts(cls, success: int, fail: int, censored: int) -> "EstimateCI":
        n = success + fail
        total = n + censored
        p = success / n if n else 0.0
        se = math.sqrt(p * (1 - p) / n) if n else math.inf
        flagged = n == 0 or censored > CENSOR_LIMIT * total
        return cls(p, se, int(success), int(fail), int(censored), bool(flagged))

    def complement(self) -> "EstimateCI":
        return EstimateCI.from_counts(self.n_fail, self.n_success, self.n_censored)

    def to_dict(self) -> dict:
        return {"p_hat": self.p_hat, "stderr": self.stderr, "n_success": self.n_success,
                "n_fail": self.n_fail, "n_censored": self.n_censored, "flagged": self.flagged}


def thread_count() -> int:
    raw = os.environ.get("COLANDER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"COLANDER_THREADS must be an integer, got {raw!r}") from None


def walk_outcomes(obstacles: BallUnion, starts: np.ndarray, outer: np.ndarray,
                  delta: float, max_steps: int, keys: np.ndarray) -> np.ndarray:
    """Advance one batch of walks to absorption.

    ``starts[i]`` and ``outer[i]`` give the start point and the outer radius
    of walk ``i``; ``keys[i]`` its random stream.  A walk within ``delta`` of
    an obstacle is absorbed (checked first), within ``delta`` of the outer
    sphere it escapes.  Returns ESCAPED / ABSORBED / CENSORED codes.
    """
    n, d = starts.shape
    k = draws_needed(d)
    x = starts.astype(float, copy=True)
    result = np.full(n, CENSORED, dtype=np.int8)
    live = np.arange(n)
    step = 0
    while live.size and step < max_steps:
        xa = x[live]
        to_ob = obstacles.nearest(xa)[0] if len(obstacles) else np.full(live.size, np.inf)
        to_out = outer[live] - np.linalg.norm(xa, axis=1)
        hit = to_ob < delta
        esc = ~hit & (to_out < delta)
        result[live[hit]] = ABSORBED
        result[live[esc]] = ESCAPED
        move = ~(hit | esc)
        live = live[move]
        if not live.size:
            break
        radius = np.minimum(to_ob[move], to_out[move])
        u = uniforms(keys[live], step, k)
        x[live] = xa[move] + radius[:, None] * directions_from_uniforms(u, d)
        step += 1
    return result


def _counts(codes):
    return (int(np.sum(codes == ESCAPED)), int(np.sum(codes == ABSORBED)),
            int(np.sum(codes == CENSORED)))


def run_walks(obstacles: BallUnion, start, outer_radius: float, delta: float,
              n_walks: int, max_steps: int, seed: int) -> tuple[int, int, int]:
    """Escape / absorb / censor counts for ``n_walks`` walks from one point.

    Walks are processed in fixed chunks; chunk results are summed in chunk
    order, so the counts do not depend on the number of threads.
    """
    start = np.asarray(start, dtype=float)
    d = start.shape[0]
    bounds = [(s, min(s + CHUNK, n_walks)) for s in range(0, n_walks, CHUNK)]

    def one(b):
        ids = np.arange(*b)
        starts = np.broadcast_to(start, (len(ids), d))
        outer = np.full(len(ids), float(outer_radius))
        return _counts(walk_outcomes(obstacles, starts, outer, delta, max_steps,
                                     walk_keys(seed, ids)))

    threads = min(thread_count(), len(bounds))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, bounds))
    else:
        parts = [one(b) for b in bounds]
    s = sum(p[0] for p in parts)
    f = sum(p[1] for p in parts)
    c = sum(p[2] for p in parts)
    return s, f, c


def _check_start(c: Colander, x0):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (c.d,):
        raise DomainError(f"start point must have dimension {c.d}")
    if not np.linalg.norm(x0) < c.rho_outer:
        raise DomainError("start point lies outside the outer ball")
    return x0


def wos_escape(c: Colander, x0, cfg: WoSConfig) -> EstimateCI:
    """Probability that Brownian motion from ``x0`` reaches the outer sphere
    before any obstacle."""
    cfg.check(c.rho_outer)
    x0 = _check_start(c, x0)
    if len(c.obstacles) and c.obstacles.nearest(x0)[0] <= 0:
        raise DomainError("start point lies inside an obstacle")
    if len(c.obstacles) == 0:
        return EstimateCI.from_counts(cfg.n_walks, 0, 0)
    s, f, n_c = run_walks(c.obstacles, x0, c.rho_outer, cfg.delta, cfg.n_walks,
                          cfg.max_steps, cfg.seed)
    return EstimateCI.from_counts(s, f, n_c)


def wos_hit(c: Colander, x, cfg: WoSConfig) -> EstimateCI:
    """Probability of hitting an obstacle before the outer sphere.

    Starting points inside or within ``delta`` of an obstacle count as an
    immediate hit.
    """
    cfg.check(c.rho_outer)
    x = _check_start(c, x)
    if len(c.obstacles) == 0:
        return EstimateCI.from_counts(0, cfg.n_walks, 0)
    if c.obstacles.nearest(x)[0] < cfg.delta:
        return EstimateCI.from_counts(cfg.n_walks, 0, 0)
    s, f, n_c = run_walks(c.obstacles, x, c.rho_outer, cfg.delta, cfg.n_walks,
                          cfg.max_steps, cfg.seed)
    return EstimateCI.from_counts(f, s, n_c)
