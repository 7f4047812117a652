"""Equilibrium measures, capacities and potentials of finite unions of balls."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import SolverError, UnsupportedDimension
from .mathcore import kernel_inverse
from .rng import directions_from_uniforms, draws_needed, uniforms, walk_keys
from .setgen import BallUnion, fibonacci_sphere

DENSE_MAX = 4096
MIN_NODES = {2: 8, 3: 64}


@dataclass(frozen=True)
class DiscreteMeasure:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise SolverError("measure weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12 * max(1, len(w)):
            raise SolverError("measure weights must sum to one")

    @property
    def d(self) -> int:
        return self.nodes.shape[1]


@dataclass(frozen=True)
class CapacityResult:
    capacity: float
    robin: float
    residual: float
    nodes: int
    seed: int | None = None
    flagged: bool = False

    def to_json(self) -> str:
        return json.dumps({"capacity": self.capacity, "robin": self.robin,
                           "residual": self.residual, "nodes": self.nodes,
                           "seed": self.seed}, sort_keys=True)


def _ker(d, r):
    return np.log(r) if d == 2 else -(r ** (2.0 - d))


def sphere_nodes(center, r: float, n: int, d: int) -> np.ndarray:
    """Equal-angle nodes on a circle (d=2) or a Fibonacci spiral (d=3)."""
    if d == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.asarray(center) + r * np.column_stack((np.cos(t), np.sin(t)))
    if d == 3:
        return np.asarray(center) + r * fibonacci_sphere(n)
    raise UnsupportedDimension("node placement is implemented for d = 2, 3")


def self_potential(d: int, r: float, n: int) -> float:
    """Mean of ker over the patch a node represents.

    d=2: a straight segment of length ``2 pi r / n``; d=3: a flat disk of
    area ``4 pi r^2 / n``.
    """
    if d == 2:
        half = math.pi * r / n
        return math.log(half) - 1.0
    a = 2.0 * r / math.sqrt(n)
    return -2.0 / a


def uniform_measure(center, r: float, n: int, d: int) -> DiscreteMeasure:
    return DiscreteMeasure(sphere_nodes(center, r, n, d), np.full(n, 1.0 / n))


def equilibrium_solve(S: BallUnion, nodes_per_ball: int = 512, reg: float = 0.0,
                      tol: float = 1e-6) -> tuple[DiscreteMeasure, CapacityResult]:
    """Discrete equilibrium measure of a union of balls.

    Nodes strictly inside another ball are discarded.  The constant-potential
    conditions ``K w = V, sum w = 1`` form a bordered linear system solved
    directly up to ``DENSE_MAX`` nodes and by GMRES above; nodes that receive
    negative weight are removed and the system re-solved.
    """
    d = S.d
    if len(S) == 0:
        raise SolverError("equilibrium measure of the empty set is undefined")
    if d not in MIN_NODES:
        raise UnsupportedDimension("equilibrium_solve supports d = 2, 3")
    if nodes_per_ball < MIN_NODES[d]:
        raise SolverError(f"need at least {MIN_NODES[d]} nodes per ball in d={d}")

    nodes, diag = [], []
    for i, (c, r) in enumerate(zip(S.centers, S.radii)):
        pts = sphere_nodes(c, r, nodes_per_ball, d)
        others = np.delete(np.arange(len(S)), i)
        if len(others):
            gap = np.linalg.norm(pts[:, None, :] - S.centers[others][None], axis=2) - S.radii[others]
            pts = pts[np.all(gap >= 0, axis=1)]
        nodes.append(pts)
        diag.append(np.full(len(pts), self_potential(d, r, nodes_per_ball) + reg))
    nodes = np.concatenate(nodes)
    diag = np.concatenate(diag)
    if len(nodes) == 0:
        raise SolverError("no admissible nodes")

    active = np.ones(len(nodes), dtype=bool)
    for _ in range(len(nodes)):
        w_act, robin = _bordered_solve(nodes[active], diag[active], d)
        if np.all(w_act >= 0):
            break
        idx = np.flatnonzero(active)
        active[idx[w_act < 0]] = False
    else:  # pragma: no cover - every pass removes at least one node
        raise SolverError("active-set loop did not terminate")
    weights = np.zeros(len(nodes))
    weights[active] = w_act
    weights /= weights.sum()

    mu = DiscreteMeasure(nodes[active], weights[active])
    pot = _node_potentials(mu.nodes, mu.weights, diag[active], d)
    residual = float(np.max(np.abs(pot - robin)))
    if d == 2:
        cap = float(kernel_inverse(2, robin))
        flagged = cap >= 1.0
    else:
        cap = float(kernel_inverse(d, robin)) if robin < 0 else math.inf
        flagged = False
    flagged = flagged or residual > tol * max(abs(robin), np.finfo(float).tiny)
    return mu, CapacityResult(cap, float(robin), residual, int(active.sum()), None, bool(flagged))


def _kernel_matrix(a, b, d):
    dist = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    with np.errstate(divide="ignore"):
        return _ker(d, dist)


def _node_potentials(nodes, w, diag, d, block=1024):
    out = np.empty(len(nodes))
    for s in range(0, len(nodes), block):
        K = _kernel_matrix(nodes[s:s + block], nodes, d)
        rows = np.arange(K.shape[0])
        K[rows, s + rows] = diag[s:s + block]
        out[s:s + block] = K @ w
    return out


def _bordered_solve(nodes, diag, d):
    n = len(nodes)
    if n <= DENSE_MAX:
        M = np.empty((n + 1, n + 1))
        K = _kernel_matrix(nodes, nodes, d)
        np.fill_diagonal(K, diag)
        M[:n, :n] = K
        M[:n, n] = -1.0
        M[n, :n] = 1.0
        M[n, n] = 0.0
        rhs = np.zeros(n + 1)
        rhs[n] = 1.0
        try:
            sol = linalg.solve(M, rhs)
        except linalg.LinAlgError as exc:
            raise SolverError(f"singular equilibrium system: {exc}") from None
        if not np.all(np.isfinite(sol)):
            raise SolverError("singular equilibrium system")
        return sol[:n], sol[n]

    def matvec(v):
        out = np.empty(n + 1)
        out[:n] = _node_potentials(nodes, v[:n], diag, d) - v[n]
        out[n] = v[:n].sum()
        return out

    op = LinearOperator((n + 1, n + 1), matvec=matvec, dtype=float)
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    x0 = np.append(np.full(n, 1.0 / n), 0.0)
    sol, info = gmres(op, rhs, x0=x0, rtol=1e-12, restart=200, maxiter=50)
    if info != 0:
        raise SolverError(f"GMRES did not converge (info={info})")
    return sol[:n], sol[n]


def potential_eval(mu: DiscreteMeasure, x, floor: float = 1e-300):
    """``sum_i w_i ker(|x - x_i|)``; one point or an ``(m, d)`` array."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    out = np.empty(len(pts))
    for s in range(0, len(pts), 2048):
        dist = np.linalg.norm(pts[s:s + 2048, None, :] - mu.nodes[None], axis=2)
        out[s:s + 2048] = _ker(mu.d, np.maximum(dist, floor)) @ mu.weights
    return float(out[0]) if x.ndim == 1 else out


def barrier_eval(lattice, Rn: float, d: int, x):
    """``Rn^(d-2) * sum_lambda -p_{mu_lambda}(x)`` for ``lattice = [(lambda, mu), ...]``."""
    x = np.asarray(x, dtype=float)
    total = np.zeros(np.atleast_2d(x).shape[0])
    for _, mu in lattice:
        total -= np.atleast_1d(potential_eval(mu, x))
    total *= Rn ** (d - 2)
    return float(total[0]) if x.ndim == 1 else total


def capacity_oracle(nodes_per_ball: int | None = None):
    """Map a BallUnion to its capacity; single balls use the exact radius."""
    def cap(S: BallUnion) -> float:
        if len(S) == 0:
            return 0.0
        if len(S) == 1:
            return float(S.radii[0])
        n = nodes_per_ball or (256 if S.d == 2 else 512)
        return equilibrium_solve(S, n)[1].capacity
    return cap


# --------------------------------------------------------------------------
# Monte Carlo capacity in d >= 3
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class McCapacity:
    capacity: float
    stderr: float
    hits: int
    n_walks: int
    launch_radius: float
    n_censored: int = 0


def mc_capacity_d3(S: BallUnion, n_walks: int = 100_000, seed: int = 0,
                   launch_factor: float = 100.0, delta: float | None = None,
                   max_steps: int = 100_000, chunk: int = 16_384) -> McCapacity:
    """Newtonian capacity from the hitting probability of a launch sphere.

    Walks start uniformly on a sphere of radius ``Rs`` around the set and
    run walk-on-spheres toward ``S``.  Outside the launch sphere a walk
    escapes for good with probability ``1 - Rs/r``; otherwise it re-enters
    at a point drawn from exterior harmonic measure, sampled by a short
    interior walk from the Kelvin image ``Rs^2 x / r^2``.  The mean hitting
    probability from the sphere equals ``cap(S) / Rs``.
    """
    d = S.d
    if d < 3:
        raise UnsupportedDimension("hitting-probability capacity needs d >= 3")
    if len(S) == 0:
        return McCapacity(0.0, 0.0, 0, n_walks, 0.0)
    lo = (S.centers - S.radii[:, None]).min(axis=0)
    hi = (S.centers + S.radii[:, None]).max(axis=0)
    centre = 0.5 * (lo + hi)
    diam = float(np.linalg.norm(hi - lo))
    Rs = launch_factor * diam
    delta = delta if delta is not None else 1e-5 * float(S.radii.min())
    k = draws_needed(d)
    hits, censored = 0, 0
    for start in range(0, n_walks, chunk):
        ids = np.arange(start, min(start + chunk, n_walks))
        h, c = _mc_cap_chunk(S, centre, Rs, delta, max_steps, walk_keys(seed, ids), d, k)
        hits += h
        censored += c
    n_eff = n_walks - censored
    p = hits / n_eff
    se = math.sqrt(p * (1 - p) / n_eff)
    return McCapacity(Rs * p, Rs * se, hits, n_walks, Rs, censored)


def _mc_cap_chunk(S, centre, Rs, delta, max_steps, keys, d, k):
    n = len(keys)
    u0 = uniforms(keys, 0, k)
    x = centre + Rs * directions_from_uniforms(u0, d)
    step = np.ones(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    idx = np.arange(n)
    while alive.any():
        a = idx[alive]
        xa = x[a]
        dist, _ = S.nearest(xa)
        done = dist < delta
        hit[a[done]] = True
        alive[a[done]] = False
        a, xa, dist = a[~done], xa[~done], dist[~done]
        if a.size == 0:
            break
        rel = xa - centre
        r = np.linalg.norm(rel, axis=1)
        out = r > Rs * (1 + 1e-12)  # walkers placed on the sphere step inward
        if out.any():
            o = a[out]
            u = uniforms(keys[o], step[o], 1)[:, 0]
            step[o] += 1
            esc = u >= Rs / r[out]
            alive[o[esc]] = False
            back = o[~esc]
            if back.size:
                rb = rel[out][~esc]
                rr = r[out][~esc]
                kel = rb * (Rs / rr)[:, None] ** 2
                x[back] = centre + _interior_exit(kel, Rs, keys[back], step, back, d, k, delta)
        inn = a[~out]
        if inn.size:
            u = uniforms(keys[inn], step[inn], k)
            step[inn] += 1
            x[inn] = x[inn] + dist[~out][:, None] * directions_from_uniforms(u, d)
        over = alive & (step > max_steps)
        alive[over] = False
    censored = int(np.sum(~hit & (step > max_steps)))
    return int(hit.sum()), censored


def _interior_exit(y, Rs, keys, step, rows, d, k, delta):
    """Exit points of Brownian motion from B(0, Rs) started at ``y``."""
    y = y.copy()
    live = np.ones(len(y), dtype=bool)
    while live.any():
        i = np.flatnonzero(live)
        gap = Rs - np.linalg.norm(y[i], axis=1)
        near = gap < delta * Rs
        live[i[near]] = False
        i, gap = i[~near], gap[~near]
        if i.size == 0:
            break
        u = uniforms(keys[i], step[rows[i]], k)
        step[rows[i]] += 1
        y[i] = y[i] + gap[:, None] * directions_from_uniforms(u, d)
    return y * (Rs / np.linalg.norm(y, axis=1))[:, None]
