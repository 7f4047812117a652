"""Layered product bounds for the escape probability.

For nested balls ``D_k = B(0, A rho_k)`` the escape probability from the
origin through ``dD_{n+1}`` is squeezed between

    exp(-alpha * sum_k sup_{dD_k} w_k)   and   exp(-sum_k inf_{dD_k} w_k),

where ``w_k(x)`` is the probability of hitting the obstacles before leaving
``D_{k+1}`` and ``alpha = 1 / (1 - max_k sup w_k)``.  Inf and sup are taken
over ``m_points`` sampled boundary points, so the bounds are empirical.
The origin is included as an extra layer ``k = 0`` with ``dD_0 = {0}``,
which keeps both inequalities valid when obstacles meet ``D_1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import AlphaError, DomainError
from ..mathcore import rho_recursion
from ..rng import derive_seed, generator
from ..setgen import Colander, fibonacci_sphere
from .wos import EstimateCI, WoSConfig, wos_hit


@dataclass(frozen=True)
class LayerStat:
    k: int
    rho_k: float
    inf_hat: EstimateCI
    sup_hat: EstimateCI
    m_points: int


@dataclass(frozen=True)
class LayerBounds:
    lower: float
    upper: float
    lower_se: float
    upper_se: float
    alpha: float
    alpha_ok: bool
    A: float
    outer_radius: float
    layers: tuple


def boundary_points(radius: float, m: int, d: int, seed: int, label: str) -> np.ndarray:
    """``m`` quasi-uniform points on the sphere of the given radius, randomly rotated."""
    rng = generator(seed, label)
    if d == 2:
        t = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(m) / m
        return radius * np.column_stack((np.cos(t), np.sin(t)))
    if d == 3:
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        return radius * fibonacci_sphere(m) @ (q * np.sign(np.diag(r))).T
    g = rng.standard_normal((m, d))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def layer_radii(c: Colander, n: int, A: float) -> np.ndarray:
    if c.profile is None:
        raise DomainError("layer bounds need a colander with a profile")
    return A * rho_recursion(c.profile.R, n + 1)


def layer_bounds(c: Colander, n: int, A: float = 2.0, m_points: int = 16,
                 cfg: WoSConfig | None = None) -> LayerBounds:
    """Empirical layered bounds on ``omega(0, dD_{n+1}; D_{n+1} minus E)``."""
    if n < 1:
        raise DomainError("need at least one layer")
    if m_points < 8:
        raise DomainError("m_points must be at least 8")
    if A < 1:
        raise DomainError("layer scale A must be at least 1")
    radii = layer_radii(c, n, A)
    cfg = cfg or WoSConfig(delta=1e-4 * radii[-1], n_walks=10_000)
    obstacles = c.obstacles
    stats = []
    for k in range(0, n + 1):
        outer = radii[k + 1]
        gaps = np.linalg.norm(obstacles.centers, axis=1) - obstacles.radii
        dom = Colander(outer, obstacles.subset(gaps < outer))
        if k == 0:
            pts = np.zeros((1, c.d))
        else:
            pts = boundary_points(radii[k], m_points, c.d, cfg.seed, f"layer-points/{k}")
        ests = []
        for j, x in enumerate(pts):
            sub = WoSConfig(min(cfg.delta, 1e-2 * outer), cfg.n_walks, cfg.max_steps,
                            derive_seed(cfg.seed, f"layer/{k}/{j}"))
            ests.append(wos_hit(dom, x, sub))
        p = np.array([e.p_hat for e in ests])
        stats.append(LayerStat(k, float(radii[k] / A), ests[int(np.argmin(p))],
                               ests[int(np.argmax(p))], len(pts)))

    sups = np.array([s.sup_hat.p_hat for s in stats])
    infs = np.array([s.inf_hat.p_hat for s in stats])
    sup_se = np.array([s.sup_hat.stderr for s in stats])
    inf_se = np.array([s.inf_hat.stderr for s in stats])
    s_max = float(sups.max())
    if s_max >= 1.0:
        raise AlphaError(f"max layer hitting probability {s_max:.4g} reaches 1")
    alpha = 1.0 / (1.0 - s_max)
    total = float(sups.sum())
    lower = math.exp(-alpha * total)
    upper = math.exp(-float(infs.sum()))
    # first-order propagation through log(lower) = -alpha(s_max) * sum(sups)
    grad = np.full(len(sups), alpha)
    grad[int(np.argmax(sups))] += total * alpha**2
    lower_se = lower * math.sqrt(float(np.sum((grad * sup_se) ** 2)))
    upper_se = upper * math.sqrt(float(np.sum(inf_se**2)))
    alpha_ok = bool(np.all(sups <= 1.0 - 1.0 / alpha + 1e-15))
    return LayerBounds(lower, upper, lower_se, upper_se, alpha, alpha_ok, A,
                       float(radii[-1]), tuple(stats))
