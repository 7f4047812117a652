"""Finite-difference oracle for harmonic measure in planar colanders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import DomainError, SolverError, UnsupportedDimension
from ..setgen import Colander


@dataclass(frozen=True)
class GridSolution:
    omega_at_origin: float
    iterations: int
    residual: float
    h: float
    values: np.ndarray = None

    def value_at(self, x) -> float:
        """Value at the grid node nearest ``x``."""
        m = (self.values.shape[0] - 1) // 2
        i = int(round(x[0] / self.h)) + m
        j = int(round(x[1] / self.h)) + m
        return float(self.values[i, j])


def _classify(c: Colander, h: float):
    m = int(math.ceil(c.rho_outer / h)) + 1
    axis = h * np.arange(-m, m + 1)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    r = np.hypot(X, Y)
    outer = r >= c.rho_outer - h
    if len(c.obstacles):
        pts = np.column_stack((X.ravel(), Y.ravel()))
        dist = c.obstacles.nearest(pts)[0].reshape(X.shape)
        inside = (dist <= 0) & ~outer
    else:
        inside = np.zeros_like(outer)
    return m, outer, inside


def _residual(u, free):
    lap = np.zeros_like(u)
    lap[1:-1, 1:-1] = (4 * u[1:-1, 1:-1] - u[2:, 1:-1] - u[:-2, 1:-1]
                       - u[1:-1, 2:] - u[1:-1, :-2])
    return float(np.max(np.abs(lap[free]))) if free.any() else 0.0


def _sor(u, free, tol, max_sweeps, omega):
    """Red-black successive over-relaxation, red (i+j even) first."""
    ii, jj = np.indices(u.shape)
    colours = [free & ((ii + jj) % 2 == 0), free & ((ii + jj) % 2 == 1)]
    sweeps = 0
    res = _residual(u, free)
    while res > tol:
        if sweeps >= max_sweeps:
            raise SolverError(f"SOR did not reach {tol:g} in {max_sweeps} sweeps")
        for mask in colours:
            nb = np.zeros_like(u)
            nb[1:-1, 1:-1] = u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
            u[mask] += omega * (0.25 * nb[mask] - u[mask])
        sweeps += 1
        if sweeps % 25 == 0 or sweeps < 5:
            res = _residual(u, free)
    return sweeps, res


def grid_solve_2d(c: Colander, h: float = 0.01, tol: float = 1e-10, method: str = "amg",
                  max_sweeps: int = 10_000_000, keep_values: bool = True,
                  at=(0.0, 0.0)) -> GridSolution:
    """Five-point discrete Laplace solve on the square grid of spacing ``h``.

    Nodes with ``|x| >= rho - h`` carry the value 1, nodes inside obstacles
    the value 0.  ``method="amg"`` solves the linear system with algebraic
    multigrid and then polishes with red-black SOR until the max residual
    is at most ``tol``; ``method="sor"`` uses SOR alone.

    ``at`` is the point of interest (the origin by default); it must lie
    outside every obstacle.  ``omega_at_origin`` is reported regardless.
    """
    if c.d != 2:
        raise UnsupportedDimension("the grid oracle is planar")
    if len(c.obstacles):
        if not h <= c.obstacles.radii.min() / 4:
            raise DomainError("h must be at most a quarter of the smallest obstacle radius")
        if c.obstacles.nearest(np.asarray(at, dtype=float))[0] <= 0:
            raise DomainError("the evaluation point lies inside an obstacle")
    m, outer, inside = _classify(c, h)
    u = np.where(outer, 1.0, 0.0)
    free = ~outer & ~inside
    omega = 2.0 / (1.0 + math.sin(math.pi * h / (2 * c.rho_outer)))
    iterations = 0
    if method == "amg" and free.any():
        u, iterations = _amg_solve(u, free)
    elif method not in ("amg", "sor"):
        raise DomainError(f"unknown grid method {method!r}")
    sweeps, res = _sor(u, free, tol, max_sweeps, omega if method == "sor" else 1.5)
    return GridSolution(float(u[m, m]), iterations + sweeps, res, h,
                        u if keep_values else None)


def _amg_solve(u, free):
    import pyamg

    idx = -np.ones(u.shape, dtype=np.int64)
    idx[free] = np.arange(int(free.sum()))
    rows, cols, vals = [], [], []
    rhs = np.zeros(int(free.sum()))
    fi, fj = np.nonzero(free)
    me = idx[fi, fj]
    rows.append(me)
    cols.append(me)
    vals.append(np.full(me.size, 4.0))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = fi + di, fj + dj
        nb = idx[ni, nj]
        known = nb < 0
        np.add.at(rhs, me[known], u[ni[known], nj[known]])
        rows.append(me[~known])
        cols.append(nb[~known])
        vals.append(np.full(int((~known).sum()), -1.0))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(rhs.size, rhs.size))
    ml = pyamg.ruge_stuben_solver(A)
    residuals = []
    sol = ml.solve(rhs, tol=1e-13, maxiter=200, residuals=residuals)
    out = u.copy()
    out[free] = sol
    return out, len(residuals)
