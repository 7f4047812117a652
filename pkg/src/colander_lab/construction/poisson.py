"""Harmonic extension of axially symmetric boundary data into the unit ball.

The data ``g`` on the unit sphere depend only on the angle to a fixed axis,
so the Poisson integral reduces to a cosine series (d=2) or a Legendre
series (d=3) in that angle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UnsupportedDimension
from ..quadrature import gauss_legendre

DISK_NODES = 512
BALL_NODES = 128


@dataclass(frozen=True)
class DiskSeries:
    """``P g(z) = Re sum_n a_n z^n`` for even data ``g(theta) = sum a_n cos(n theta)``."""

    coeffs: np.ndarray

    @classmethod
    def fit(cls, g, n_nodes: int = DISK_NODES) -> "DiskSeries":
        theta = 2 * np.pi * np.arange(n_nodes) / n_nodes
        f = np.fft.rfft(g(theta)).real / n_nodes
        a = 2 * f
        a[0] = f[0]
        if n_nodes % 2 == 0:
            a[-1] = f[-1]
        return cls(_trim(a))

    def __call__(self, local: np.ndarray) -> np.ndarray:
        """Evaluate at local coordinates ``(axial, transverse)`` in the disk."""
        z = local[:, 0] + 1j * local[:, 1]
        acc = np.zeros(z.shape, dtype=complex)
        for a in self.coeffs[::-1]:
            acc = acc * z + a
        return acc.real

    def boundary_normal_derivative(self, theta) -> np.ndarray:
        n = np.arange(len(self.coeffs))
        return np.cos(np.multiply.outer(theta, n)) @ (n * self.coeffs)


@dataclass(frozen=True)
class BallSeries:
    """``P g(r, t) = sum_l a_l r^l P_l(t)`` for data ``g(t)``, ``t = cos(angle)``."""

    coeffs: np.ndarray

    @classmethod
    def fit(cls, g, n_nodes: int = BALL_NODES) -> "BallSeries":
        t, w = gauss_legendre(n_nodes)
        vals = g(np.asarray(t))
        P = _legendre_table(np.asarray(t), n_nodes - 1)
        a = (2 * np.arange(n_nodes) + 1) / 2 * (P @ (w * vals))
        return cls(_trim(a))

    def __call__(self, local: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(local, axis=1)
        t = np.divide(local[:, 0], r, out=np.ones_like(r), where=r > 0)
        P = _legendre_table(t, len(self.coeffs) - 1)
        powers = r[None, :] ** np.arange(len(self.coeffs))[:, None]
        return np.einsum("l,ln->n", self.coeffs, P * powers)

    def boundary_normal_derivative(self, t) -> np.ndarray:
        P = _legendre_table(np.asarray(t, dtype=float), len(self.coeffs) - 1)
        return (np.arange(len(self.coeffs)) * self.coeffs) @ P


def _legendre_table(t, lmax):
    out = np.empty((lmax + 1, np.size(t)))
    out[0] = 1.0
    if lmax >= 1:
        out[1] = t
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + 1) * t * out[l] - l * out[l - 1]) / (l + 1)
    return out


def _trim(a):
    """Drop trailing coefficients below round-off relative to the largest."""
    big = np.max(np.abs(a))
    keep = np.flatnonzero(np.abs(a) > 1e-15 * big)
    n = keep[-1] + 1 if keep.size else 1
    return np.array(a[:n], dtype=float)


def fit_series(d: int, g_of_cos, n_nodes: int | None = None):
    """Series for boundary data given as a function of the cosine to the axis."""
    if d == 2:
        return DiskSeries.fit(lambda th: g_of_cos(np.cos(th)), n_nodes or DISK_NODES)
    if d == 3:
        return BallSeries.fit(g_of_cos, n_nodes or BALL_NODES)
    raise UnsupportedDimension("Poisson extension implemented for d = 2, 3")
