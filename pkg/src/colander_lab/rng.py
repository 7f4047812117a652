"""Counter-based random streams.

Every Monte Carlo walk draws from its own stream keyed by ``(seed, walk_id)``;
draw ``c`` of step ``j`` is a pure function of ``(seed, walk_id, j, c)``.
Results therefore do not depend on batching, thread count, or the order in
which walks are advanced.

The per-draw generator is the SplitMix64 finalizer applied to a keyed counter.
Everything else (probe points, lattice seeds) uses numpy's Philox generator
seeded through :func:`derive_seed`, with the label strings documented at each
call site.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 2.0**-53


def _mix(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(master: int, label: str) -> int:
    """Stable 64-bit seed for the sub-stream called ``label``."""
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generator(master: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(master, label)))


def walk_keys(seed: int, walk_ids) -> np.ndarray:
    ids = np.asarray(walk_ids, dtype=np.uint64)
    base = _mix(np.array([int(seed) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    with np.errstate(over="ignore"):
        return _mix(base ^ _mix((ids + np.uint64(1)) * _GOLDEN))


def uniforms(keys: np.ndarray, step, n: int) -> np.ndarray:
    """Uniform [0, 1) draws of shape ``(len(keys), n)`` for the given step(s).

    ``step`` may be a scalar or an array aligned with ``keys``.
    """
    step = np.asarray(step, dtype=np.uint64)
    out = np.empty((keys.shape[0], n))
    for c in range(n):
        with np.errstate(over="ignore"):
            counter = _mix(_mix(step + np.uint64(1)) + np.uint64(c))
            z = _mix(keys + counter)
        out[:, c] = (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT
    return out


def directions_from_uniforms(u: np.ndarray, d: int) -> np.ndarray:
    """Map uniforms to uniformly distributed unit vectors in R^d.

    d=2 uses one angle, d=3 Archimedes' projection (two draws), d>=4 a
    Box-Muller Gaussian vector (needs ``2*ceil(d/2)`` draws).
    """
    n = u.shape[0]
    if d == 2:
        a = 2.0 * np.pi * u[:, 0]
        return np.column_stack((np.cos(a), np.sin(a)))
    if d == 3:
        z = 1.0 - 2.0 * u[:, 0]
        a = 2.0 * np.pi * u[:, 1]
        s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        return np.column_stack((s * np.cos(a), s * np.sin(a), z))
    g = np.empty((n, d))
    for j in range(0, d, 2):
        r = np.sqrt(-2.0 * np.log1p(-u[:, j]))
        a = 2.0 * np.pi * u[:, j + 1]
        g[:, j] = r * np.cos(a)
        if j + 1 < d:
            g[:, j + 1] = r * np.sin(a)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def draws_needed(d: int) -> int:
    if d == 2:
        return 1
    if d == 3:
        return 2
    return 2 * ((d + 1) // 2)


def sphere_points(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)
