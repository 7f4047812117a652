"""One-dimensional quadrature used by the profile integrals."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import SolverError

MAX_SUBINTERVALS = 2**20


def adaptive_simpson(f, a: float, b: float, rtol: float = 1e-11, atol: float = 0.0,
                     initial_panels: int = 16) -> float:
    """Adaptive Simpson rule with interval bisection.

    ``f`` must accept numpy arrays. All intervals of one refinement level are
    evaluated in a single vectorized call. A panel is accepted when
    ``|S_left + S_right - S_whole| <= 15 * tol_panel``, where the tolerance is
    distributed proportionally to panel length; accepted panels receive the
    Richardson correction ``(S2 - S1) / 15``.
    """
    a = float(a)
    b = float(b)
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0

    edges = np.linspace(a, b, initial_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    flo, fmid, fhi = f(lo), f(mid), f(hi)
    whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
    scale = abs(whole.sum())
    tol_total = max(rtol * scale, atol)
    length = b - a

    total = []
    n_panels = initial_panels
    while lo.size:
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        h = hi - lo
        left = h / 12.0 * (flo + 4.0 * flm + fmid)
        right = h / 12.0 * (fmid + 4.0 * frm + fhi)
        err = left + right - whole
        tol = tol_total * h / length
        ok = np.abs(err) <= 15.0 * tol
        # floor on panel width avoids endless refinement on round-off noise
        ok |= h <= 64.0 * np.finfo(float).eps * max(abs(a), abs(b), 1.0)
        if ok.any():
            total.append(np.sum(left[ok] + right[ok] + err[ok] / 15.0))
        keep = ~ok
        if not keep.any():
            break
        n_panels += int(keep.sum())
        if n_panels > MAX_SUBINTERVALS:
            raise SolverError("adaptive Simpson exceeded the subinterval cap")
        # split unresolved panels into halves
        lo = np.concatenate((lo[keep], mid[keep]))
        hi = np.concatenate((mid[keep], hi[keep]))
        flo_new = np.concatenate((flo[keep], fmid[keep]))
        fhi_new = np.concatenate((fmid[keep], fhi[keep]))
        fmid = np.concatenate((flm[keep], frm[keep]))
        whole = np.concatenate((left[keep], right[keep]))
        flo, fhi = flo_new, fhi_new
        mid = 0.5 * (lo + hi)
    return sign * float(np.sum(total))


@lru_cache(maxsize=32)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gl_intervals(f, lo: np.ndarray, hi: np.ndarray, order: int = 16) -> np.ndarray:
    """Integral of ``f`` over each ``[lo[i], hi[i]]`` by Gauss-Legendre."""
    x, w = gauss_legendre(order)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    half = 0.5 * (hi - lo)
    centre = 0.5 * (hi + lo)
    pts = centre[:, None] + half[:, None] * x[None, :]
    vals = f(pts.ravel()).reshape(pts.shape)
    return half * (vals @ w)
