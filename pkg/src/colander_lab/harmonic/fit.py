"""Fitting the exponential decay of escape probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import FitError
from ..mathcore import Profile, envelope_integral


@dataclass(frozen=True)
class DecayFit:
    c_slope: float
    intercept: float
    r2: float
    n_points: int
    excluded: tuple


def decay_fit(p: Profile, rhos, omegas) -> DecayFit:
    """Weighted least squares of ``-log p_hat`` against ``int_1^rho phi``.

    Weights are the inverse variances ``p_hat^2 / stderr^2`` of ``log p_hat``;
    points with ``p_hat = 0`` are excluded.  Exact data (zero stderr) get
    equal weights.
    """
    rhos = list(rhos)
    omegas = list(omegas)
    if len(rhos) != len(omegas):
        raise FitError("rhos and omegas differ in length")
    keep = [i for i, e in enumerate(omegas) if e.p_hat > 0]
    excluded = tuple(i for i in range(len(omegas)) if i not in keep)
    if len(keep) < 4:
        raise FitError(f"need at least 4 usable points, got {len(keep)}")
    x = np.array([envelope_integral(p, rhos[i]) for i in keep])
    y = np.array([-math.log(omegas[i].p_hat) for i in keep])
    se = np.array([omegas[i].stderr / omegas[i].p_hat for i in keep])
    w = np.ones_like(se) if np.all(se == 0) else 1.0 / np.maximum(se, se[se > 0].min()) ** 2
    return _weighted_line(x, y, w, excluded)


def _weighted_line(x, y, w, excluded=()):
    if np.ptp(x) == 0:
        raise FitError("all abscissae coincide")
    sw = w.sum()
    xm, ym = (w @ x) / sw, (w @ y) / sw
    sxx = w @ (x - xm) ** 2
    sxy = w @ ((x - xm) * (y - ym))
    slope = sxy / sxx
    icpt = ym - slope * xm
    ss_res = w @ (y - icpt - slope * x) ** 2
    ss_tot = w @ (y - ym) ** 2
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(icpt), float(r2), int(len(x)), tuple(excluded))
