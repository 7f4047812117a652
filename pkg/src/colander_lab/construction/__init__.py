"""Explicit subharmonic functions whose zero sets are recurrent."""

from .build import (CENTER_SENTINEL, Construction, GrowthRow, HeartCheck, ShellData,
                    SubmeanResult, build, green_lower_bound, growth_profile, heart_check,
                    kt, submean_check, u_eval, volume_membership, zero_radius,
                    zero_set_colander)
from .poisson import BallSeries, DiskSeries, fit_series

__all__ = [
    "CENTER_SENTINEL", "Construction", "GrowthRow", "HeartCheck", "ShellData", "SubmeanResult",
    "build", "green_lower_bound", "growth_profile", "heart_check", "kt", "submean_check",
    "u_eval", "volume_membership", "zero_radius", "zero_set_colander",
    "BallSeries", "DiskSeries", "fit_series",
]
