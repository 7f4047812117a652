"""Harmonic-measure estimation: walk on spheres, grid oracle, layered bounds."""

from .fit import DecayFit, decay_fit
from .grid import GridSolution, grid_solve_2d
from .layers import LayerBounds, LayerStat, layer_bounds
from .report import layer_report_csv, read_csv, result_row, result_rows_csv
from .wos import EstimateCI, WoSConfig, wos_escape, wos_hit

__all__ = [
    "DecayFit", "EstimateCI", "GridSolution", "LayerBounds", "LayerStat", "WoSConfig",
    "decay_fit", "grid_solve_2d", "layer_bounds", "layer_report_csv", "read_csv",
    "result_row", "result_rows_csv", "wos_escape", "wos_hit",
]
