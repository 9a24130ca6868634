"""Wafer-level spatial prediction for multi-site testing with site-grouped Gaussian processes."""

__version__ = "0.1.0"

from .gp import GPOptions, KernelParams, PredictionResult, gp_fit, gp_predict, gpr
from .hier import hgpr
from .baselines import naive_gp, select_k, two_step_calibrate, two_step_predict
from .metrics import delta_error, summary_stats
from .synth import SynthConfig, generate_lot_series, generate_wafer, preset
from .wafer import MeasurementSet, TouchdownLayout, build_tiling

__all__ = [
    "GPOptions", "KernelParams", "PredictionResult", "gp_fit", "gp_predict", "gpr", "hgpr",
    "naive_gp", "select_k", "two_step_calibrate", "two_step_predict", "delta_error",
    "summary_stats", "SynthConfig", "generate_lot_series", "generate_wafer", "preset",
    "MeasurementSet", "TouchdownLayout", "build_tiling",
]
