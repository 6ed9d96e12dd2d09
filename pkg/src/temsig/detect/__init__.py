"""Online sparse change-point detection (adaptive CUSUM / Shiryaev-Roberts,
CUSUM and GLR baselines) with Monte Carlo threshold calibration."""

from .core import (
    PROCEDURES,
    DetectorState,
    ProcedureConfig,
    SparseConstraint,
    StopResult,
    gaussian_log_lr_increment,
    omd_update,
    project_l1_ball,
    run,
    run_cusum,
    run_glr,
    step,
)
from .montecarlo import (
    CalibrationResult,
    ChangeModel,
    FastDetector,
    NullPaths,
    calibrate_threshold,
    empirical_arl,
    null_paths,
    simulate_stop_times,
    statistic_path,
)

__all__ = [
    "PROCEDURES",
    "CalibrationResult",
    "ChangeModel",
    "DetectorState",
    "FastDetector",
    "NullPaths",
    "ProcedureConfig",
    "SparseConstraint",
    "StopResult",
    "calibrate_threshold",
    "empirical_arl",
    "gaussian_log_lr_increment",
    "null_paths",
    "omd_update",
    "project_l1_ball",
    "run",
    "run_cusum",
    "run_glr",
    "simulate_stop_times",
    "statistic_path",
    "step",
]
