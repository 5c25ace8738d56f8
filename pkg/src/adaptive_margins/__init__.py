"""Disturbance-adaptive safety margins for motion-primitive planning.

Offline, Monte Carlo rollouts of a simulated quadrotor tracking each motion
primitive under held Gaussian gusts give tube radii per disturbance level
(the margin LUT).  Online, a moving-variance estimate of residual
accelerations picks the LUT column and the planner keeps the cheapest
primitive whose tube is collision free.
"""

from importlib.resources import files

from .config import Config, load_config, save_config
from .disturbance import DisturbanceEstimate, dryden_wind, future_window_sigma, residual
from .dynamics import Control, DisturbanceSample, State, nominal_dynamics, pid_controller, step
from .harness import ExperimentSpec, TrialMetrics, bench, load_experiment, run_campaign, run_trial
from .planner import PlanningContext, PlanResult, ceil_to_grid, replan_loop, select_trajectory
from .primitives import MotionPrimitive, PrimitiveLibrary, ReferenceTrajectory, generate_library, j_sim
from .tube import MarginLUT, build_lut, fit_tube, simulate_rollouts
from .world import OccupancyGrid, is_free_disc, load_map, tube_is_free


def data_path(name: str):
    """Path of a bundled data file (default.ini, two_gap.map, gust_study.json, lut_default.json)."""
    return files(__name__) / "data" / name


__all__ = [
    "Config", "load_config", "save_config",
    "DisturbanceEstimate", "dryden_wind", "future_window_sigma", "residual",
    "Control", "DisturbanceSample", "State", "nominal_dynamics", "pid_controller", "step",
    "ExperimentSpec", "TrialMetrics", "bench", "load_experiment", "run_campaign", "run_trial",
    "PlanningContext", "PlanResult", "ceil_to_grid", "replan_loop", "select_trajectory",
    "MotionPrimitive", "PrimitiveLibrary", "ReferenceTrajectory", "generate_library", "j_sim",
    "MarginLUT", "build_lut", "fit_tube", "simulate_rollouts",
    "OccupancyGrid", "is_free_disc", "load_map", "tube_is_free",
    "data_path",
]
