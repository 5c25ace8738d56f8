"""Margin lookup, tube-filtered primitive selection and the replanning loop."""

from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .config import Config
from .disturbance import DisturbanceEstimate, lookup_sigma, residual_accel
from .dynamics import POS, PIDController, State, rotation_matrix, rk4_step
from .primitives import MotionPrimitive, PrimitiveLibrary, ReferenceTrajectory, j_sim
from .tube import MarginLUT
from .world import OccupancyGrid, tube_check_times

log = logging.getLogger(__name__)


class AboveGridError(ValueError):
    """Estimated sigma exceeds the largest precomputed level."""


class PlannerConfigError(ValueError):
    """LUT and library disagree."""


def ceil_to_grid(sigma_hat: float, grid: Sequence[float]) -> float:
    """Smallest grid level not below ``sigma_hat``."""
    if sigma_hat < 0:
        raise ValueError(f"sigma_hat must be nonnegative, got {sigma_hat}")
    k = bisect.bisect_left(list(grid), sigma_hat)
    if k == len(grid):
        raise AboveGridError(f"sigma {sigma_hat} above grid maximum {grid[-1]}")
    return float(grid[k])


@dataclass
class PlanningContext:
    reference: ReferenceTrajectory
    state: State
    lut: MarginLUT
    library: PrimitiveLibrary
    grid: OccupancyGrid
    replan_rate: float = 5.0
    strict_grid: bool = False

    def __post_init__(self):
        if self.replan_rate <= 0:
            raise PlannerConfigError("replan_rate must be positive")
        check_lut_matches(self.lut, self.library)


def check_lut_matches(lut: MarginLUT, library: PrimitiveLibrary) -> None:
    if lut.primitive_ids != library.ids:
        raise PlannerConfigError(f"LUT ids {lut.primitive_ids} do not match library ids {library.ids}")
    for meta, prim in zip(lut.primitives, library):
        if not (
            math.isclose(meta["linear_speed"], prim.linear_speed)
            and math.isclose(meta["angular_speed"], prim.angular_speed, abs_tol=1e-12)
            and math.isclose(meta["t_f"], prim.t_f)
        ):
            raise PlannerConfigError(f"LUT entry {meta} does not describe primitive {prim.id}")


@dataclass
class PlanResult:
    chosen_id: int | None
    cost: float
    theta: float
    sigma_hat: float
    sigma_level: float
    costs: np.ndarray = field(repr=False)  # nan where the tube collides
    free: np.ndarray = field(repr=False)
    thetas: np.ndarray = field(repr=False)
    clamped: bool = False

    @property
    def feasible_count(self) -> int:
        return int(np.count_nonzero(self.free))


def tubes_free(grid: OccupancyGrid, placed: Sequence[MotionPrimitive], thetas) -> np.ndarray:
    """Free flag per placed primitive, one batched disc query for all samples."""
    chunks, owners, radii = [], [], []
    for k, prim in enumerate(placed):
        t = tube_check_times(prim, grid.resolution)
        chunks.append(prim.positions(t)[:, :2])
        owners.append(np.full(len(t), k))
        radii.append(np.full(len(t), thetas[k]))
    pts = np.concatenate(chunks)
    owner = np.concatenate(owners)
    ok = grid.discs_free(pts, np.concatenate(radii))
    bad = np.zeros(len(placed), dtype=bool)
    bad[owner[~ok]] = True
    return ~bad


def select_trajectory(
    ctx: PlanningContext,
    sigma_hat: float,
    time: float | None = None,
    theta_override: float | None = None,
) -> PlanResult:
    """Lowest-cost primitive whose tube at the looked-up margin is free.

    Primitives are anchored at the current pose.  The reference window starts
    at the reference pose closest to ``time`` (default: the state time).
    Ties on cost go to the smaller |angular speed|, then the lower id.
    ``theta_override`` replaces every looked-up margin (hand-tuned mode) but
    the sigma level is still reported.
    """
    if len(ctx.library) == 0:
        raise PlannerConfigError("empty primitive library")
    grid_levels = ctx.lut.sigma_grid
    clamped = False
    try:
        level = ceil_to_grid(sigma_hat, grid_levels)
    except AboveGridError:
        if ctx.strict_grid:
            raise
        level, clamped = float(grid_levels[-1]), True
        log.warning("sigma %.3f above grid, clamped to %.3f", sigma_hat, level)
    if theta_override is None:
        thetas = ctx.lut.column(level).copy()
    else:
        thetas = np.full(len(ctx.library), float(theta_override))
    s = ctx.state
    pose = (s.position[0], s.position[1], s.position[2], s.yaw)
    placed = [p.placed(pose) for p in ctx.library]
    free = tubes_free(ctx.grid, placed, thetas)
    now = s.time if time is None else time
    t0 = ctx.reference.closest_time(now)
    costs = np.full(len(placed), np.nan)
    best, best_key = None, None
    for k, prim in enumerate(placed):
        if not free[k]:
            continue
        costs[k] = j_sim(prim, ctx.reference, ref_start_time=t0)
        key = (costs[k], abs(prim.angular_speed), prim.id)
        if best_key is None or key < best_key:
            best, best_key = k, key
    if best is None:
        return PlanResult(None, math.inf, math.nan, sigma_hat, level, costs, free, thetas, clamped)
    return PlanResult(
        placed[best].id, float(costs[best]), float(thetas[best]), sigma_hat, level, costs, free, thetas, clamped
    )


# --------------------------------------------------------------------------
# closed loop
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HoldTrajectory:
    """Position hold used when no primitive is feasible."""

    position: tuple
    yaw: float

    def reference(self, t: float):
        return np.asarray(self.position, float), np.zeros(3), np.zeros(3), self.yaw, 0.0

    def positions(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.position, float), t.shape + (3,))

    def tangents(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0]), t.shape + (3,))


@dataclass
class PlanRecord:
    tick: int
    t: float
    sigma_hat: float
    sigma_level: float
    chosen_id: int | None
    theta: float
    cost: float
    feasible_count: int
    hold: bool = False
    clamped: bool = False


@dataclass
class Trace:
    plans: list
    times: np.ndarray
    states: np.ndarray  # (T, STATE_DIM)
    cross_track: np.ndarray  # (T,)
    theta: np.ndarray  # (T,) margin active at each sample
    sigma_hat: np.ndarray  # (T,)
    outcome: str = "timeout"  # goal | collision | timeout
    end_time: float = 0.0


TRACE_COLUMNS = ["tick", "t", "sigma_hat", "sigma_level", "chosen_id", "theta", "cost", "feasible_count"]


def write_plan_csv(path, plans) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for p in plans:
            w.writerow([
                p.tick, repr(p.t), repr(p.sigma_hat), repr(p.sigma_level),
                "" if p.chosen_id is None else p.chosen_id,
                repr(p.theta), repr(p.cost), p.feasible_count,
            ])


def _cross_track(traj, tau: float, pos: np.ndarray, include_vertical: bool) -> float:
    tau = min(max(tau, 0.0), getattr(traj, "t_f", tau))
    ref = traj.positions(tau)
    tan = traj.tangents(tau)
    e = pos - ref
    e = e - np.dot(e, tan) * tan
    return float(np.linalg.norm(e if include_vertical else e[:2]))


def replan_loop(
    ctx: PlanningContext,
    estimator: DisturbanceEstimate | None,
    wind,
    duration: float,
    cfg: Config | None = None,
    sigma_source: Callable[[float], float] | None = None,
    theta_override: float | None = None,
    stop: Callable[[State], str | None] | None = None,
) -> Trace:
    """Fixed-rate replanning closed loop.

    ``wind`` is ``(times, accel)`` with world-frame accelerations sampled at
    the integrator step (2 or 3 columns); the sample at each step is held
    over it.  At control rate the residual of the last interval updates
    ``estimator``; every planning tick queries ``sigma_source(t)`` when given,
    otherwise the estimator.  When no primitive is feasible the vehicle holds
    the anchor of the last feasible plan (the vehicle's position at that
    tick, which had clearance theta) and the plan record is flagged; before
    any feasible plan it holds where it is.  ``stop`` may end the
    run early by returning ``"goal"`` or ``"collision"``.
    """
    cfg = cfg or Config()
    veh, gains = cfg.vehicle, cfg.controller
    dt = veh.dt
    n_steps = int(round(duration / dt))
    plan_every = max(1, int(round(1.0 / (ctx.replan_rate * dt))))
    ctrl_every = max(1, int(round(gains.period / dt)))
    ctrl_dt = ctrl_every * dt
    include_vertical = cfg.tube.include_vertical
    w_t, w_a = wind
    w_a = np.asarray(w_a, float)
    if w_a.shape[1] == 2:
        w_a = np.column_stack([w_a, np.zeros(len(w_a))])

    controller = PIDController(gains, veh)
    x = ctx.state.to_array()
    t0 = ctx.state.time
    active, active_start, theta_active = None, t0, 0.0
    safe_anchor = (tuple(x[POS]), float(x[8]))
    x_ctrl_prev, u = None, None
    sigma_now = 0.0

    plans = []
    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, x.size))
    xtrack = np.zeros(n_steps + 1)
    thetas = np.zeros(n_steps + 1)
    sig = np.zeros(n_steps + 1)
    times[0], states[0] = t0, x
    outcome, last = "timeout", n_steps

    for k in range(n_steps):
        t = t0 + k * dt
        if k % ctrl_every == 0 and x_ctrl_prev is not None and estimator is not None:
            world = residual_accel(x, x_ctrl_prev, u, ctrl_dt, veh)
            body = rotation_matrix(x_ctrl_prev[6], x_ctrl_prev[7], x_ctrl_prev[8]).T @ world
            estimator.update(body, t)
        if k % plan_every == 0:
            state = State.from_array(x, t)
            sigma_now = sigma_source(t) if sigma_source is not None else lookup_sigma(estimator)
            res = select_trajectory(replace(ctx, state=state), sigma_now, t, theta_override)
            hold = res.chosen_id is None
            if hold:
                if not isinstance(active, HoldTrajectory):
                    active = HoldTrajectory(*safe_anchor)
                    active_start = t
            else:
                prim = ctx.library[res.chosen_id]
                safe_anchor = (tuple(x[POS]), float(x[8]))
                active = prim.placed((x[0], x[1], x[2], x[8]))
                active_start = t
                theta_active = res.theta
            plans.append(PlanRecord(len(plans), t, float(sigma_now), res.sigma_level, res.chosen_id,
                                    res.theta, res.cost, res.feasible_count, hold, res.clamped))
        if k % ctrl_every == 0:
            u = controller(State.from_array(x, t), active, t - active_start).to_array()
            x_ctrl_prev = x
        x = rk4_step(x, u, w_a[min(k, len(w_a) - 1)], dt, veh)
        times[k + 1] = t + dt
        states[k + 1] = x
        xtrack[k + 1] = _cross_track(active, t + dt - active_start, x[POS], include_vertical)
        thetas[k + 1] = theta_active
        sig[k + 1] = sigma_now
        if stop is not None:
            status = stop(State.from_array(x, t + dt))
            if status:
                outcome, last = status, k + 1
                break
    sl = slice(0, last + 1)
    xtrack[0], thetas[0], sig[0] = 0.0, thetas[min(1, last)], sig[min(1, last)]
    return Trace(plans, times[sl], states[sl], xtrack[sl], thetas[sl], sig[sl], outcome, float(times[last]))
