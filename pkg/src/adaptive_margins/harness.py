"""Simulated gust study, campaigns, runtime benchmarks and plots."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .disturbance import DisturbanceEstimate, DrydenParams, WindField, future_window_sigma
from .dynamics import State
from .planner import PlanningContext, Trace, replan_loop, select_trajectory
from .primitives import PrimitiveLibrary, ReferenceTrajectory, generate_library
from .tube import MarginLUT
from .world import OccupancyGrid, load_map

MARGIN_MODES = ("adaptive", "static_low", "static_high", "handtuned")
ESTIMATOR_MODES = ("moving", "oracle")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    """One cell of a study: a margin mode under one wind level."""

    map_path: str
    lut_path: str
    config_path: str | None = None
    start: tuple = (0.0, 0.0, 1.0)
    heading: float = 0.0
    speed: float = 1.0
    ref_duration: float = 60.0
    goal_x: float = 12.0
    t_max: float = 40.0
    wind_kind: str = "dryden"
    wind_level: object = "low"
    margin_mode: str = "adaptive"
    theta: float | None = None  # handtuned margin [m]
    estimator: str = "moving"
    oracle_horizon: float = 9.0

    def __post_init__(self):
        if self.margin_mode not in MARGIN_MODES:
            raise SpecError(f"unknown margin mode {self.margin_mode!r}")
        if self.margin_mode == "handtuned" and self.theta is None:
            raise SpecError("handtuned mode needs theta")
        if self.estimator not in ESTIMATOR_MODES:
            raise SpecError(f"unknown estimator mode {self.estimator!r}")

    @property
    def label(self) -> str:
        if self.margin_mode == "handtuned":
            return f"handtuned:{self.theta!r}"
        return self.margin_mode


@dataclass
class TrialMetrics:
    success: bool
    avg_distance_to_reference: float
    within_margin_pct: float
    completion_time: float
    outcome: str
    hold_ticks: int = 0


def _parse_mode(mode: str):
    if mode.startswith("handtuned:"):
        return "handtuned", float(mode.split(":", 1)[1])
    return mode, None


def load_experiment(path) -> tuple[list[ExperimentSpec], int]:
    """Read a study JSON; returns the expanded cells and the trial count.

    Keys: ``map``, ``lut``, ``config`` (optional), ``reference`` {start,
    heading, speed, duration}, ``goal_x``, ``t_max``, ``wind`` {kind, levels},
    ``margin_modes`` (``"handtuned:<theta>"`` for fixed margins),
    ``estimator``, ``trials``.  Paths are relative to the study file.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot load experiment {path}: {exc}") from None
    base = path.parent

    def rel(p):
        return None if p is None else str((base / p).resolve())

    ref = doc.get("reference", {})
    wind = doc.get("wind", {})
    specs = []
    try:
        for mode in doc.get("margin_modes", ["adaptive"]):
            m, theta = _parse_mode(mode)
            for level in wind.get("levels", ["low"]):
                specs.append(ExperimentSpec(
                    map_path=rel(doc["map"]),
                    lut_path=rel(doc["lut"]),
                    config_path=rel(doc.get("config")),
                    start=tuple(ref.get("start", (0.0, 0.0, 1.0))),
                    heading=float(ref.get("heading", 0.0)),
                    speed=float(ref.get("speed", 1.0)),
                    ref_duration=float(ref.get("duration", 60.0)),
                    goal_x=float(doc.get("goal_x", 12.0)),
                    t_max=float(doc.get("t_max", 40.0)),
                    wind_kind=wind.get("kind", "dryden"),
                    wind_level=level,
                    margin_mode=m,
                    theta=theta,
                    estimator=doc.get("estimator", "moving"),
                    oracle_horizon=float(doc.get("oracle_horizon", 9.0)),
                ))
    except KeyError as exc:
        raise SpecError(f"{path}: missing key {exc}") from None
    trials = int(doc.get("trials", 10))
    if trials < 1:
        raise SpecError("trials must be at least 1")
    return specs, trials


@dataclass
class Scenario:
    """Loaded inputs shared by all trials of a study."""

    cfg: Config
    lut: MarginLUT
    library: PrimitiveLibrary
    grid: OccupancyGrid

    @classmethod
    def load(cls, spec: ExperimentSpec) -> "Scenario":
        cfg = load_config(spec.config_path)
        lut = MarginLUT.load(spec.lut_path)
        grid = load_map(spec.map_path)
        return cls(cfg, lut, library_for(lut, cfg), grid)


def library_for(lut: MarginLUT, cfg: Config) -> PrimitiveLibrary:
    """Rebuild the primitive library described by a LUT."""
    speeds = sorted({p["linear_speed"] for p in lut.primitives})
    omegas = []
    for p in lut.primitives:
        if p["angular_speed"] not in omegas:
            omegas.append(p["angular_speed"])
    t_f = lut.primitives[0]["t_f"]
    lib = generate_library(speeds, omegas, t_f, cfg.library.sample_period)
    return lib


def polyline_distance(points, path) -> np.ndarray:
    """Distance from each 2-D point to a polyline."""
    p = np.asarray(points, float)[:, None, :]
    a, b = path[:-1][None], path[1:][None]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, -1), 1e-300)
    s = np.clip(np.sum((p - a) * ab, -1) / denom, 0.0, 1.0)
    proj = a + s[..., None] * ab
    return np.min(np.linalg.norm(p - proj, axis=-1), axis=1)


def run_trial(spec: ExperimentSpec, seed: int, scenario: Scenario | None = None, keep_trace: bool = False):
    """One closed-loop flight; returns TrialMetrics (and the trace if asked)."""
    sc = scenario or Scenario.load(spec)
    cfg, grid = sc.cfg, sc.grid
    ref = ReferenceTrajectory.straight(spec.start, spec.heading, spec.speed, spec.ref_duration)
    start = State(position=np.array(spec.start, float), yaw=spec.heading)
    ctx = PlanningContext(ref, start, sc.lut, sc.library, grid, cfg.planner.replan_rate, cfg.planner.strict_grid)

    wind = WindField(spec.wind_kind, spec.wind_level, seed, cfg.vehicle.dt, dryden=DrydenParams())
    # extra oracle horizon so the look-ahead window is full until t_max
    w_t, w_a = wind.series(spec.t_max + spec.oracle_horizon + 1.0)

    grid_levels = sc.lut.sigma_grid
    estimator, sigma_source, theta = None, None, None
    if spec.margin_mode == "static_low":
        sigma_source = lambda t: grid_levels[0]  # noqa: E731
    elif spec.margin_mode == "static_high":
        sigma_source = lambda t: grid_levels[-1]  # noqa: E731
    elif spec.margin_mode == "handtuned":
        sigma_source, theta = (lambda t: grid_levels[0]), spec.theta
    elif spec.estimator == "oracle":
        oracle = future_window_sigma(w_t, w_a, spec.oracle_horizon)
        dt = cfg.vehicle.dt
        sigma_source = lambda t: float(oracle[min(int(round(t / dt)), len(oracle) - 1)])  # noqa: E731
    else:
        estimator = DisturbanceEstimate.from_params(cfg.estimator)

    def stop(s: State):
        if s.position[0] >= spec.goal_x:
            return "goal"
        if grid.is_occupied_point(s.position[0], s.position[1]):
            return "collision"
        return None

    trace = replan_loop(ctx, estimator, (w_t, w_a), spec.t_max, cfg, sigma_source, theta, stop)
    metrics = trial_metrics(trace, ref)
    return (metrics, trace) if keep_trace else metrics


def trial_metrics(trace: Trace, ref: ReferenceTrajectory) -> TrialMetrics:
    pos = trace.states[:, :2]
    path = ref.poses[:, :2]
    dist = polyline_distance(pos, path)
    inside = trace.cross_track[1:] <= trace.theta[1:]
    within = 100.0 * float(np.mean(inside)) if inside.size else 100.0
    return TrialMetrics(
        success=trace.outcome == "goal",
        avg_distance_to_reference=float(np.mean(dist)),
        within_margin_pct=within,
        completion_time=trace.end_time,
        outcome=trace.outcome,
        hold_ticks=sum(1 for p in trace.plans if p.hold),
    )


# --------------------------------------------------------------------------
# campaign
# --------------------------------------------------------------------------

RAW_COLUMNS = ["mode", "level", "trial", "seed", "success", "outcome", "avg_distance_to_reference",
               "within_margin_pct", "completion_time", "hold_ticks"]


def _trial_job(args):
    spec, trial, seed, scenario = args
    try:
        m = run_trial(spec, seed, scenario)
    except Exception as exc:
        raise RuntimeError(f"trial {trial} ({spec.label}, {spec.wind_level}): {exc}") from exc
    return spec.label, str(spec.wind_level), trial, seed, m


def run_campaign(specs, n_trials: int, seed: int = 0, workers: int = 1) -> list[dict]:
    """All cells x trials; trial i of every cell shares wind seed ``seed + i``.

    Rows come back sorted by (cell order, trial) whatever the worker count.
    """
    if n_trials < 1:
        raise SpecError("n_trials must be at least 1")
    scenarios = {}
    jobs = []
    for spec in specs:
        key = (spec.map_path, spec.lut_path, spec.config_path)
        if key not in scenarios:
            scenarios[key] = Scenario.load(spec)
        for i in range(n_trials):
            jobs.append((spec, i, seed + i, scenarios[key]))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    rows = []
    for label, level, trial, s, m in results:
        rows.append({
            "mode": label, "level": level, "trial": trial, "seed": s, "success": int(m.success),
            "outcome": m.outcome, "avg_distance_to_reference": m.avg_distance_to_reference,
            "within_margin_pct": m.within_margin_pct, "completion_time": m.completion_time,
            "hold_ticks": m.hold_ticks,
        })
    return rows


def raw_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in RAW_COLUMNS])
    return buf.getvalue()


def read_raw_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        rows = []
        for r in rd:
            rows.append({
                "mode": r["mode"], "level": r["level"], "trial": int(r["trial"]), "seed": int(r["seed"]),
                "success": int(r["success"]), "outcome": r["outcome"],
                "avg_distance_to_reference": float(r["avg_distance_to_reference"]),
                "within_margin_pct": float(r["within_margin_pct"]),
                "completion_time": float(r["completion_time"]), "hold_ticks": int(r["hold_ticks"]),
            })
    return rows


def _sd(vals):
    return statistics.stdev(vals) if len(vals) > 1 else 0.0


def summarize(rows) -> list[dict]:
    """Mean and sample sd per (mode, level), in first-seen order."""
    cells = {}
    for r in rows:
        cells.setdefault((r["level"], r["mode"]), []).append(r)
    out = []
    for (level, mode), rs in cells.items():
        dist = [r["avg_distance_to_reference"] for r in rs]
        within = [r["within_margin_pct"] for r in rs]
        out.append({
            "level": level, "mode": mode, "n": len(rs),
            "success_pct": 100.0 * sum(r["success"] for r in rs) / len(rs),
            "distance_mean": statistics.fmean(dist), "distance_sd": _sd(dist),
            "within_mean": statistics.fmean(within), "within_sd": _sd(within),
        })
    order = {lv: i for i, lv in enumerate(dict.fromkeys(r["level"] for r in rows))}
    out.sort(key=lambda c: order[c["level"]])
    return out


def summary_table(summary) -> str:
    head = f"{'Turb. level':<12}{'Margin type':<20}{'Success (%)':>12}{'Avg. dist. to ref (m)':>24}{'Within margin (%)':>22}"
    lines = [head, "-" * len(head)]
    last = None
    for c in summary:
        level = c["level"] if c["level"] != last else ""
        last = c["level"]
        lines.append(
            f"{level:<12}{c['mode']:<20}{c['success_pct']:>12.0f}"
            f"{c['distance_mean']:>15.2f} +/- {c['distance_sd']:<4.2f}"
            f"{c['within_mean']:>13.2f} +/- {c['within_sd']:.2f}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------


def bench(lut: MarginLUT, library: PrimitiveLibrary, grid: OccupancyGrid, state: State | None = None,
          reference: ReferenceTrajectory | None = None, repetitions: int = 1000, sigma_hat: float = 1.0):
    """Median and p95 wall time [ms] for a LUT query and a full selection."""
    levels = lut.sigma_grid
    ids = lut.primitive_ids
    q = []
    for i in range(repetitions):
        k, lv = ids[i % len(ids)], levels[i % len(levels)]
        t0 = time.perf_counter()
        lut.query(k, lv)
        q.append(time.perf_counter() - t0)
    state = state or State(position=np.array([0.0, 0.0, 1.0]))
    reference = reference or ReferenceTrajectory.straight(tuple(state.position), 0.0, 1.0, 30.0)
    ctx = PlanningContext(reference, state, lut, library, grid)
    sel = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        select_trajectory(ctx, sigma_hat)
        sel.append(time.perf_counter() - t0)

    def stats(v):
        a = np.array(v) * 1e3
        return {"median_ms": float(np.median(a)), "p95_ms": float(np.percentile(a, 95))}

    return {"lut_query": stats(q), "selection": stats(sel), "repetitions": repetitions, "primitives": len(library)}


# --------------------------------------------------------------------------
# plots
# --------------------------------------------------------------------------


def plot_trial(trace: Trace, grid: OccupancyGrid, path_prefix) -> list[str]:
    """SVG margin-vs-time and trajectory-with-tube plots; returns file names."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "adaptive-margins"
    out = []
    fig, ax = plt.subplots(figsize=(6, 2.5))
    ax.plot(trace.times, trace.theta, label="margin")
    ax.plot(trace.times, trace.cross_track, lw=0.6, label="cross-track")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("[m]")
    ax.legend(loc="upper right")
    name = f"{path_prefix}_margin.svg"
    fig.savefig(name, metadata={"Date": None})
    plt.close(fig)
    out.append(name)

    fig, ax = plt.subplots(figsize=(7, 4))
    ext = [grid.origin[0], grid.origin[0] + grid.width * grid.resolution,
           grid.origin[1], grid.origin[1] + grid.height * grid.resolution]
    ax.imshow(grid.occupancy, origin="lower", extent=ext, cmap="Greys", interpolation="nearest")
    xy = trace.states[:, :2]
    for k in range(0, len(xy), 20):
        ax.add_patch(plt.Circle(xy[k], trace.theta[k], color="tab:blue", alpha=0.08, lw=0))
    ax.plot(xy[:, 0], xy[:, 1], "k", lw=0.8)
    ax.set_aspect("equal")
    name = f"{path_prefix}_path.svg"
    fig.savefig(name, metadata={"Date": None})
    plt.close(fig)
    out.append(name)
    return out
