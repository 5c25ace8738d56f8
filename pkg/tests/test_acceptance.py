"""End-to-end acceptance checks, one test per criterion.

Each test records a ``PASS``/``FAIL criterion N: ...`` line that is printed
in the terminal summary, then asserts.
"""

import math

import numpy as np
import pytest

from adaptive_margins import data_path
from adaptive_margins.cli import main
from adaptive_margins.config import Config
from adaptive_margins.disturbance import DisturbanceEstimate, dryden_wind, gaussian_wind
from adaptive_margins.dynamics import State
from adaptive_margins.harness import bench, library_for, load_experiment, run_campaign, summarize
from adaptive_margins.planner import PlanningContext, replan_loop, select_trajectory
from adaptive_margins.primitives import ReferenceTrajectory
from adaptive_margins.tube import MarginLUT, fit_margin, simulate_rollouts, tube_coverage
from adaptive_margins.world import OccupancyGrid, load_map, loads_map

from conftest import ACCEPTANCE_LINES
from test_planner import brute_force, random_scene


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------- 1


@pytest.mark.slow
def test_criterion_1_gust_study_trends():
    specs, trials = load_experiment(data_path("gust_study.json"))
    assert trials == 10
    rows = run_campaign(specs, trials, seed=0)
    cells = {(c["level"], c["mode"]): c for c in summarize(rows)}
    checks = []
    for level in ("low", "med", "high"):
        checks.append((f"adaptive success at {level}", cells[(level, "adaptive")]["success_pct"] == 100.0))
        checks.append((f"adaptive within-margin at {level} >= 99",
                       cells[(level, "adaptive")]["within_mean"] >= 99.0))
    checks.append(("static_low fails at high", cells[("high", "static_low")]["success_pct"] < 100.0))
    for level in ("med", "high"):
        lo = cells[(level, "static_low")]["distance_mean"]
        ad = cells[(level, "adaptive")]["distance_mean"]
        hi = cells[(level, "static_high")]["distance_mean"]
        checks.append((f"distance ordering at {level} ({lo:.3f} < {ad:.3f} < {hi:.3f})", lo < ad < hi))
    failed = [name for name, ok in checks if not ok]
    summary = ", ".join(
        f"{lv}: {cells[(lv, 'adaptive')]['success_pct']:.0f}/{cells[(lv, 'static_low')]['success_pct']:.0f}"
        f"/{cells[(lv, 'static_high')]['success_pct']:.0f}%" for lv in ("low", "med", "high"))
    record(1, not failed, f"success adaptive/static_low/static_high {summary}"
           + (f"; failed: {failed}" if failed else ""))
    assert not failed


# ---------------------------------------------------------------- 2


def test_criterion_2_tube_fit_oracle():
    rng = np.random.default_rng(2024)
    n_t = 100
    times = np.arange(n_t) * 0.03
    errors = rng.normal(0.0, 0.1, (10_000, n_t))
    theta, _ = fit_margin(times, errors, 3.0, 0.05, 10)
    ok = abs(theta - 0.196) <= 0.005
    record(2, ok, f"theta = {theta:.5f} m on 1e6 samples (target 0.196 +/- 0.005)")
    assert ok


# ---------------------------------------------------------------- 3


@pytest.mark.slow
def test_criterion_3_lut_monotonicity_and_coverage(full_lut, library, cfg):
    m = full_lut.margins
    sigma_drop = float(np.max(m[:, :-1] - m[:, 1:]))
    omega_drop = 0.0
    for v in sorted({p.linear_speed for p in library}):
        ids = sorted((p for p in library if p.linear_speed == v), key=lambda p: abs(p.angular_speed))
        for a, b in zip(ids, ids[1:]):
            if abs(b.angular_speed) > abs(a.angular_speed) + 1e-12:
                omega_drop = max(omega_drop, float(np.max(m[a.id] - m[b.id])))
    # coverage on fresh rollouts (seed differs from the build seed)
    worst, worst_cell = 1.0, None
    for prim in library:
        for g, s in enumerate(full_lut.sigma_grid):
            rs = simulate_rollouts(prim, s, cfg.tube.n_mc, 1, cfg, g)
            c = tube_coverage(rs, prim, full_lut.query(prim.id, s), cfg.tube.include_vertical)
            if c < worst:
                worst, worst_cell = c, (prim.id, s)
    ok = sigma_drop <= 1e-3 and omega_drop <= 1e-2 and worst >= 0.94
    record(3, ok, f"max drop in sigma {sigma_drop:.2e} m, in |omega| {omega_drop:.2e} m, "
                  f"min coverage {100 * worst:.2f}% at cell {worst_cell}")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_selection_matches_brute_force(library, bundled_lut):
    mismatches, infeasible = [], 0
    n = 150
    for seed in range(1000, 1000 + n):
        ctx, sigma = random_scene(seed, library, bundled_lut)
        got = select_trajectory(ctx, sigma).chosen_id
        want = brute_force(ctx, sigma)
        infeasible += want is None
        if got != want:
            mismatches.append((seed, got, want))
    # a few walled-in scenes guarantee the infeasible branch is exercised
    from adaptive_margins.world import Rect
    box = OccupancyGrid.from_obstacles([Rect(-1.0, -1.0, 1.0, -0.3), Rect(-1.0, 0.3, 1.0, 1.0),
                                        Rect(-1.0, -1.0, -0.3, 1.0), Rect(0.3, -1.0, 1.0, 1.0)],
                                       60, 60, 0.05, (-1.5, -1.5))
    for sigma in (0.0, 2.0, 5.0):
        ref = ReferenceTrajectory.straight((0.0, 0.0, 1.0), 0.0, 1.0, 10.0)
        ctx = PlanningContext(ref, State(position=np.array([0.0, 0.0, 1.0])), bundled_lut, library, box)
        got, want = select_trajectory(ctx, sigma).chosen_id, brute_force(ctx, sigma)
        infeasible += want is None
        n += 1
        if got != want:
            mismatches.append(("box", got, want))
    ok = not mismatches and infeasible > 0
    record(4, ok, f"{n} scenes, {infeasible} infeasible, {len(mismatches)} mismatches")
    assert ok, mismatches[:5]


# ---------------------------------------------------------------- 5


def _closed_loop_recovery(kind, level, seed, library, lut):
    grid = OccupancyGrid.empty(800, 400, 0.05, (-5.0, -10.0))
    ref = ReferenceTrajectory.straight((0.0, 0.0, 1.0), 0.0, 1.0, 30.0)
    ctx = PlanningContext(ref, State(position=np.array([0.0, 0.0, 1.0])), lut, library, grid)
    make = gaussian_wind if kind == "gaussian" else dryden_wind
    t, w = make(level, seed=seed, duration=11.0)
    est = DisturbanceEstimate(window=3.0)
    trace = replan_loop(ctx, est, (t, w), 10.0)
    # injected acceleration over the estimator window before the last update
    t_last = est.samples[-1, 0]
    sel = (t >= t_last - 3.0 - 0.05) & (t < t_last - 0.05 + 1e-9)
    truth = np.sqrt(np.mean(w[sel] ** 2, axis=0))
    got = np.array([est.sigma_x, est.sigma_y])
    assert trace.outcome == "timeout"
    return float(np.max(np.abs(got - truth) / truth))


def test_criterion_5_estimator_fidelity(library, bundled_lut):
    rng = np.random.default_rng(55)
    est = DisturbanceEstimate(window=1.5)
    worst_batch = 0.0
    t, hist = 0.0, []
    for _ in range(2000):
        t += float(rng.uniform(0.01, 0.1))
        g = rng.normal(0.0, rng.uniform(0.1, 4.0), 2)
        est.update(g, t)
        hist.append((t, *g))
        kept = np.array([h for h in hist[-200:] if t - h[0] < 1.5])
        for sig, col in ((est.sigma_x, 1), (est.sigma_y, 2)):
            ref = math.sqrt(np.mean(kept[:, col] ** 2))
            worst_batch = max(worst_batch, abs(sig - ref) / ref)
    worst_loop = 0.0
    for kind, level in (("gaussian", 1.0), ("gaussian", 2.5), ("dryden", "med"), ("dryden", "high")):
        for seed in range(3):
            worst_loop = max(worst_loop, _closed_loop_recovery(kind, level, seed, library, bundled_lut))
    ok = worst_batch <= 1e-9 and worst_loop <= 0.2
    record(5, ok, f"max relative error vs batch {worst_batch:.1e}; closed-loop recovery error "
                  f"{100 * worst_loop:.1f}% over 12 runs")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_runtime(library, bundled_lut):
    grid = load_map(data_path("two_gap.map"))
    rep = bench(bundled_lut, library_for(bundled_lut, Config()), grid, repetitions=1000, sigma_hat=1.0)
    q, s = rep["lut_query"]["median_ms"], rep["selection"]["median_ms"]
    ok = q < 0.1 and s < 50.0
    record(6, ok, f"median LUT query {q:.4f} ms, median 22-primitive selection {s:.2f} ms")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_determinism_across_workers(tmp_path):
    cfg = tmp_path / "small.ini"
    cfg.write_text("[library]\nn_angular = 5\n[tube]\nn_mc = 40\nsigma_grid = 0, 1.5, 3.0\n")
    luts = []
    for w in (1, 2):
        out = tmp_path / f"lut{w}.json"
        assert main(["lutgen", "--config", str(cfg), "--out", str(out), "--workers", str(w)]) == 0
        luts.append(out.read_bytes())
    study = tmp_path / "study.json"
    study.write_text(
        '{"map": "%s", "lut": "%s", "config": "%s", "goal_x": 12.0, "t_max": 40.0,'
        ' "wind": {"kind": "dryden", "levels": ["high"]}, "margin_modes": ["adaptive", "static_low"],'
        ' "estimator": "moving", "trials": 2}'
        % (data_path("two_gap.map"), data_path("lut_default.json"), data_path("default.ini")))
    sims = []
    for w in (1, 2):
        out = tmp_path / f"sim{w}"
        assert main(["simulate", "--spec", str(study), "--out", str(out), "--workers", str(w), "--seed", "7"]) == 0
        sims.append(((out / "raw.csv").read_bytes(), (out / "summary.txt").read_bytes()))
    ok = luts[0] == luts[1] and sims[0] == sims[1]
    record(7, ok, f"lutgen identical: {luts[0] == luts[1]}, simulate identical: {sims[0] == sims[1]} "
                  "(workers 1 vs 2)")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_round_trip(tmp_path, bundled_lut):
    results = {}
    bundled_lut.save(tmp_path / "a.json")
    MarginLUT.load(tmp_path / "a.json").save(tmp_path / "b.json")
    results["lut"] = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    grid = load_map(data_path("two_gap.map"))
    for fmt in ("grid", "obstacles"):
        grid.save(tmp_path / f"a.{fmt}", fmt)
        load_map(tmp_path / f"a.{fmt}").save(tmp_path / f"b.{fmt}", fmt)
        results[fmt] = (tmp_path / f"a.{fmt}").read_bytes() == (tmp_path / f"b.{fmt}").read_bytes()
    results["occupancy"] = np.array_equal(loads_map(grid.dumps()).occupancy, grid.occupancy)
    ok = all(results.values())
    record(8, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items()))
    assert ok
