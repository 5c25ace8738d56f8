"""Command line entry point: lutgen, simulate, plan, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .dynamics import State
from .harness import (
    Scenario,
    bench,
    library_for,
    load_experiment,
    plot_trial,
    raw_csv,
    run_campaign,
    run_trial,
    summarize,
    summary_table,
)
from .planner import PlanningContext, select_trajectory
from .primitives import library_from_params, load_reference
from .tube import MarginLUT, build_lut
from .world import load_map


def _lutgen(args) -> int:
    cfg = load_config(args.config)
    lib = library_from_params(cfg.library)
    seed = cfg.tube.seed if args.seed is None else args.seed
    lut = build_lut(lib, cfg.tube.sigma_grid, cfg.tube.epsilon, cfg.tube.n_mc, seed, cfg, args.workers)
    lut.save(args.out)
    print(f"wrote {args.out}: {len(lib)} primitives x {len(lut.sigma_grid)} levels, config {lut.config_hash}")
    return 0


def _simulate(args) -> int:
    specs, trials = load_experiment(args.spec)
    n = args.trials if args.trials is not None else trials
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_campaign(specs, n, args.seed, args.workers)
    (out / "raw.csv").write_text(raw_csv(rows))
    table = summary_table(summarize(rows))
    (out / "summary.txt").write_text(table)
    print(table, end="")
    if args.plots:
        for spec in specs:
            _, trace = run_trial(spec, args.seed, keep_trace=True)
            stem = f"{spec.label.replace(':', '_')}_{spec.wind_level}"
            plot_trial(trace, load_map(spec.map_path), out / stem)
    return 0


def _plan(args) -> int:
    cfg = load_config(args.config)
    lut = MarginLUT.load(args.lut)
    grid = load_map(args.map)
    ref = load_reference(args.ref)
    pose = ref.poses[0] if args.pose is None else np.asarray(args.pose, float)
    state = State(position=np.asarray(pose[:3], float), yaw=float(pose[3]), time=float(ref.t[0]))
    ctx = PlanningContext(ref, state, lut, library_for(lut, cfg), grid, cfg.planner.replan_rate, cfg.planner.strict_grid)
    res = select_trajectory(ctx, args.sigma)
    report = {
        "chosen_id": res.chosen_id,
        "cost": None if res.chosen_id is None else res.cost,
        "theta": None if res.chosen_id is None else res.theta,
        "sigma_hat": res.sigma_hat,
        "sigma_level": res.sigma_level,
        "clamped": res.clamped,
        "feasible_count": res.feasible_count,
        "primitives": [
            {"id": k, "free": bool(f), "theta": float(th), "cost": None if np.isnan(c) else float(c)}
            for k, (f, th, c) in enumerate(zip(res.free, res.thetas, res.costs))
        ],
    }
    print(json.dumps(report, indent=1))
    return 0


def _bench(args) -> int:
    cfg = load_config(args.config)
    lut = MarginLUT.load(args.lut)
    grid = load_map(args.map)
    report = bench(lut, library_for(lut, cfg), grid, repetitions=args.reps, sigma_hat=args.sigma)
    print(json.dumps(report, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptive-margins", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lutgen", help="build the margin lookup table")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.set_defaults(func=_lutgen)

    s = sub.add_parser("simulate", help="run a gust campaign")
    s.add_argument("--spec", required=True)
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--plots", action="store_true", help="SVG plots of the first trial per cell")
    s.set_defaults(func=_simulate)

    s = sub.add_parser("plan", help="one trajectory selection")
    s.add_argument("--map", required=True)
    s.add_argument("--lut", required=True)
    s.add_argument("--ref", required=True, help="CSV with columns t,x,y,z,psi")
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--pose", type=float, nargs=4, metavar=("X", "Y", "Z", "PSI"))
    s.add_argument("--config", default=None)
    s.set_defaults(func=_plan)

    s = sub.add_parser("bench", help="time LUT queries and selection")
    s.add_argument("--lut", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--config", default=None)
    s.set_defaults(func=_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # every failure maps to a nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
