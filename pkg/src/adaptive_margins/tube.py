"""Offline margin engine: Monte Carlo rollouts, tube fitting and the margin LUT.

Each (primitive, sigma level) cell is simulated as one vectorized batch of
rollouts, so a cell's numbers never depend on how cells are spread over
worker processes.  Per-rollout random streams come from
``numpy.random.SeedSequence`` keyed on the rollout index (plus the cell
indices when common random numbers are disabled), which keeps every
rollout independent of execution order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .config import Config
from .dynamics import POS, STATE_DIM, YAW, YAW_RATE, integrate_error, pid_command, rk4_step
from .primitives import MotionPrimitive, PrimitiveLibrary

FORMAT_VERSION = 1


class RolloutError(ValueError):
    pass


class FitError(ValueError):
    pass


class LUTError(ValueError):
    pass


@dataclass
class RolloutSet:
    primitive_id: int
    sigma_g: float
    times: np.ndarray  # (T,)
    states: np.ndarray = field(repr=False)  # (N, T, STATE_DIM)
    rng_seed_base: int = 0

    @property
    def n_mc(self) -> int:
        return self.states.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.states[..., POS]


def two_sided_quantile(epsilon: float) -> float:
    """z with P(|X| <= z) = 1 - epsilon for standard normal X."""
    return float(norm.ppf(1.0 - epsilon / 2.0))


@lru_cache(maxsize=8)
def _standard_draws(seed: int, n_mc: int, n_draws: int, cell: tuple | None):
    """Standard normal draws per rollout: initial state (6) and disturbances (n_draws, 3)."""
    init = np.empty((n_mc, 6))
    dist = np.empty((n_mc, n_draws, 3))
    for r in range(n_mc):
        key = [seed, r] if cell is None else [seed, *cell, r]
        rng = np.random.default_rng(np.random.SeedSequence(key))
        init[r] = rng.standard_normal(6)
        dist[r] = rng.standard_normal((n_draws, 3))
    init.flags.writeable = False
    dist.flags.writeable = False
    return init, dist


def simulate_rollouts(
    primitive: MotionPrimitive,
    sigma_g: float,
    n_mc: int,
    seed: int,
    cfg: Config | None = None,
    g_index: int = 0,
) -> RolloutSet:
    """Closed-loop Monte Carlo tracking of ``primitive`` under Gaussian gusts.

    Every ``disturbance_period`` each rollout redraws a world-frame
    acceleration from N(0, sigma_g^2) per axis and holds it.  The standard
    normal draws are rotated by the reference heading before scaling, which
    leaves the distribution unchanged.  Initial position and velocity are
    perturbed by the configured standard deviations around the on-heading
    start.  States are recorded at every integrator step over [0, t_f].
    """
    cfg = cfg or Config()
    if n_mc < 2:
        raise RolloutError(f"n_mc must be at least 2, got {n_mc}")
    if sigma_g < 0:
        raise RolloutError(f"sigma_g must be nonnegative, got {sigma_g}")
    veh, gains, tp = cfg.vehicle, cfg.controller, cfg.tube
    dt = veh.dt
    n_steps = int(round(primitive.t_f / dt))
    ctrl_every = max(1, int(round(gains.period / dt)))
    dist_every = max(1, int(round(tp.disturbance_period / dt)))
    n_draws = n_steps // dist_every + 1

    cell = None if tp.common_random_numbers else (primitive.id, g_index)
    z_init, z_dist = _standard_draws(seed, n_mc, n_draws, cell)

    p0, v0, _, yaw0, yaw_rate0 = primitive.reference(0.0)
    x = np.zeros((n_mc, STATE_DIM))
    x[:, 0:3] = p0 + tp.init_pos_std * z_init[:, 0:3]
    x[:, 3:6] = v0 + tp.init_vel_std * z_init[:, 3:6]
    x[:, YAW] = yaw0
    x[:, YAW_RATE] = yaw_rate0

    states = np.empty((n_mc, n_steps + 1, STATE_DIM))
    states[:, 0] = x
    integral = np.zeros((n_mc, 3))
    u = None
    d = None
    for i in range(n_steps):
        if i % ctrl_every == 0:
            u, e_pos = pid_command(x, primitive.reference(i * dt), integral, gains, veh)
            integral = integrate_error(integral, e_pos, gains)
        if i % dist_every == 0:
            # draws are taken in the reference heading frame so rollouts pair up across primitives
            psi = float(primitive.headings(min(i * dt, primitive.t_f)))
            zx, zy = z_dist[:, i // dist_every, 0], z_dist[:, i // dist_every, 1]
            c, s = math.cos(psi), math.sin(psi)
            d = sigma_g * np.column_stack([c * zx - s * zy, s * zx + c * zy, z_dist[:, i // dist_every, 2]])
        x = rk4_step(x, u, d, dt, veh)
        states[:, i + 1] = x
    times = np.arange(n_steps + 1) * dt
    return RolloutSet(primitive.id, float(sigma_g), times, states, seed)


def cross_track_errors(
    rollouts: RolloutSet, primitive: MotionPrimitive, include_vertical: bool = True
) -> np.ndarray:
    """Distance to the same-time primitive point, with the along-track part removed."""
    ref = primitive.positions(rollouts.times)  # (T, 3)
    tan = primitive.tangents(rollouts.times)
    err = rollouts.positions - ref
    along = np.sum(err * tan, axis=-1, keepdims=True)
    perp = err - along * tan
    if not include_vertical:
        perp = perp[..., :2]
    return np.linalg.norm(perp, axis=-1)


def fit_margin(times, errors, t_f: float, epsilon: float, n_segments: int):
    """Max over time bins of the zero-mean normal interval.

    ``errors`` has shape (N, T) aligned with ``times``.  Returns
    ``(theta, bin_sigmas)``.
    """
    if not (0 < epsilon < 1):
        raise FitError(f"epsilon must lie in (0, 1), got {epsilon}")
    if n_segments < 1:
        raise FitError("n_segments must be at least 1")
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float).reshape(-1, times.size)
    bins = np.minimum((times / t_f * n_segments).astype(int), n_segments - 1)
    z = two_sided_quantile(epsilon)
    sigmas = np.empty(n_segments)
    sq = errors**2
    for b in range(n_segments):
        cols = bins == b
        if not np.any(cols):
            raise FitError(f"time bin {b} of {n_segments} holds no samples")
        sigmas[b] = math.sqrt(float(np.mean(sq[:, cols])))
    return float(z * sigmas.max()), sigmas


def fit_tube(
    rollouts: RolloutSet,
    primitive: MotionPrimitive,
    epsilon: float = 0.05,
    n_segments: int = 10,
    include_vertical: bool = True,
) -> float:
    """Margin radius theta enclosing the rollouts with confidence 1 - epsilon."""
    errs = cross_track_errors(rollouts, primitive, include_vertical)
    theta, _ = fit_margin(rollouts.times, errs, primitive.t_f, epsilon, n_segments)
    return theta


def tube_coverage(rollouts: RolloutSet, primitive: MotionPrimitive, theta: float, include_vertical=True) -> float:
    """Fraction of recorded rollout states inside the tube of radius theta."""
    errs = cross_track_errors(rollouts, primitive, include_vertical)
    return float(np.mean(errs <= theta))


# --------------------------------------------------------------------------
# lookup table
# --------------------------------------------------------------------------


@dataclass
class MarginLUT:
    sigma_grid: tuple[float, ...]
    primitives: tuple[dict, ...]  # {id, linear_speed, angular_speed, t_f}
    margins: np.ndarray  # (K, G)
    epsilon: float
    n_mc: int
    config_hash: str = ""
    format_version: int = FORMAT_VERSION
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.margins = np.asarray(self.margins, dtype=float)
        grid = self.sigma_grid
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise LUTError("sigma_grid must be nonempty and strictly ascending")
        if self.margins.shape != (len(self.primitives), len(grid)):
            raise LUTError(f"margins shape {self.margins.shape} does not match table axes")
        if not np.all(np.isfinite(self.margins)) or np.any(self.margins < 0):
            raise LUTError("margins must be finite and nonnegative")
        rows = {int(p["id"]): i for i, p in enumerate(self.primitives)}
        cols = {float(s): j for j, s in enumerate(grid)}
        self._index = {"rows": rows, "cols": cols}

    @property
    def primitive_ids(self) -> tuple[int, ...]:
        return tuple(int(p["id"]) for p in self.primitives)

    def query(self, primitive_id: int, sigma_level: float) -> float:
        """Margin for a primitive at an exact grid level."""
        try:
            i = self._index["rows"][primitive_id]
            j = self._index["cols"][sigma_level]
        except KeyError as exc:
            raise LUTError(f"no LUT entry for {exc.args[0]!r}") from None
        return float(self.margins[i, j])

    def column(self, sigma_level: float) -> np.ndarray:
        try:
            return self.margins[:, self._index["cols"][sigma_level]]
        except KeyError:
            raise LUTError(f"{sigma_level!r} is not a grid level") from None

    def dumps(self) -> str:
        prim_lines = ",\n".join("    " + json.dumps(p, sort_keys=False) for p in self.primitives)
        margin_lines = ",\n".join("    " + json.dumps([float(v) for v in row]) for row in self.margins)
        return (
            "{\n"
            f'  "format_version": {json.dumps(self.format_version)},\n'
            f'  "epsilon": {json.dumps(float(self.epsilon))},\n'
            f'  "n_mc": {json.dumps(int(self.n_mc))},\n'
            f'  "config_hash": {json.dumps(self.config_hash)},\n'
            f'  "sigma_grid": {json.dumps([float(s) for s in self.sigma_grid])},\n'
            f'  "primitives": [\n{prim_lines}\n  ],\n'
            f'  "margins": [\n{margin_lines}\n  ]\n'
            "}\n"
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "MarginLUT":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise LUTError(f"unsupported LUT format_version {doc.get('format_version')!r}")
        prims = tuple(
            {"id": int(p["id"]), "linear_speed": float(p["linear_speed"]),
             "angular_speed": float(p["angular_speed"]), "t_f": float(p["t_f"])}
            for p in doc["primitives"]
        )
        return cls(
            sigma_grid=tuple(float(s) for s in doc["sigma_grid"]),
            primitives=prims,
            margins=np.array(doc["margins"], dtype=float).reshape(len(prims), -1),
            epsilon=float(doc["epsilon"]),
            n_mc=int(doc["n_mc"]),
            config_hash=str(doc.get("config_hash", "")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "MarginLUT":
        try:
            return cls.loads(Path(path).read_text())
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise LUTError(f"malformed LUT file {path}: {exc}") from None


def _cell_task(args):
    prim, k, g, sigma_g, eps, n_mc, seed, cfg = args
    try:
        rs = simulate_rollouts(prim, sigma_g, n_mc, seed, cfg, g_index=g)
        theta = fit_tube(rs, prim, eps, cfg.tube.n_segments, cfg.tube.include_vertical)
    except (RolloutError, FitError) as exc:
        raise LUTError(f"cell (k={k}, g={g}): {exc}") from exc
    return k, g, theta


def build_lut(
    library: PrimitiveLibrary,
    sigma_grid: Sequence[float],
    epsilon: float,
    n_mc: int,
    seed: int,
    cfg: Config | None = None,
    workers: int = 1,
) -> MarginLUT:
    """Fill margins[k][g] by rollout + fit for every cell.

    Margins are rounded to the micrometre.  ``workers > 1`` spreads cells over
    processes; the table is identical for any worker count.
    """
    cfg = cfg or Config()
    grid = tuple(float(s) for s in sigma_grid)
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise LUTError("sigma_grid must be nonempty and strictly ascending")
    tasks = [
        (prim, k, g, s, epsilon, n_mc, seed, cfg)
        for k, prim in enumerate(library)
        for g, s in enumerate(grid)
    ]
    margins = np.zeros((len(library), len(grid)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = map(_cell_task, tasks)
    for k, g, theta in results:
        margins[k, g] = round(theta, 6)
    prims = tuple(
        {"id": p.id, "linear_speed": p.linear_speed, "angular_speed": p.angular_speed, "t_f": p.t_f}
        for p in library
    )
    return MarginLUT(grid, prims, margins, float(epsilon), int(n_mc), cfg.hash())
