"""Constant linear/angular velocity motion primitives and the similarity cost."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import LibraryParams


class PrimitiveError(ValueError):
    pass


Pose = tuple  # (x, y, z, psi)


@dataclass(frozen=True)
class MotionPrimitive:
    """Planar arc (or line) flown at constant speed and turn rate.

    Library members start at the origin with heading 0; :meth:`placed`
    returns a copy anchored at a world pose.
    """

    id: int
    linear_speed: float
    angular_speed: float
    t_f: float
    sample_period: float = 0.1
    start: Pose = (0.0, 0.0, 0.0, 0.0)

    def placed(self, pose) -> "MotionPrimitive":
        x, y, z, psi = (float(v) for v in pose)
        return replace(self, start=(x, y, z, psi))

    @property
    def sample_times(self) -> np.ndarray:
        n = int(math.floor(self.t_f / self.sample_period + 1e-9))
        t = np.arange(n + 1) * self.sample_period
        if t[-1] < self.t_f - 1e-12:
            t = np.append(t, self.t_f)
        else:
            t[-1] = self.t_f
        return t

    @property
    def samples(self) -> np.ndarray:
        """Rows of (x, y, z, psi, t) at the sample period."""
        t = self.sample_times
        return np.column_stack([self.positions(t), self.headings(t), t])

    def _local_xy(self, t):
        # sinc form: same arc as (v/w) sin(wt), (v/w)(1 - cos wt) but finite for tiny w
        v, wt = self.linear_speed, self.angular_speed * t
        vt = v * t
        return vt * np.sinc(wt / math.pi), vt * np.sin(wt / 2) * np.sinc(wt / (2 * math.pi))

    def positions(self, t) -> np.ndarray:
        """World positions at times in [0, t_f] (not clamped), shape (..., 3)."""
        t = np.asarray(t, dtype=float)
        x0, y0, z0, psi0 = self.start
        xl, yl = self._local_xy(t)
        c, s = math.cos(psi0), math.sin(psi0)
        return np.stack([x0 + c * xl - s * yl, y0 + s * xl + c * yl, np.full_like(t, z0)], -1)

    def headings(self, t) -> np.ndarray:
        return self.start[3] + self.angular_speed * np.asarray(t, dtype=float)

    def tangents(self, t) -> np.ndarray:
        psi = self.headings(t)
        return np.stack([np.cos(psi), np.sin(psi), np.zeros_like(psi)], -1)

    @property
    def end_pose(self) -> Pose:
        p = self.positions(self.t_f)
        return (float(p[0]), float(p[1]), float(p[2]), float(self.headings(self.t_f)))

    def reference(self, t: float):
        """(pos, vel, acc, yaw, yaw_rate) for the tracking controller.

        Past ``t_f`` the final position is held with zero velocity.
        """
        if t >= self.t_f:
            tc = self.t_f
            p = self.positions(tc)
            return p, np.zeros(3), np.zeros(3), float(self.headings(tc)), 0.0
        tc = max(t, 0.0)
        v, w = self.linear_speed, self.angular_speed
        psi = float(self.headings(tc))
        c, s = math.cos(psi), math.sin(psi)
        vel = np.array([v * c, v * s, 0.0])
        acc = np.array([-v * w * s, v * w * c, 0.0])
        return self.positions(tc), vel, acc, psi, w


@dataclass(frozen=True)
class PrimitiveLibrary:
    primitives: tuple[MotionPrimitive, ...]
    speeds: tuple[float, ...] = ()
    angular_speeds: tuple[float, ...] = ()
    t_f: float = 3.0
    sample_period: float = 0.1

    def __len__(self):
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)

    def __getitem__(self, k) -> MotionPrimitive:
        return self.primitives[k]

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.primitives)


def generate_library(
    speeds: Sequence[float],
    angular_speeds: Sequence[float],
    t_f: float,
    sample_period: float = 0.1,
) -> PrimitiveLibrary:
    """One primitive per (speed, angular speed) pair, ids ordered speed-major."""
    speeds, angular_speeds = list(speeds), list(angular_speeds)
    if not speeds or not angular_speeds:
        raise PrimitiveError("speeds and angular_speeds must be nonempty")
    if t_f <= 0 or sample_period <= 0:
        raise PrimitiveError("t_f and sample_period must be positive")
    prims = []
    for v in speeds:
        for w in angular_speeds:
            prims.append(MotionPrimitive(len(prims), float(v), float(w), float(t_f), float(sample_period)))
    return PrimitiveLibrary(tuple(prims), tuple(speeds), tuple(angular_speeds), float(t_f), float(sample_period))


def library_from_params(params: LibraryParams) -> PrimitiveLibrary:
    return generate_library(params.speeds, params.angular_speeds, params.t_f, params.sample_period)


def export_csv(library: PrimitiveLibrary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", "x", "y", "z", "psi"])
        for prim in library:
            for x, y, z, psi, t in prim.samples:
                w.writerow([prim.id, repr(t), repr(x), repr(y), repr(z), repr(psi)])


# --------------------------------------------------------------------------
# reference trajectories and cost
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Timestamped poses (t, x, y, z, psi), linearly interpolated in time."""

    t: np.ndarray
    poses: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.t) < 1 or np.any(np.diff(self.t) <= 0):
            raise PrimitiveError("reference times must be strictly increasing")

    @classmethod
    def straight(cls, start, heading: float, speed: float, duration: float, period: float = 0.1):
        t = np.arange(int(round(duration / period)) + 1) * period
        x0, y0, z0 = start
        poses = np.column_stack(
            [x0 + speed * t * math.cos(heading), y0 + speed * t * math.sin(heading),
             np.full_like(t, z0), np.full_like(t, heading)]
        )
        return cls(t, poses)

    def positions(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        # np.interp holds the end values outside the span
        return np.stack([np.interp(times, self.t, self.poses[:, i]) for i in range(3)], -1)

    def closest_time(self, t: float) -> float:
        return float(self.t[int(np.argmin(np.abs(self.t - t)))])

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])


def save_reference(ref: ReferenceTrajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "z", "psi"])
        for t, pose in zip(ref.t, ref.poses):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in pose])


def load_reference(path: str | Path) -> ReferenceTrajectory:
    """Read a ``t,x,y,z,psi`` CSV written by :func:`save_reference`."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise PrimitiveError(f"cannot read reference {path}: {exc}") from None
    if data.shape[1] != 5:
        raise PrimitiveError(f"{path}: expected columns t,x,y,z,psi")
    return ReferenceTrajectory(data[:, 0], data[:, 1:])


def j_sim(traj: MotionPrimitive, ref, pose=None, ref_start_time: float = 0.0) -> float:
    """Time-averaged L1 position distance between a primitive and a reference.

    ``traj`` is placed at ``pose`` when given.  ``ref`` is either a
    :class:`ReferenceTrajectory`, sampled at ``ref_start_time + s`` for the
    primitive's sample offsets ``s``, or another primitive compared on the
    same offsets.  Heading does not enter the cost.  The integral is the
    trapezoid rule over the primitive's samples.
    """
    if pose is not None:
        traj = traj.placed(pose)
    s = traj.sample_times
    p = traj.positions(s)
    if isinstance(ref, MotionPrimitive):
        if ref.t_f + 1e-12 < s[-1]:
            raise PrimitiveError("reference primitive shorter than trajectory")
        q = ref.positions(s)
    else:
        lo, hi = ref.span
        if ref_start_time > hi or ref_start_time + s[-1] < lo:
            raise PrimitiveError("reference and primitive horizons do not overlap")
        q = ref.positions(ref_start_time + s)
    gap = np.abs(p - q).sum(axis=-1)
    if s[-1] <= 0:
        return float(gap[0])
    return float(np.trapezoid(gap, s) / s[-1])
