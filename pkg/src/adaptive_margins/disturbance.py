"""Disturbance residuals, the moving-variance estimator and wind generators."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov
from scipy.signal import lfilter, ss2tf

from .config import EstimatorParams, VehicleParams
from .dynamics import (
    VEL,
    DisturbanceSample,
    ParameterError,
    State,
    Control,
    nominal_derivative,
    rk4_step,
    rotation_matrix,
)


# --------------------------------------------------------------------------
# residuals
# --------------------------------------------------------------------------


def residual_accel(x_t, x_prev, u_prev, dt: float, vehicle: VehicleParams, method: str = "predict"):
    """World-frame acceleration residual between two state samples.

    ``method="predict"`` compares against the nominal model integrated from
    ``x_prev`` under ``u_prev`` over ``dt`` with the vehicle's own step size,
    so it is exact for disturbances held over the interval.  ``"euler"``
    uses the one-point form (v_t - v_prev)/dt - f(x_prev, u_prev).
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    x_t, x_prev, u_prev = (np.asarray(a, dtype=float) for a in (x_t, x_prev, u_prev))
    if method == "euler":
        acc = nominal_derivative(x_prev, u_prev, vehicle)[..., VEL]
        return (x_t[..., VEL] - x_prev[..., VEL]) / dt - acc
    if method != "predict":
        raise ValueError(f"unknown residual method {method!r}")
    n = max(1, int(round(dt / vehicle.dt)))
    h = dt / n
    x = x_prev
    zero = np.zeros(x_prev.shape[:-1] + (3,))
    for _ in range(n):
        x = rk4_step(x, u_prev, zero, h, vehicle)
    return (x_t[..., VEL] - x[..., VEL]) / dt


def residual(
    x_t: State,
    x_prev: State,
    u_prev: Control,
    dt: float,
    vehicle: VehicleParams | None = None,
    method: str = "predict",
) -> DisturbanceSample:
    """Body-frame disturbance estimate, rotated by the attitude of ``x_prev``."""
    vehicle = vehicle or VehicleParams()
    world = residual_accel(x_t.to_array(), x_prev.to_array(), u_prev.to_array(), dt, vehicle, method)
    R = rotation_matrix(x_prev.roll, x_prev.pitch, x_prev.yaw)
    return DisturbanceSample(R.T @ world, frame="body")


# --------------------------------------------------------------------------
# moving variance
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateSnapshot:
    sigma_x: float
    sigma_y: float
    n_samples: int
    time: float


class DisturbanceEstimate:
    """Zero-mean moving variance of body-frame (g_x, g_y) residuals.

    Samples older than ``window`` seconds relative to the newest are evicted.
    Until ``min_samples`` arrive, both sigmas report ``hot_start``.
    """

    def __init__(self, window: float = 3.0, hot_start: float | None = None, min_samples: int = 1):
        if window <= 0:
            raise ParameterError("window must be positive")
        self.window = float(window)
        self.hot_start = hot_start
        self.min_samples = max(1, int(min_samples))
        self._buf: deque = deque()
        self.sigma_x = 0.0 if hot_start is None else float(hot_start)
        self.sigma_y = self.sigma_x
        self.last_time = -math.inf

    @classmethod
    def from_params(cls, params: EstimatorParams) -> "DisturbanceEstimate":
        return cls(params.window, params.hot_start, params.min_samples)

    def __len__(self):
        return len(self._buf)

    @property
    def samples(self) -> np.ndarray:
        """Retained window as rows of (t, g_x, g_y)."""
        return np.array(self._buf, dtype=float).reshape(-1, 3)

    def update(self, sample, t: float) -> "DisturbanceEstimate":
        if t <= self.last_time:
            raise ValueError(f"sample time {t} not newer than {self.last_time}")
        acc = sample.acceleration if isinstance(sample, DisturbanceSample) else sample
        self._buf.append((float(t), float(acc[0]), float(acc[1])))
        self.last_time = float(t)
        while self._buf and t - self._buf[0][0] >= self.window:
            self._buf.popleft()
        if len(self._buf) < self.min_samples and self.hot_start is not None:
            self.sigma_x = self.sigma_y = float(self.hot_start)
        else:
            w = self.samples
            self.sigma_x = math.sqrt(float(np.mean(w[:, 1] ** 2)))
            self.sigma_y = math.sqrt(float(np.mean(w[:, 2] ** 2)))
        return self

    def snapshot(self) -> EstimateSnapshot:
        return EstimateSnapshot(self.sigma_x, self.sigma_y, len(self._buf), self.last_time)


def update_estimate(est: DisturbanceEstimate, sample, t: float) -> DisturbanceEstimate:
    return est.update(sample, t)


def lookup_sigma(est) -> float:
    """Larger of the two axis sigmas, used as the LUT query."""
    return max(est.sigma_x, est.sigma_y)


def future_window_sigma(times, accel, horizon: float = 9.0) -> np.ndarray:
    """Oracle lookup: zero-centred std of the next ``horizon`` seconds, max over axes.

    ``accel`` has shape (T, n_axes).  Windows that run past the end of the
    series use whatever remains.
    """
    times = np.asarray(times, dtype=float)
    sq = np.asarray(accel, dtype=float) ** 2
    csum = np.vstack([np.zeros(sq.shape[1]), np.cumsum(sq, axis=0)])
    end = np.searchsorted(times, times + horizon, side="left")
    idx = np.arange(times.size)
    end = np.maximum(end, idx + 1)
    ms = (csum[end] - csum[idx]) / (end - idx)[:, None]
    return np.sqrt(ms.max(axis=1))


# --------------------------------------------------------------------------
# wind generators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DrydenParams:
    """Shaping-filter constants; outputs are read directly as accelerations.

    ``intensities`` maps level names to the stationary standard deviation
    [m/s^2] of each horizontal axis.  Length scales over airspeed set the
    gust correlation time.
    """

    airspeed: float = 10.0  # [m/s]
    length_u: float = 0.5  # [m]
    length_v: float = 1.0  # [m]
    intensities: tuple = (("none", 0.0), ("low", 0.5), ("med", 2.0), ("high", 3.5))

    def intensity(self, level: str) -> float:
        table = dict(self.intensities)
        if level not in table:
            raise ParameterError(f"unknown turbulence level {level!r}; expected one of {sorted(table)}")
        return float(table[level])


def _dryden_state_space(axis: str, sigma: float, V: float, L: float):
    a = V / L
    if axis == "u":
        # sigma sqrt(2V/(pi L)) / (s + a)
        A = np.array([[-a]])
        B = np.array([[1.0]])
        C = np.array([[sigma * math.sqrt(2 * V / (math.pi * L))]])
    else:
        # sigma sqrt(3V/(pi L)) (s + a/sqrt3) / (s + a)^2, controllable canonical form
        K = sigma * math.sqrt(3 * V / (math.pi * L))
        A = np.array([[0.0, 1.0], [-a * a, -2 * a]])
        B = np.array([[0.0], [1.0]])
        C = np.array([[K * a / math.sqrt(3), K]])
    return A, B, C


def _shape_noise(A, B, C, n: int, h: float, rng: np.random.Generator) -> np.ndarray:
    """Exact sampled output of a linear filter driven by white noise of intensity pi.

    With that intensity the Dryden forms above have stationary variance
    sigma^2.  The filter state starts in its stationary distribution.
    """
    m = A.shape[0]
    W = math.pi
    # Van Loan for the discrete process noise
    M = np.zeros((2 * m, 2 * m))
    M[:m, :m] = -A
    M[:m, m:] = B @ B.T * W
    M[m:, m:] = A.T
    E = expm(M * h)
    Phi = E[m:, m:].T
    Qd = Phi @ E[:m, m:]
    Qd = 0.5 * (Qd + Qd.T)
    P = solve_continuous_lyapunov(A, -B @ B.T * W)
    Lq = np.linalg.cholesky(Qd) if m == 1 else _psd_factor(Qd)
    Lp = _psd_factor(P)
    x0 = Lp @ rng.standard_normal(m)
    noise = rng.standard_normal((n, m))
    # y_k = C Phi^k x0 + sum_j C Phi^(k-1-j) Lq n_j, one SISO filter per noise channel
    out = np.zeros(n)
    for i in range(m):
        num, den = ss2tf(Phi, Lq[:, i:i + 1], C, np.zeros((1, 1)))
        out += lfilter(num[0], den, noise[:, i])
    x = x0
    for k in range(n):
        out[k] += (C @ x)[0]
        x = Phi @ x
        if not np.any(np.abs(x) > 1e-300):
            break
    return out


def _psd_factor(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _n_samples(duration: float, sample_period: float) -> int:
    if not duration > 0:
        raise ParameterError("duration must be positive")
    if not sample_period > 0:
        raise ParameterError("sample_period must be positive")
    return int(round(duration / sample_period)) + 1


def dryden_wind(
    level,
    seed: int,
    duration: float,
    sample_period: float = 0.01,
    params: DrydenParams | None = None,
):
    """Horizontal Dryden gust accelerations.

    ``level`` is a level name from ``params.intensities`` or a number giving
    the intensity directly.  Returns ``(times, accel)`` with ``accel`` of
    shape (n, 2) for the world x and y axes, using the longitudinal (first
    order) filter on x and the lateral (second order) filter on y.
    """
    params = params or DrydenParams()
    sigma = float(level) if isinstance(level, (int, float)) else params.intensity(level)
    n = _n_samples(duration, sample_period)
    times = np.arange(n) * sample_period
    if sigma == 0.0:
        return times, np.zeros((n, 2))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD7]))
    ax = _shape_noise(*_dryden_state_space("u", sigma, params.airspeed, params.length_u), n, sample_period, rng)
    ay = _shape_noise(*_dryden_state_space("v", sigma, params.airspeed, params.length_v), n, sample_period, rng)
    return times, np.column_stack([ax, ay])


def gaussian_wind(sigma, seed: int, duration: float, sample_period: float = 0.01, hold: float = 0.1):
    """I.i.d. N(0, sigma^2) per axis, redrawn every ``hold`` seconds.

    ``sigma`` is a number or a schedule of ``(t_start, sigma)`` pairs.
    """
    n = _n_samples(duration, sample_period)
    times = np.arange(n) * sample_period
    if isinstance(sigma, (int, float)):
        schedule = [(0.0, float(sigma))]
    else:
        schedule = sorted((float(t), float(s)) for t, s in sigma)
    starts = np.array([t for t, _ in schedule])
    levels = np.array([s for _, s in schedule])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6A]))
    slot = np.floor(times / hold + 1e-9).astype(int)
    draws = rng.standard_normal((slot[-1] + 1, 2))
    slot_t = np.arange(slot[-1] + 1) * hold
    slot_sigma = levels[np.maximum(np.searchsorted(starts, slot_t, side="right") - 1, 0)]
    return times, draws[slot] * slot_sigma[slot][:, None]


@dataclass(frozen=True)
class WindField:
    kind: str = "none"  # none | gaussian | dryden
    level: object = 0.0  # dryden level name / number, or gaussian sigma / schedule
    seed: int = 0
    sample_period: float = 0.01
    hold: float = 0.1
    dryden: DrydenParams = DrydenParams()

    def series(self, duration: float):
        if self.kind == "none":
            n = _n_samples(duration, self.sample_period)
            return np.arange(n) * self.sample_period, np.zeros((n, 2))
        if self.kind == "gaussian":
            return gaussian_wind(self.level, self.seed, duration, self.sample_period, self.hold)
        if self.kind == "dryden":
            return dryden_wind(self.level, self.seed, duration, self.sample_period, self.dryden)
        raise ParameterError(f"unknown wind kind {self.kind!r}")


def write_wind_csv(path, times, accel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ax", "ay"])
        for t, (ax, ay) in zip(times, accel):
            w.writerow([repr(float(t)), repr(float(ax)), repr(float(ay))])


def read_wind_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t", "ax", "ay"]:
        raise ValueError(f"{path}: expected header t,ax,ay")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 3)
    return data[:, 0], data[:, 1:]
