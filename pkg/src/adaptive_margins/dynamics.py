"""Nominal quadrotor model, additive disturbance injection and cascaded PID.

The state vector layout (``STATE_DIM = 10``) is::

    [px, py, pz, vx, vy, vz, roll, pitch, yaw, yaw_rate]

in a z-up world frame with ZYX Euler angles.  Positive pitch tilts the thrust
axis toward body +x, positive roll toward body -y.  Control vectors are
``[thrust, roll_cmd, pitch_cmd, yaw_rate_cmd]`` with thrust normalized to
[0, 1] and mapped linearly to force.

All array functions accept arbitrary leading batch dimensions so the Monte
Carlo engine can push a whole rollout batch through one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import GRAVITY, ControllerParams, VehicleParams

STATE_DIM = 10
CONTROL_DIM = 4

POS = slice(0, 3)
VEL = slice(3, 6)
ROLL, PITCH, YAW, YAW_RATE = 6, 7, 8, 9


class InvalidStateError(ValueError):
    """Non-finite state or control handed to the model."""


class ParameterError(ValueError):
    """Invalid numeric parameter such as a non-positive step."""


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class State:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    yaw_rate: float = 0.0
    time: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [self.position, self.velocity, [self.roll, self.pitch, self.yaw, self.yaw_rate]]
        ).astype(float)

    @classmethod
    def from_array(cls, x, time: float = 0.0) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(
            position=x[POS].copy(),
            velocity=x[VEL].copy(),
            roll=float(x[ROLL]),
            pitch=float(x[PITCH]),
            yaw=float(x[YAW]),
            yaw_rate=float(x[YAW_RATE]),
            time=float(time),
        )


@dataclass(frozen=True)
class Control:
    normalized_thrust: float
    desired_roll: float = 0.0
    desired_pitch: float = 0.0
    desired_yaw_rate: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.normalized_thrust, self.desired_roll, self.desired_pitch, self.desired_yaw_rate],
            dtype=float,
        )

    @classmethod
    def from_array(cls, u) -> "Control":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]), float(u[2]), float(u[3]))


@dataclass(frozen=True)
class DisturbanceSample:
    """Acceleration disturbance tagged with its frame ("world" or "body")."""

    acceleration: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        if self.frame not in ("world", "body"):
            raise ValueError(f"unknown frame tag {self.frame!r}")
        if not np.all(np.isfinite(self.acceleration)):
            raise InvalidStateError("non-finite disturbance")


def hover_control(vehicle: VehicleParams) -> Control:
    return Control(vehicle.hover_thrust)


def rotation_matrix(roll, pitch, yaw) -> np.ndarray:
    """Body-to-world rotation R = Rz(yaw) Ry(pitch) Rx(roll), shape (..., 3, 3)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.stack(
        [
            np.stack([cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr], -1),
            np.stack([sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr], -1),
            np.stack([-sp, cp * sr, cp * cr], -1),
        ],
        -2,
    )


def thrust_axis(roll, pitch, yaw) -> np.ndarray:
    """Third column of the body-to-world rotation (body z in world)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.stack([cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr], -1)


def nominal_derivative(x: np.ndarray, u: np.ndarray, vehicle: VehicleParams) -> np.ndarray:
    """Batched nominal model f(x, u); yaw_rate is algebraic so its slot is 0."""
    thrust_acc = u[..., 0] * (vehicle.max_thrust_force / vehicle.mass)
    acc = thrust_axis(x[..., ROLL], x[..., PITCH], x[..., YAW]) * thrust_acc[..., None]
    acc[..., 2] -= GRAVITY
    dx = np.empty_like(x)
    dx[..., POS] = x[..., VEL]
    dx[..., VEL] = acc
    dx[..., ROLL] = (u[..., 1] - x[..., ROLL]) / vehicle.attitude_tau
    dx[..., PITCH] = (u[..., 2] - x[..., PITCH]) / vehicle.attitude_tau
    dx[..., YAW] = u[..., 3]
    dx[..., YAW_RATE] = 0.0
    return dx


def rk4_step(x, u, d_world, dt: float, vehicle: VehicleParams) -> np.ndarray:
    """One RK4 step of f(x,u) + d with u and d held over the step."""
    d = np.zeros_like(x)
    d[..., VEL] = d_world

    def f(z):
        return nominal_derivative(z, u, vehicle) + d

    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    out[..., ROLL:YAW + 1] = wrap_angle(out[..., ROLL:YAW + 1])
    out[..., YAW_RATE] = u[..., 3]
    return out


def nominal_dynamics(state: State, control: Control, vehicle: VehicleParams | None = None) -> np.ndarray:
    """State derivative of the nominal model, laid out like ``State.to_array``."""
    vehicle = vehicle or VehicleParams()
    x, u = state.to_array(), control.to_array()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise InvalidStateError("non-finite state or control")
    return nominal_derivative(x, u, vehicle)


def step(
    state: State,
    control: Control,
    disturbance: DisturbanceSample | None,
    dt: float,
    vehicle: VehicleParams | None = None,
) -> State:
    """Advance one fixed RK4 step under a world-frame disturbance acceleration."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    vehicle = vehicle or VehicleParams()
    x, u = state.to_array(), control.to_array()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise InvalidStateError("non-finite state or control")
    if disturbance is None:
        d = np.zeros(3)
    else:
        d = np.asarray(disturbance.acceleration, dtype=float)
        if disturbance.frame == "body":
            d = rotation_matrix(state.roll, state.pitch, state.yaw) @ d
    return State.from_array(rk4_step(x, u, d, dt, vehicle), time=state.time + dt)


# --------------------------------------------------------------------------
# cascaded PID
# --------------------------------------------------------------------------


def pid_command(x, ref, integral, gains: ControllerParams, vehicle: VehicleParams):
    """Batched cascaded PID.

    ``ref`` is the tuple ``(pos, vel, acc, yaw, yaw_rate)`` returned by a
    trajectory's ``reference``; ``integral`` is the running position-error
    integral.  Outer loop: position PID with velocity feedforward gives a
    velocity command.  Inner loop: proportional velocity control plus
    acceleration feedforward gives the acceleration command, which is mapped
    to tilt and thrust.  Returns ``(u, e_pos)``; the caller owns integration.
    """
    p_ref, v_ref, a_ref, yaw_ref, yaw_rate_ref = ref
    pos, vel = x[..., POS], x[..., VEL]
    e_pos = p_ref - pos
    e_vel = v_ref - vel
    v_cmd = v_ref + gains.kp_pos * e_pos + gains.ki * integral + gains.kd * e_vel
    a_cmd = a_ref + gains.kp_vel * (v_cmd - vel)

    force = a_cmd.copy()
    force[..., 2] += GRAVITY
    yaw = x[..., YAW]
    cy, sy = np.cos(yaw), np.sin(yaw)
    fx = cy * force[..., 0] + sy * force[..., 1]
    fy = -sy * force[..., 0] + cy * force[..., 1]
    fz = np.maximum(force[..., 2], 1e-6)
    pitch_cmd = np.clip(np.arctan2(fx, fz), -gains.max_tilt, gains.max_tilt)
    roll_cmd = np.clip(np.arctan2(-fy, np.hypot(fx, fz)), -gains.max_tilt, gains.max_tilt)

    b3 = thrust_axis(x[..., ROLL], x[..., PITCH], yaw)
    thrust_acc = np.maximum(np.sum(force * b3, axis=-1), 0.0)
    thrust = np.clip(thrust_acc * vehicle.mass / vehicle.max_thrust_force, 0.0, 1.0)

    yaw_rate_cmd = np.clip(
        yaw_rate_ref + gains.kp_yaw * wrap_angle(yaw_ref - yaw),
        -gains.max_yaw_rate,
        gains.max_yaw_rate,
    )
    u = np.stack([thrust, roll_cmd, pitch_cmd, yaw_rate_cmd], axis=-1)
    return u, e_pos


def integrate_error(integral, e_pos, gains: ControllerParams):
    return np.clip(integral + e_pos * gains.period, -gains.integral_limit, gains.integral_limit)


def pid_controller(
    state: State,
    trajectory,
    t: float,
    gains: ControllerParams | None = None,
    vehicle: VehicleParams | None = None,
    integral=None,
) -> Control:
    """Single control evaluation against ``trajectory.reference(t)``.

    ``t`` beyond the trajectory end holds the final position.  Pass the
    integral carried by :class:`PIDController` for closed-loop use; it
    defaults to zero, which makes this a pure function.
    """
    gains = gains or ControllerParams()
    vehicle = vehicle or VehicleParams()
    x = state.to_array()
    if integral is None:
        integral = np.zeros(3)
    u, _ = pid_command(x, trajectory.reference(t), np.asarray(integral, float), gains, vehicle)
    return Control.from_array(u)


class PIDController:
    """Stateful wrapper carrying the integral term between calls."""

    def __init__(self, gains: ControllerParams | None = None, vehicle: VehicleParams | None = None):
        self.gains = gains or ControllerParams()
        self.vehicle = vehicle or VehicleParams()
        self.integral = np.zeros(3)

    def reset(self):
        self.integral = np.zeros(3)

    def __call__(self, state: State, trajectory, t: float) -> Control:
        x = state.to_array()
        u, e_pos = pid_command(x, trajectory.reference(t), self.integral, self.gains, self.vehicle)
        self.integral = integrate_error(self.integral, e_pos, self.gains)
        return Control.from_array(u)
