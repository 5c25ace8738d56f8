import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_margins.config import ControllerParams, GRAVITY, VehicleParams
from adaptive_margins.dynamics import (
    Control,
    DisturbanceSample,
    InvalidStateError,
    ParameterError,
    PIDController,
    State,
    hover_control,
    nominal_dynamics,
    pid_controller,
    rk4_step,
    step,
    wrap_angle,
)
from adaptive_margins.primitives import MotionPrimitive

VEH = VehicleParams()


def hover_state(**kw):
    return State(position=np.array([0.0, 0.0, 1.0]), **kw)


def test_hover_has_zero_acceleration():
    xdot = nominal_dynamics(hover_state(), hover_control(VEH))
    assert np.allclose(xdot[3:6], 0.0, atol=1e-12)


def test_zero_thrust_is_free_fall():
    xdot = nominal_dynamics(hover_state(), Control(0.0))
    assert np.allclose(xdot[3:6], [0, 0, -GRAVITY])


def test_roll_lag_rate():
    xdot = nominal_dynamics(hover_state(), Control(VEH.hover_thrust, desired_roll=0.1))
    assert xdot[6] == pytest.approx(0.1 / VEH.attitude_tau)


def test_yaw_rate_passthrough():
    x = hover_state(yaw_rate=0.3)
    s = step(x, Control(VEH.hover_thrust, desired_yaw_rate=-0.7), None, 0.01)
    assert s.yaw_rate == -0.7
    assert s.yaw == pytest.approx(-0.007)


def test_non_finite_input_rejected():
    with pytest.raises(InvalidStateError):
        nominal_dynamics(State(position=np.array([np.nan, 0, 0])), hover_control(VEH))
    with pytest.raises(ParameterError):
        step(hover_state(), hover_control(VEH), None, 0.0)
    with pytest.raises(ParameterError):
        step(hover_state(), hover_control(VEH), None, -0.01)


def test_hover_is_fixed_point():
    s = hover_state()
    for _ in range(100):
        nxt = step(s, hover_control(VEH), DisturbanceSample(np.zeros(3)), 0.01)
        assert np.max(np.abs(nxt.position - s.position)) < 1e-9
        s = nxt
    assert s.time == pytest.approx(1.0)
    assert np.array_equal(s.velocity, np.zeros(3))


def test_constant_push_one_step():
    s = step(hover_state(), hover_control(VEH), DisturbanceSample(np.array([1.0, 0, 0])), 0.01)
    assert s.velocity[0] == pytest.approx(0.01, rel=1e-9)


def test_body_frame_disturbance_rotated():
    s = step(hover_state(yaw=math.pi / 2), hover_control(VEH), DisturbanceSample(np.array([1.0, 0, 0]), "body"), 0.01)
    assert s.velocity[1] == pytest.approx(0.01, rel=1e-9)
    assert abs(s.velocity[0]) < 1e-12


def test_step_is_deterministic():
    s = State(np.array([0.1, 0.2, 1.0]), np.array([0.3, -0.1, 0.0]), 0.05, -0.02, 1.0, 0.1)
    u = Control(0.55, 0.1, -0.1, 0.2)
    d = DisturbanceSample(np.array([0.4, -0.3, 0.0]))
    a = step(s, u, d, 0.01).to_array()
    b = step(s, u, d, 0.01).to_array()
    assert a.tobytes() == b.tobytes()


def test_rk4_converges_against_fine_step():
    """Open-loop 1 s flight with constant tilt and yaw rate: dt vs dt/2 vs 1e-4 oracle."""
    x0 = np.array([0, 0, 1.0, 0.5, 0, 0, 0.02, 0.08, 0.0, 0.0])
    u = np.array([0.52, 0.05, 0.1, 0.3])
    d = np.array([0.2, -0.1, 0.0])

    def run(dt):
        x = x0.copy()
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(x, u, d, dt, VEH)
        return x[:3]

    coarse, half, fine = run(0.01), run(0.005), run(1e-4)
    assert np.max(np.abs(coarse - half)) < 1e-6
    assert np.max(np.abs(half - fine)) < 1e-7


def straight(v=0.5):
    return MotionPrimitive(0, v, 0.0, 3.0, start=(0.0, 0.0, 1.0, 0.0))


def test_on_trajectory_gives_hover_command():
    prim = straight()
    p, v, _, yaw, _ = prim.reference(1.0)
    u = pid_controller(State(p, v, yaw=yaw), prim, 1.0)
    assert u.normalized_thrust == pytest.approx(VEH.hover_thrust, abs=1e-12)
    assert u.desired_roll == pytest.approx(0.0, abs=1e-12)
    assert u.desired_pitch == pytest.approx(0.0, abs=1e-12)
    assert u.desired_yaw_rate == pytest.approx(0.0, abs=1e-12)


def test_forward_error_pitches_forward():
    prim = straight()
    for yaw in (0.0, 1.0, -2.5):
        p, v, _, _, _ = prim.placed((0, 0, 1, yaw)).reference(0.0)
        behind = p - np.array([math.cos(yaw), math.sin(yaw), 0.0])
        u = pid_controller(State(behind, v, yaw=yaw), prim.placed((0, 0, 1, yaw)), 0.0)
        assert u.desired_pitch > 0
        assert abs(u.desired_roll) < 1e-9


def test_large_error_saturates_tilt_exactly():
    gains = ControllerParams()
    prim = straight()
    u = pid_controller(State(np.array([-100.0, 0, 1.0])), prim, 0.0)
    assert u.desired_pitch == gains.max_tilt
    u = pid_controller(State(np.array([0.0, -100.0, 1.0])), prim, 0.0)
    assert u.desired_roll == -gains.max_tilt


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=10, max_size=10), st.floats(0, 3))
def test_controller_output_within_bounds(vals, t):
    gains = ControllerParams()
    s = State.from_array(np.array(vals))
    u = pid_controller(s, straight(1.0), t)
    assert 0.0 <= u.normalized_thrust <= 1.0
    assert abs(u.desired_roll) <= gains.max_tilt
    assert abs(u.desired_pitch) <= gains.max_tilt
    assert abs(u.desired_yaw_rate) <= gains.max_yaw_rate


def test_closed_loop_tracks_straight_line():
    prim = straight(0.5)
    ctrl = PIDController()
    s = State(np.array([0.0, 0.05, 1.0]), yaw=0.0)
    u = None
    errs = []
    for k in range(300):
        t = k * 0.01
        if k % 5 == 0:
            u = ctrl(s, prim, t)
        s = step(s, u, None, 0.01)
        errs.append(abs(s.position[1]) + abs(s.position[2] - 1.0))
    assert max(errs[200:]) < 0.01


def test_wrap_angle_range():
    a = wrap_angle(np.array([math.pi, -math.pi, 3 * math.pi, 0.5]))
    assert np.all(a > -math.pi) and np.all(a <= math.pi)
    assert a[0] == pytest.approx(math.pi) and a[1] == pytest.approx(math.pi)
