import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajpred.baselines import (
    PhysicsModel,
    constant_velocity_baseline,
    physics_oracle,
    rollout,
)
from trajpred.metrics import ade
from trajpred.scene import AgentState, SyntheticConfig, generate_synthetic


def fine_step(speed, accel, yaw_rate, horizon=12, dt=0.5, h=1e-4):
    """Reference: classical RK4 on (x, y, heading, v) with a stop at zero speed."""

    def deriv(s):
        x, y, th, v = s
        a = accel if v > 0 or accel > 0 else 0.0
        return np.array([v * math.cos(th), v * math.sin(th), yaw_rate if v > 0 or accel > 0 else 0.0, a])

    s = np.array([0.0, 0.0, 0.0, speed])
    steps = int(round(dt / h))
    out = []
    for _ in range(horizon):
        for _ in range(steps):
            k1 = deriv(s)
            k2 = deriv(s + 0.5 * h * k1)
            k3 = deriv(s + 0.5 * h * k2)
            k4 = deriv(s + h * k3)
            s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if s[3] < 0:
                s[3] = 0.0
        out.append(s[:2].copy())
    return np.array(out)


def test_cv_example():
    traj = rollout(PhysicsModel.CV, AgentState(5, 5, 1.0, speed=2.0))
    assert np.allclose(traj.points, np.stack([np.arange(1, 13), np.zeros(12)], axis=1), atol=1e-12)


def test_ctrv_on_circle_and_matches_fine_integration():
    v, w = 8.0, 0.4
    traj = rollout(PhysicsModel.CTRV, AgentState(0, 0, 0, speed=v, yaw_rate=w)).points
    centre = np.array([0.0, v / w])
    assert np.allclose(np.linalg.norm(traj - centre, axis=1), v / w, atol=1e-9)
    assert np.abs(traj - fine_step(v, 0.0, w)).max() < 1e-6


@pytest.mark.parametrize("speed, accel, yaw_rate", [(10.0, 1.5, -0.3), (6.0, -1.0, 0.5), (3.0, -2.0, 0.2)])
def test_ctra_matches_fine_integration(speed, accel, yaw_rate):
    traj = rollout(PhysicsModel.CTRA, AgentState(0, 0, 0, speed=speed, acceleration=accel, yaw_rate=yaw_rate))
    assert np.abs(traj.points - fine_step(speed, accel, yaw_rate)).max() < 1e-6


def test_ca_stops_within_first_step():
    traj = rollout(PhysicsModel.CA, AgentState(0, 0, 0, speed=1.0, acceleration=-25.0)).points
    # stops after 1/25 = 0.04 s, having travelled 1*0.04 - 25*0.04^2/2 = 0.02 m
    assert np.allclose(traj, [[0.02, 0.0]] * 12, atol=1e-12)
    assert np.abs(traj - fine_step(1.0, -25.0, 0.0)).max() < 1e-6


@pytest.mark.parametrize("model, base", [(PhysicsModel.CTRV, PhysicsModel.CV), (PhysicsModel.CTRA, PhysicsModel.CA)])
def test_turn_models_continuous_at_zero_yaw_rate(model, base):
    # the true lateral drift from a 1e-6 rad/s yaw rate over 6 s is w*(v t^2/2 + a t^3/3), ~7e-5 m here
    v, a, w = 2.0, 0.5, 1e-6
    near = rollout(model, AgentState(0, 0, 0, speed=v, acceleration=a, yaw_rate=w)).points
    zero = rollout(model, AgentState(0, 0, 0, speed=v, acceleration=a, yaw_rate=0.0)).points
    straight = rollout(base, AgentState(0, 0, 0, speed=v, acceleration=a)).points
    assert np.abs(near - zero).max() < 1e-4
    t = 0.5 * np.arange(1, 13)
    acc = a if model is PhysicsModel.CTRA else 0.0
    assert np.allclose(near[:, 1], w * (v * t**2 / 2 + acc * t**3 / 3), rtol=1e-5, atol=1e-15)
    assert np.array_equal(zero, straight)


def test_tiny_yaw_rate_has_no_division_blowup():
    for w in (1e-10, -1e-10, 1e-12):
        traj = rollout(PhysicsModel.CTRA, AgentState(0, 0, 0, speed=5, acceleration=1, yaw_rate=w)).points
        assert np.all(np.isfinite(traj))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 30), st.floats(-25, 25), st.floats(-2 * math.pi, 2 * math.pi))
def test_rollouts_finite_and_shaped(v, a, w):
    for model in PhysicsModel:
        traj = rollout(model, AgentState(0, 0, 0, speed=v, acceleration=a, yaw_rate=w))
        assert traj.is_prediction_shaped() and np.all(np.isfinite(traj.points))


def _noise_free(maneuver, seed=0):
    cfg = SyntheticConfig(count=5, maneuver_mix={maneuver: 1.0}, noise=0.0)
    return generate_synthetic(cfg, seed)


def test_cv_exact_on_straight_and_wrong_on_turn():
    for inst in _noise_free("straight"):
        assert ade(constant_velocity_baseline(inst), inst.ground_truth) == pytest.approx(0.0, abs=1e-12)
    for inst in _noise_free("turn"):
        assert ade(constant_velocity_baseline(inst), inst.ground_truth) > 0.1


def test_cv_repeatable():
    inst = _noise_free("turn")[0]
    assert constant_velocity_baseline(inst) == constant_velocity_baseline(inst)


def test_oracle_picks_matching_model():
    for inst in _noise_free("straight"):
        assert physics_oracle(inst) == rollout(PhysicsModel.CV, inst.target_state)
    for inst in _noise_free("turn"):
        pick = physics_oracle(inst)
        assert pick == rollout(PhysicsModel.CTRV, inst.target_state)
        assert ade(pick, inst.ground_truth) == pytest.approx(0.0, abs=1e-9)


def test_oracle_never_worse_than_cv():
    for inst in generate_synthetic(SyntheticConfig(count=300), 9):
        assert ade(physics_oracle(inst), inst.ground_truth) <= ade(constant_velocity_baseline(inst), inst.ground_truth)
