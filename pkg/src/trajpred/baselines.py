"""Physics baselines: constant velocity and the ground-truth-selected physics oracle."""

from __future__ import annotations

import enum

import numpy as np

from . import kinematics
from .metrics import ade
from .scene import DT, HORIZON, AgentState, Instance, Trajectory


class PhysicsModel(enum.Enum):
    CV = "CV"
    CA = "CA"
    CTRV = "CTRV"
    CTRA = "CTRA"


def rollout(model: PhysicsModel, state: AgentState, horizon: int = HORIZON, dt: float = DT) -> Trajectory:
    """Closed-form rollout of ``state`` in its own frame (origin at the agent, +x ahead)."""
    model = PhysicsModel(model)
    accel = state.acceleration if model in (PhysicsModel.CA, PhysicsModel.CTRA) else 0.0
    yaw_rate = state.yaw_rate if model in (PhysicsModel.CTRV, PhysicsModel.CTRA) else 0.0
    t = dt * np.arange(1, horizon + 1)
    x, y, _, _ = kinematics.integrate(state.speed, accel, yaw_rate, t)
    return Trajectory(np.stack([x, y], axis=-1), dt)


def constant_velocity_baseline(instance: Instance) -> Trajectory:
    return rollout(PhysicsModel.CV, instance.target_state)


def oracle_candidates(instance: Instance) -> list[Trajectory]:
    return [rollout(m, instance.target_state) for m in PhysicsModel]


def physics_oracle(instance: Instance) -> Trajectory:
    """Best of the four kinematic rollouts by ADE to the ground truth; enum order breaks ties."""
    candidates = oracle_candidates(instance)
    errors = [ade(c, instance.ground_truth) for c in candidates]
    return candidates[int(np.argmin(errors))]
