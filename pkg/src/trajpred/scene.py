"""Domain types for agents, scenes and trajectories, plus JSON ingestion and synthetic scenes."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kinematics

logger = logging.getLogger(__name__)

HORIZON = 12
DT = 0.5
HISTORY_LEN = 5

SPEED_MAX = 30.0
ACCEL_MAX = 25.0
YAW_RATE_MAX = 2.0 * math.pi

MAP_LAYERS = ("drivable_area", "crosswalk", "walkway")


class SceneError(ValueError):
    """Raised when scene data violates the schema or a domain invariant."""


class Category(str, enum.Enum):
    TARGET_VEHICLE = "target_vehicle"
    OTHER_VEHICLE = "other_vehicle"
    PEDESTRIAN = "pedestrian"


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def _clamp(value: float, bound: float) -> float:
    return min(max(value, -bound), bound)


def kinematics_out_of_range(speed: float, acceleration: float, yaw_rate: float) -> int:
    """Number of kinematic fields that construction would clamp."""
    return int(not 0.0 <= speed <= SPEED_MAX) + int(abs(acceleration) > ACCEL_MAX) + int(
        abs(yaw_rate) > YAW_RATE_MAX
    )


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    acceleration: float = 0.0
    yaw_rate: float = 0.0
    category: Category = Category.OTHER_VEHICLE

    def __post_init__(self):
        values = (self.x, self.y, self.heading, self.speed, self.acceleration, self.yaw_rate)
        if not all(math.isfinite(float(v)) for v in values):
            raise SceneError(f"non-finite agent state: {values}")
        set_ = object.__setattr__
        set_(self, "x", float(self.x))
        set_(self, "y", float(self.y))
        set_(self, "heading", normalize_angle(float(self.heading)))
        set_(self, "speed", min(max(float(self.speed), 0.0), SPEED_MAX))
        set_(self, "acceleration", _clamp(float(self.acceleration), ACCEL_MAX))
        set_(self, "yaw_rate", _clamp(float(self.yaw_rate), YAW_RATE_MAX))
        set_(self, "category", Category(self.category))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.heading)


class Trajectory:
    """Immutable sequence of 2D points sampled every ``dt`` seconds."""

    __slots__ = ("_points", "dt")

    def __init__(self, points, dt: float = DT):
        arr = np.array(points, dtype=np.float64).reshape(-1, 2)
        if arr.shape[0] == 0:
            raise SceneError("trajectory needs at least one point")
        if not np.all(np.isfinite(arr)):
            raise SceneError("trajectory coordinates must be finite")
        arr.setflags(write=False)
        self._points = arr
        self.dt = float(dt)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __array__(self, dtype=None, copy=None):
        return self._points if dtype is None else self._points.astype(dtype)

    def __len__(self) -> int:
        return self._points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self._points, other._points)

    def __hash__(self) -> int:
        return hash((self._points.tobytes(), self.dt))

    def __repr__(self) -> str:
        return f"Trajectory(n={len(self)}, dt={self.dt})"

    def is_prediction_shaped(self) -> bool:
        return len(self) == HORIZON and self.dt == DT


@dataclass(frozen=True)
class Agent:
    agent_id: str
    category: Category
    history: tuple[AgentState, ...]

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "history", tuple(self.history))
        if not 1 <= len(self.history) <= HISTORY_LEN:
            raise SceneError(
                f"agent {self.agent_id!r}: history must hold 1..{HISTORY_LEN} states, got {len(self.history)}"
            )

    @property
    def current(self) -> AgentState:
        return self.history[-1]

    def padded_history(self, length: int = HISTORY_LEN) -> tuple[AgentState, ...]:
        """History left-padded by repeating the oldest state."""
        missing = length - len(self.history)
        return (self.history[0],) * max(missing, 0) + self.history[-length:]


@dataclass(frozen=True)
class Scene:
    map_layers: Mapping[str, tuple[np.ndarray, ...]]
    agents: tuple[Agent, ...]
    target_id: str
    timestamp: float = 0.0

    def __post_init__(self):
        layers = {}
        for name in MAP_LAYERS:
            polys = []
            for poly in self.map_layers.get(name, ()):
                arr = np.array(poly, dtype=np.float64).reshape(-1, 2)
                arr.setflags(write=False)
                polys.append(arr)
            layers[name] = tuple(polys)
        unknown = set(self.map_layers) - set(MAP_LAYERS)
        if unknown:
            raise SceneError(f"unknown map layers: {sorted(unknown)}")
        object.__setattr__(self, "map_layers", layers)
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.target_id not in {a.agent_id for a in self.agents}:
            raise SceneError(f"target_id {self.target_id!r} not among agents")

    @property
    def target(self) -> Agent:
        return next(a for a in self.agents if a.agent_id == self.target_id)


@dataclass(frozen=True)
class Instance:
    scene: Scene
    ground_truth: Trajectory

    def __post_init__(self):
        if not self.ground_truth.is_prediction_shaped():
            raise SceneError(
                f"ground truth must have {HORIZON} points at dt={DT}, got {len(self.ground_truth)}"
            )

    @property
    def target_state(self) -> AgentState:
        return self.scene.target.current


@dataclass(frozen=True)
class StateVector:
    speed: float
    acceleration: float
    yaw_rate: float

    @classmethod
    def from_state(cls, state: AgentState) -> "StateVector":
        return cls(state.speed, state.acceleration, state.yaw_rate)

    def normalized(self) -> np.ndarray:
        """Values scaled to [-1, 1] by the kinematic range bounds."""
        return np.array(
            [self.speed / SPEED_MAX, self.acceleration / ACCEL_MAX, self.yaw_rate / YAW_RATE_MAX]
        )


# --- frames -----------------------------------------------------------------


def _check_pose(agent_pose) -> tuple[float, float, float]:
    x, y, heading = (float(v) for v in agent_pose)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(heading)):
        raise SceneError(f"non-finite pose: {agent_pose}")
    return x, y, heading


def to_agent_frame(world_point, agent_pose) -> np.ndarray:
    """Express world points in the frame centred on the agent with +x along its heading.

    ``world_point`` may be a single (x, y) pair or an (n, 2) array.
    """
    x0, y0, heading = _check_pose(agent_pose)
    p = np.asarray(world_point, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise SceneError("non-finite point")
    c, s = math.cos(heading), math.sin(heading)
    dx = p[..., 0] - x0
    dy = p[..., 1] - y0
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def from_agent_frame(local_point, agent_pose) -> np.ndarray:
    x0, y0, heading = _check_pose(agent_pose)
    p = np.asarray(local_point, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise SceneError("non-finite point")
    c, s = math.cos(heading), math.sin(heading)
    lx, ly = p[..., 0], p[..., 1]
    return np.stack([x0 + c * lx - s * ly, y0 + s * lx + c * ly], axis=-1)


# --- JSON -------------------------------------------------------------------

_STATE_FIELDS = ("x", "y", "heading", "speed", "accel", "yaw_rate")


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SceneError(f"{where}: missing field {key!r}")
    return obj[key]


def _number(value, where) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _parse_instance(record, index: int) -> tuple[Instance, int]:
    where = f"record {index}"
    warnings = 0
    if not isinstance(record, dict):
        raise SceneError(f"{where}: expected an object")
    timestamp = _number(_require(record, "timestamp", where), f"{where}.timestamp")
    target_id = _require(record, "target_id", where)
    if not isinstance(target_id, str):
        raise SceneError(f"{where}.target_id: expected a string")
    agents_raw = _require(record, "agents", where)
    if not isinstance(agents_raw, list):
        raise SceneError(f"{where}.agents: expected a list")
    agents = []
    for ai, agent in enumerate(agents_raw):
        aw = f"{where}.agents[{ai}]"
        agent_id = _require(agent, "id", aw)
        try:
            category = Category(_require(agent, "category", aw))
        except ValueError as exc:
            raise SceneError(f"{aw}.category: {exc}") from None
        history_raw = _require(agent, "history", aw)
        if not isinstance(history_raw, list):
            raise SceneError(f"{aw}.history: expected a list")
        history = []
        for hi, st in enumerate(history_raw):
            hw = f"{aw}.history[{hi}]"
            vals = {k: _number(_require(st, k, hw), f"{hw}.{k}") for k in _STATE_FIELDS}
            warnings += kinematics_out_of_range(vals["speed"], vals["accel"], vals["yaw_rate"])
            try:
                history.append(
                    AgentState(
                        vals["x"], vals["y"], vals["heading"], vals["speed"], vals["accel"],
                        vals["yaw_rate"], category,
                    )
                )
            except SceneError as exc:
                raise SceneError(f"{hw}: {exc}") from None
        try:
            agents.append(Agent(str(agent_id), category, tuple(history)))
        except SceneError as exc:
            raise SceneError(f"{aw}: {exc}") from None
    map_raw = _require(record, "map", where)
    if not isinstance(map_raw, dict):
        raise SceneError(f"{where}.map: expected an object")
    gt_raw = _require(record, "ground_truth", where)
    try:
        scene = Scene(map_raw, tuple(agents), target_id, timestamp)
        gt = Trajectory(gt_raw)
        return Instance(scene, gt), warnings
    except (SceneError, ValueError, TypeError) as exc:
        raise SceneError(f"{where}: {exc}") from None


def parse_scenes(records: Sequence) -> tuple[list[Instance], int]:
    if not isinstance(records, list):
        raise SceneError("scene file must hold a JSON array of instances")
    instances, warnings = [], 0
    for i, rec in enumerate(records):
        inst, w = _parse_instance(rec, i)
        instances.append(inst)
        warnings += w
    return instances, warnings


def load_scenes(path) -> tuple[list[Instance], int]:
    """Read a scene JSON file.

    Returns the instances in file order and the number of kinematic values
    that were clamped into range.
    """
    with open(path) as fh:
        records = json.load(fh)
    instances, warnings = parse_scenes(records)
    if warnings:
        logger.warning("%s: clamped %d out-of-range kinematic values", path, warnings)
    return instances, warnings


def _state_to_json(st: AgentState) -> dict:
    return {
        "x": st.x, "y": st.y, "heading": st.heading, "speed": st.speed,
        "accel": st.acceleration, "yaw_rate": st.yaw_rate,
    }


def instance_to_json(inst: Instance) -> dict:
    scene = inst.scene
    return {
        "timestamp": scene.timestamp,
        "target_id": scene.target_id,
        "agents": [
            {
                "id": a.agent_id,
                "category": a.category.value,
                "history": [_state_to_json(s) for s in a.history],
            }
            for a in scene.agents
        ],
        "map": {name: [poly.tolist() for poly in scene.map_layers[name]] for name in MAP_LAYERS},
        "ground_truth": inst.ground_truth.points.tolist(),
    }


def dumps_scenes(instances: Iterable[Instance]) -> str:
    return json.dumps([instance_to_json(i) for i in instances], separators=(",", ":"))


def save_scenes(instances: Iterable[Instance], path) -> None:
    Path(path).write_text(dumps_scenes(instances))


def dataset_hash(instances: Iterable[Instance]) -> str:
    return hashlib.sha256(dumps_scenes(instances).encode()).hexdigest()


# --- synthetic scenes -------------------------------------------------------

MANEUVERS = ("straight", "turn", "stop")


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 2000
    agent_count: tuple[int, int] = (1, 6)
    maneuver_mix: Mapping[str, float] = field(
        default_factory=lambda: {"straight": 1.0, "turn": 1.0, "stop": 1.0}
    )
    noise: float = 0.1
    speed_range: tuple[float, float] = (3.0, 15.0)
    max_yaw_rate: float = 0.3
    min_turn_radius: float = 10.0
    decel_range: tuple[float, float] = (1.0, 4.0)
    crosswalk_prob: float = 0.3
    lane_half_width: float = 3.5
    walkway_width: float = 2.0

    def __post_init__(self):
        unknown = set(self.maneuver_mix) - set(MANEUVERS)
        if unknown:
            raise SceneError(f"unknown maneuvers {sorted(unknown)}; choose from {MANEUVERS}")
        if self.count < 0:
            raise SceneError("count must be non-negative")
        lo, hi = self.agent_count
        if not 1 <= lo <= hi:
            raise SceneError("agent_count must satisfy 1 <= min <= max")
        if sum(self.maneuver_mix.values()) <= 0:
            raise SceneError("maneuver_mix weights must sum to a positive value")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticConfig":
        kw = dict(data)
        for key in ("agent_count", "speed_range", "decel_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "agent_count": list(self.agent_count),
            "maneuver_mix": dict(sorted(self.maneuver_mix.items())),
            "noise": self.noise,
            "speed_range": list(self.speed_range),
            "max_yaw_rate": self.max_yaw_rate,
            "min_turn_radius": self.min_turn_radius,
            "decel_range": list(self.decel_range),
            "crosswalk_prob": self.crosswalk_prob,
            "lane_half_width": self.lane_half_width,
            "walkway_width": self.walkway_width,
        }


def _strip(centre: np.ndarray, headings: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """Polygon covering lateral offsets [inner, outer] along a path (negative = right side)."""
    normal = np.stack([-np.sin(headings), np.cos(headings)], axis=-1)
    a = centre + inner * normal
    b = centre + outer * normal
    return np.concatenate([a, b[::-1]], axis=0)


def _rect(cx, cy, heading, length, width) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    corners = np.array(
        [[length / 2, width / 2], [-length / 2, width / 2], [-length / 2, -width / 2], [length / 2, -width / 2]]
    )
    rot = np.array([[c, -s], [s, c]])
    return corners @ rot.T + np.array([cx, cy])


def _sample_maneuver(rng: np.random.Generator, cfg: SyntheticConfig):
    names = sorted(cfg.maneuver_mix)
    weights = np.array([cfg.maneuver_mix[n] for n in names], dtype=np.float64)
    name = names[int(rng.choice(len(names), p=weights / weights.sum()))]
    speed = float(rng.uniform(*cfg.speed_range))
    accel, yaw_rate = 0.0, 0.0
    if name == "turn":
        limit = min(cfg.max_yaw_rate, speed / cfg.min_turn_radius)
        yaw_rate = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0) * limit)
    elif name == "stop":
        accel = -float(rng.uniform(*cfg.decel_range))
    return name, speed, accel, yaw_rate


def _map_layers(rng, cfg, maneuver, speed, accel, yaw_rate):
    """Lane corridor, walkways and crossings in the target frame."""
    t = np.arange(-2.0, HORIZON * DT + 0.25, DT)
    x, y, heading, _ = kinematics.integrate(speed, accel, yaw_rate, t)
    centre = np.stack([x, y], axis=-1)
    ext = 20.0
    head = centre[0] - ext * np.array([math.cos(heading[0]), math.sin(heading[0])])
    tail = centre[-1] + ext * np.array([math.cos(heading[-1]), math.sin(heading[-1])])
    centre = np.concatenate([head[None], centre, tail[None]])
    heading = np.concatenate([heading[:1], heading, heading[-1:]])
    hw, ww = cfg.lane_half_width, cfg.walkway_width
    layers = {
        "drivable_area": [_strip(centre, heading, -hw, hw)],
        "walkway": [_strip(centre, heading, hw, hw + ww), _strip(centre, heading, -hw - ww, -hw)],
        "crosswalk": [],
    }
    span = 2 * (hw + ww)
    if maneuver == "stop":
        stop = float(kinematics.effective_time(np.array(HORIZON * DT), speed, accel))
        sx, _, _, _ = kinematics.integrate(speed, accel, 0.0, np.array([stop]))
        layers["crosswalk"].append(_rect(float(sx[0]) + 3.0, 0.0, 0.0, 3.0, span))
    elif maneuver == "straight" and rng.uniform() < cfg.crosswalk_prob:
        layers["crosswalk"].append(_rect(float(rng.uniform(5.0, 40.0)), 0.0, 0.0, 3.0, span))
    return layers


def _history(pose, speed, accel, yaw_rate, category) -> tuple[AgentState, ...]:
    t = -DT * np.arange(HISTORY_LEN - 1, -1, -1)
    x, y, heading, v = kinematics.integrate(speed, accel, yaw_rate, t)
    world = from_agent_frame(np.stack([x, y], axis=-1), pose)
    return tuple(
        AgentState(world[i, 0], world[i, 1], pose[2] + heading[i], v[i], accel, yaw_rate, category)
        for i in range(HISTORY_LEN)
    )


def _synthetic_instance(rng: np.random.Generator, cfg: SyntheticConfig, index: int) -> Instance:
    pose = (float(rng.uniform(-500, 500)), float(rng.uniform(-500, 500)), float(rng.uniform(-math.pi, math.pi)))
    maneuver, speed, accel, yaw_rate = _sample_maneuver(rng, cfg)
    t = DT * np.arange(1, HORIZON + 1)
    gx, gy, _, _ = kinematics.integrate(speed, accel, yaw_rate, t)
    gt = np.stack([gx, gy], axis=-1)
    if cfg.noise > 0:
        gt = gt + rng.normal(0.0, cfg.noise, gt.shape)

    agents = [Agent("target", Category.TARGET_VEHICLE, _history(pose, speed, accel, yaw_rate, Category.TARGET_VEHICLE))]
    n_others = int(rng.integers(cfg.agent_count[0], cfg.agent_count[1] + 1)) - 1
    for j in range(n_others):
        category = Category.OTHER_VEHICLE if rng.uniform() < 0.7 else Category.PEDESTRIAN
        local = np.array([rng.uniform(-12.0, 24.0), rng.uniform(-14.0, 14.0)])
        world = from_agent_frame(local, pose)
        heading = pose[2] + float(rng.uniform(-math.pi, math.pi))
        v = float(rng.uniform(0.0, 12.0 if category is Category.OTHER_VEHICLE else 2.0))
        agents.append(Agent(f"a{j + 1}", category, _history((world[0], world[1], heading), v, 0.0, 0.0, category)))

    local_layers = _map_layers(rng, cfg, maneuver, speed, accel, yaw_rate)
    layers = {k: [from_agent_frame(p, pose) for p in v] for k, v in local_layers.items()}
    scene = Scene(layers, tuple(agents), "target", DT * index)
    return Instance(scene, Trajectory(gt))


def generate_synthetic(config: SyntheticConfig, seed: int) -> list[Instance]:
    """Deterministic synthetic dataset: same ``(config, seed)`` gives the same instances."""
    rng = np.random.default_rng(seed)
    return [_synthetic_instance(rng, config, i) for i in range(config.count)]
