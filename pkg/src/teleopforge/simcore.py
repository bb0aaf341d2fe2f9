"""Deterministic fixed-rate kinematic simulator of an n-joint serial arm.

The arm is a chain of revolute joints, each a rotation about a fixed local
axis followed by a fixed translation, with a tool offset at the end. Grasping
is proximity-attach: closing the gripper within GRASP_RADIUS of an object's
center rigidly pins the object to the tool frame; opening drops it straight
down onto the highest support underneath. There is no contact dynamics and no
ballistic phase, which keeps stepping bit-deterministic and lets any mid-
episode snapshot be restored exactly.

Units: meters, radians, seconds. Quaternions are scalar-first (w, x, y, z).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import canonjson
from .geometry import Pose, pose_error, quat_normalize

GRASP_RADIUS = 0.03  # gripper closes on an object within this distance
STACK_RADIUS = 0.04  # dropped objects rest on anything this close horizontally
DEFAULT_DT = 0.02  # 50 Hz session rate
TABLE_Z = 0.0

TASK_KINDS = ("lifting", "picking", "assembly")


class SimError(ValueError):
    """Invalid argument to a simulator operation."""


# ---------------------------------------------------------------------------
# Arm description


@dataclass
class JointSpec:
    axis: np.ndarray  # unit rotation axis in the parent frame
    offset: np.ndarray  # translation applied after the rotation
    limits: tuple[float, float]  # position limits, radians
    max_velocity: float  # rad/s

    def validate(self) -> None:
        if abs(float(np.linalg.norm(self.axis)) - 1.0) > 1e-9:
            raise SimError(f"joint axis must be unit length, got {self.axis}")
        if self.max_velocity <= 0.0:
            raise SimError("max_velocity must be > 0")
        if self.limits[0] >= self.limits[1]:
            raise SimError(f"empty joint limit range {self.limits}")


@dataclass
class ArmConfig:
    joints: list[JointSpec]
    tool_offset: np.ndarray
    home_q: np.ndarray
    k_v: float = 5.0  # joint velocity gain, qdot = -k_v (q - q*)

    def __post_init__(self):
        if len(self.joints) < 2:
            raise SimError("arm needs at least 2 joints")
        for j in self.joints:
            j.validate()
        if len(self.home_q) != len(self.joints):
            raise SimError("home_q length must match joint count")
        if self.k_v <= 0.0:
            raise SimError("k_v must be > 0")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def velocity_limits(self) -> np.ndarray:
        return np.array([j.max_velocity for j in self.joints])

    def reach(self) -> float:
        """Workspace bounding-sphere radius: sum of segment lengths."""
        total = sum(float(np.linalg.norm(j.offset)) for j in self.joints)
        return total + float(np.linalg.norm(self.tool_offset))

    def to_dict(self) -> dict:
        return {
            "joints": [
                {
                    "axis": j.axis.tolist(),
                    "offset": j.offset.tolist(),
                    "limits": list(j.limits),
                    "max_velocity": j.max_velocity,
                }
                for j in self.joints
            ],
            "tool_offset": self.tool_offset.tolist(),
            "home_q": self.home_q.tolist(),
            "k_v": self.k_v,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArmConfig":
        joints = [
            JointSpec(
                axis=np.asarray(j["axis"], dtype=float),
                offset=np.asarray(j["offset"], dtype=float),
                limits=(float(j["limits"][0]), float(j["limits"][1])),
                max_velocity=float(j["max_velocity"]),
            )
            for j in d["joints"]
        ]
        return ArmConfig(
            joints=joints,
            tool_offset=np.asarray(d["tool_offset"], dtype=float),
            home_q=np.asarray(d["home_q"], dtype=float),
            k_v=float(d.get("k_v", 5.0)),
        )

    def config_hash(self) -> str:
        return "sha256:" + hashlib.sha256(
            canonjson.dumps(self.to_dict()).encode()
        ).hexdigest()

    @staticmethod
    def default() -> "ArmConfig":
        text = resources.files("teleopforge.configs").joinpath("default_arm.json").read_text()
        return ArmConfig.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# State


@dataclass
class ArmState:
    q: np.ndarray
    qdot: np.ndarray
    gripper_closed: bool

    def copy(self) -> "ArmState":
        return ArmState(self.q.copy(), self.qdot.copy(), self.gripper_closed)


@dataclass
class ObjectState:
    id: str
    position: np.ndarray
    quaternion: np.ndarray
    attached: bool

    def copy(self) -> "ObjectState":
        return ObjectState(self.id, self.position.copy(), self.quaternion.copy(), self.attached)


@dataclass
class SimState:
    arm: ArmState
    objects: list[ObjectState]
    tick: int
    task_done: bool

    def copy(self) -> "SimState":
        return SimState(self.arm.copy(), [o.copy() for o in self.objects], self.tick, self.task_done)

    def attached_object(self) -> ObjectState | None:
        for o in self.objects:
            if o.attached:
                return o
        return None

    def object(self, object_id: str) -> ObjectState:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise SimError(f"no object {object_id!r} in state")

    def to_dict(self) -> dict:
        return {
            "arm": {
                "q": self.arm.q.tolist(),
                "qdot": self.arm.qdot.tolist(),
                "gripper_closed": self.arm.gripper_closed,
            },
            "objects": [
                {
                    "id": o.id,
                    "pos": o.position.tolist(),
                    "quat": o.quaternion.tolist(),
                    "attached": o.attached,
                }
                for o in self.objects
            ],
            "tick": self.tick,
            "task_done": self.task_done,
        }

    @staticmethod
    def from_dict(d: dict) -> "SimState":
        arm = ArmState(
            q=np.asarray(d["arm"]["q"], dtype=float),
            qdot=np.asarray(d["arm"]["qdot"], dtype=float),
            gripper_closed=bool(d["arm"]["gripper_closed"]),
        )
        objects = [
            ObjectState(
                id=str(o["id"]),
                position=np.asarray(o["pos"], dtype=float),
                quaternion=np.asarray(o["quat"], dtype=float),
                attached=bool(o["attached"]),
            )
            for o in d["objects"]
        ]
        return SimState(arm=arm, objects=objects, tick=int(d["tick"]), task_done=bool(d["task_done"]))

    def to_json(self) -> str:
        return canonjson.dumps(self.to_dict())

    @staticmethod
    def from_json(text: str) -> "SimState":
        return SimState.from_dict(json.loads(text))

    def equals_exact(self, other: "SimState") -> bool:
        return self.to_json() == other.to_json()


# ---------------------------------------------------------------------------
# Task description


@dataclass
class ObjectSpec:
    id: str
    position: np.ndarray
    quaternion: np.ndarray
    half_height: float = 0.02  # resting center height above its support


@dataclass
class TaskSpec:
    kind: str
    objects: list[ObjectSpec]
    success: dict  # kind-specific parameters, see check_success
    time_limit_s: float
    workspace_min: np.ndarray = field(default_factory=lambda: np.array([-0.8, -0.8, 0.0]))
    workspace_max: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.8, 1.2]))

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise SimError(f"unknown task kind {self.kind!r}")
        if self.time_limit_s <= 0.0:
            raise SimError("time limit must be > 0")
        self._validate_success()

    def _validate_success(self) -> None:
        if self.kind == "lifting":
            if float(self.success["lift_height"]) <= 0.0:
                raise SimError("lift_height must be > 0")
        elif self.kind == "picking":
            for oid, box in self.success["bins"].items():
                lo, hi = np.asarray(box["min"], float), np.asarray(box["max"], float)
                if np.any(lo >= hi):
                    raise SimError(f"empty bin box for {oid}")
        elif self.kind == "assembly":
            for oid, peg in self.success["pegs"].items():
                if float(peg["radial_tol"]) <= 0.0 or float(peg["top_z"]) <= 0.0:
                    raise SimError(f"empty peg region for {oid}")

    def object_spec(self, object_id: str) -> ObjectSpec:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise SimError(f"no object {object_id!r} in task")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "objects": [
                {
                    "id": o.id,
                    "pos": o.position.tolist(),
                    "quat": o.quaternion.tolist(),
                    "half_height": o.half_height,
                }
                for o in self.objects
            ],
            "success": self.success,
            "time_limit_s": self.time_limit_s,
            "workspace_min": self.workspace_min.tolist(),
            "workspace_max": self.workspace_max.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        objects = [
            ObjectSpec(
                id=str(o["id"]),
                position=np.asarray(o["pos"], dtype=float),
                quaternion=np.asarray(o["quat"], dtype=float),
                half_height=float(o.get("half_height", 0.02)),
            )
            for o in d["objects"]
        ]
        return TaskSpec(
            kind=str(d["kind"]),
            objects=objects,
            success=d["success"],
            time_limit_s=float(d["time_limit_s"]),
            workspace_min=np.asarray(d.get("workspace_min", [-0.8, -0.8, 0.0]), float),
            workspace_max=np.asarray(d.get("workspace_max", [0.8, 0.8, 1.2]), float),
        )

    @staticmethod
    def load(kind: str) -> "TaskSpec":
        """Load one of the built-in task layouts."""
        if kind not in TASK_KINDS:
            raise SimError(f"unknown task kind {kind!r}")
        text = resources.files("teleopforge.configs.tasks").joinpath(f"{kind}.json").read_text()
        return TaskSpec.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Kinematics


def _fk_tables(config: ArmConfig):
    """Per-config scalar tables for the hot kinematics path."""
    tab = getattr(config, "_fk_tab", None)
    if tab is None:
        axes = [(float(j.axis[0]), float(j.axis[1]), float(j.axis[2])) for j in config.joints]
        offsets = [(float(j.offset[0]), float(j.offset[1]), float(j.offset[2])) for j in config.joints]
        tool = (float(config.tool_offset[0]), float(config.tool_offset[1]), float(config.tool_offset[2]))
        tab = (axes, offsets, tool)
        config._fk_tab = tab
    return tab


def _joint_frames(config: ArmConfig, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, Pose]:
    """Per-joint world origins and rotation axes, plus the tool pose.

    Scalar quaternion chain: this sits inside every IK iteration and sim
    step, so it avoids small-array allocations entirely.
    """
    axes_t, offsets_t, tool = _fk_tables(config)
    n = len(axes_t)
    origins = np.empty((n, 3))
    axes_w = np.empty((n, 3))
    qw, qx, qy, qz = 1.0, 0.0, 0.0, 0.0
    px, py, pz = 0.0, 0.0, 0.0
    for i in range(n):
        ax, ay, az = axes_t[i]
        origins[i, 0] = px
        origins[i, 1] = py
        origins[i, 2] = pz
        # world axis = R(q) @ local axis
        uxv_x = qy * az - qz * ay
        uxv_y = qz * ax - qx * az
        uxv_z = qx * ay - qy * ax
        axes_w[i, 0] = ax + 2.0 * (qw * uxv_x + qy * uxv_z - qz * uxv_y)
        axes_w[i, 1] = ay + 2.0 * (qw * uxv_y + qz * uxv_x - qx * uxv_z)
        axes_w[i, 2] = az + 2.0 * (qw * uxv_z + qx * uxv_y - qy * uxv_x)
        # q <- q * from_axis_angle(axis, q_i)
        half = 0.5 * float(q[i])
        c = math.cos(half)
        s = math.sin(half)
        bw, bx, by, bz = c, s * ax, s * ay, s * az
        qw, qx, qy, qz = (
            qw * bw - qx * bx - qy * by - qz * bz,
            qw * bx + qx * bw + qy * bz - qz * by,
            qw * by - qx * bz + qy * bw + qz * bx,
            qw * bz + qx * by - qy * bx + qz * bw,
        )
        # p += R(q) @ offset
        ox, oy, oz = offsets_t[i]
        uxv_x = qy * oz - qz * oy
        uxv_y = qz * ox - qx * oz
        uxv_z = qx * oy - qy * ox
        px += ox + 2.0 * (qw * uxv_x + qy * uxv_z - qz * uxv_y)
        py += oy + 2.0 * (qw * uxv_y + qz * uxv_x - qx * uxv_z)
        pz += oz + 2.0 * (qw * uxv_z + qx * uxv_y - qy * uxv_x)
    tx, ty, tz = tool
    uxv_x = qy * tz - qz * ty
    uxv_y = qz * tx - qx * tz
    uxv_z = qx * ty - qy * tx
    px += tx + 2.0 * (qw * uxv_x + qy * uxv_z - qz * uxv_y)
    py += ty + 2.0 * (qw * uxv_y + qz * uxv_x - qx * uxv_z)
    pz += tz + 2.0 * (qw * uxv_z + qx * uxv_y - qy * uxv_x)
    quat = quat_normalize(np.array([qw, qx, qy, qz]))
    return origins, axes_w, Pose(np.array([px, py, pz]), quat)


def forward_kinematics(config: ArmConfig, q: np.ndarray) -> Pose:
    """Tool pose for joint positions q."""
    q = np.asarray(q, dtype=float)
    if q.shape != (config.n_joints,):
        raise SimError(f"expected {config.n_joints} joint positions, got shape {q.shape}")
    return _joint_frames(config, q)[2]


def jacobian(config: ArmConfig, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows are [linear velocity; angular velocity]."""
    origins, axes, ee = _joint_frames(config, np.asarray(q, dtype=float))
    J = np.empty((6, config.n_joints))
    J[:3] = np.cross(axes, ee.position - origins).T
    J[3:] = axes.T
    return J


@dataclass
class IKResult:
    q: np.ndarray
    converged: bool
    position_error: float
    orientation_error: float
    iterations: int


def solve_ik(
    config: ArmConfig,
    q_seed: np.ndarray,
    target: Pose,
    pos_tol: float = 1e-3,
    ori_tol: float = 1e-2,
    max_iters: int = 150,
    damping: float = 0.05,
    step_clamp: float = 0.2,
    position_only: bool = False,
) -> IKResult:
    """Damped least squares on the 6-D pose error twist.

    The error twist is clamped per iteration (0.15 m / 0.5 rad) so far
    targets descend stably, and a stalled descent restarts from a
    deterministic perturbation of the best configuration seen, so distant
    orientation targets escape local minima. Warm-started calls (target near
    FK(q_seed)) converge in a couple of iterations.

    Always returns a best-effort result; an unreachable target yields
    converged=False with the residual errors, never an exception. The result
    is a deterministic function of the inputs.
    """
    q = np.clip(np.asarray(q_seed, dtype=float), config.lower_limits(), config.upper_limits())
    if q.shape != (config.n_joints,):
        raise SimError(f"expected {config.n_joints} joint positions, got shape {q.shape}")
    lo, hi = config.lower_limits(), config.upper_limits()
    n = config.n_joints
    lam2 = damping * damping
    best_q, best_err = q.copy(), np.inf
    restart_rng = np.random.default_rng(0x5EED)  # fixed seed: solver stays deterministic
    history: list[float] = []
    restarts = 0
    iters = 0
    rows = 3 if position_only else 6
    while iters <= max_iters:
        origins, axes, ee = _joint_frames(config, q)
        dp, drot = pose_error(ee, target)
        pos_err = float(np.linalg.norm(dp))
        ori_err = float(np.linalg.norm(drot))
        if position_only:
            drot = np.zeros(3)
            ori_err = 0.0
        total = pos_err + 0.1 * ori_err
        if total < best_err:
            best_err, best_q = total, q.copy()
        if pos_err < pos_tol and ori_err < ori_tol:
            return IKResult(q, True, pos_err, ori_err, iters)
        if iters == max_iters:
            break
        history.append(total)
        if len(history) > 5 and history[-6] - total < 1e-4:
            restarts += 1
            if restarts % 2:
                q = np.clip(best_q + restart_rng.uniform(-0.7, 0.7, n), lo, hi)
            else:
                q = restart_rng.uniform(lo, hi)
            history.clear()
            iters += 1
            continue
        if pos_err > 0.15:
            dp = dp * (0.15 / pos_err)
        if ori_err > 0.5:
            drot = drot * (0.5 / ori_err)
        J = np.empty((6, n))
        J[:3] = np.cross(axes, ee.position - origins).T
        J[3:] = axes.T
        J = J[:rows]
        e = np.concatenate([dp, drot])[:rows]
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(rows), e)
        dq = np.clip(dq, -step_clamp, step_clamp)
        q = np.clip(q + dq, lo, hi)
        iters += 1
    # Non-converged: report the best configuration seen.
    origins, axes, ee = _joint_frames(config, best_q)
    dp, drot = pose_error(ee, target)
    return IKResult(best_q, False, float(np.linalg.norm(dp)), float(np.linalg.norm(drot)), iters)


# ---------------------------------------------------------------------------
# Success predicates


def check_success(state: SimState, task: TaskSpec) -> bool:
    """Pure success predicate of a state under a task."""
    if task.kind == "lifting":
        oid = task.success["object_id"]
        lift = float(task.success["lift_height"])
        obj = state.object(oid)
        z0 = float(task.object_spec(oid).position[2])
        return bool(obj.position[2] >= z0 + lift)
    if task.kind == "picking":
        for oid, box in task.success["bins"].items():
            obj = state.object(oid)
            lo = np.asarray(box["min"], float)
            hi = np.asarray(box["max"], float)
            inside = bool(np.all(obj.position >= lo) and np.all(obj.position <= hi))
            if not inside or obj.attached:
                return False
        return True
    if task.kind == "assembly":
        for oid, peg in task.success["pegs"].items():
            obj = state.object(oid)
            axis_xy = np.asarray(peg["xy"], float)
            radial = float(np.linalg.norm(obj.position[:2] - axis_xy))
            if radial > float(peg["radial_tol"]) or obj.position[2] >= float(peg["top_z"]):
                return False
        return True
    raise SimError(f"unknown task kind {task.kind!r}")


def object_success(state: SimState, task: TaskSpec, object_id: str) -> bool:
    """Per-object placement predicate (used for observations and timings)."""
    if task.kind == "lifting":
        return check_success(state, task) if object_id == task.success["object_id"] else False
    if task.kind == "picking":
        box = task.success["bins"][object_id]
        obj = state.object(object_id)
        lo, hi = np.asarray(box["min"], float), np.asarray(box["max"], float)
        return bool(np.all(obj.position >= lo) and np.all(obj.position <= hi)) and not obj.attached
    if task.kind == "assembly":
        peg = task.success["pegs"][object_id]
        obj = state.object(object_id)
        radial = float(np.linalg.norm(obj.position[:2] - np.asarray(peg["xy"], float)))
        return radial <= float(peg["radial_tol"]) and float(obj.position[2]) < float(peg["top_z"])
    raise SimError(f"unknown task kind {task.kind!r}")


# ---------------------------------------------------------------------------
# Stepping


@dataclass
class SimEvent:
    tick: int
    kind: str  # attach | detach | table_contact
    object_id: str = ""


def _support_height(task: TaskSpec, state: SimState, obj: ObjectState) -> float:
    """Resting center height for obj dropped at its current x, y."""
    half = task.object_spec(obj.id).half_height
    z = TABLE_Z + half
    for other in state.objects:
        if other.id == obj.id or other.attached:
            continue
        if float(np.linalg.norm(other.position[:2] - obj.position[:2])) <= STACK_RADIUS:
            other_half = task.object_spec(other.id).half_height
            top = float(other.position[2]) + other_half
            z = max(z, top + half)
    return z


def step(
    config: ArmConfig,
    task: TaskSpec,
    state: SimState,
    q_target: np.ndarray,
    gripper_cmd: bool,
    dt: float = DEFAULT_DT,
) -> tuple[SimState, list[SimEvent]]:
    """Advance one tick: velocity control toward q_target, then grasp logic.

    qdot = -k_v (q - q*), clamped to per-joint velocity limits, integrated
    with explicit Euler and clamped to position limits. Never raises on edge
    inputs: q_target is clamped into limits first.
    """
    if dt <= 0.0:
        raise SimError("dt must be > 0")
    q_target = np.asarray(q_target, dtype=float)
    if q_target.shape != state.arm.q.shape:
        raise SimError(f"q_target shape {q_target.shape} != state shape {state.arm.q.shape}")
    lo, hi = config.lower_limits(), config.upper_limits()
    q_target = np.clip(q_target, lo, hi)

    prev_ee = forward_kinematics(config, state.arm.q)
    new = state.copy()

    qdot = -config.k_v * (new.arm.q - q_target)
    vmax = config.velocity_limits()
    qdot = np.clip(qdot, -vmax, vmax)
    new.arm.q = np.clip(new.arm.q + qdot * dt, lo, hi)
    new.arm.qdot = qdot
    new.tick = state.tick + 1

    ee = forward_kinematics(config, new.arm.q)
    events: list[SimEvent] = []

    was_closed = state.arm.gripper_closed
    new.arm.gripper_closed = bool(gripper_cmd)

    if gripper_cmd and new.attached_object() is None:
        # Closed gripper binds the nearest free object in reach (level
        # semantics: fingers keep squeezing, so arriving at an object with
        # the gripper already commanded closed still grasps it).
        best = None
        best_d = GRASP_RADIUS
        for obj in new.objects:
            if obj.attached:
                continue
            d = float(np.linalg.norm(obj.position - ee.position))
            if d <= best_d:
                best, best_d = obj, d
        if best is not None:
            best.attached = True
            events.append(SimEvent(new.tick, "attach", best.id))
    elif not gripper_cmd and was_closed:
        held = new.attached_object()
        if held is not None:
            held.attached = False
            held.position = held.position.copy()
            held.position[2] = _support_height(task, new, held)
            events.append(SimEvent(new.tick, "detach", held.id))

    held = new.attached_object()
    if held is not None:
        # Rigid attachment: the object rides the tool frame exactly.
        held.position = ee.position.copy()
        held.quaternion = ee.quaternion.copy()

    if ee.position[2] < TABLE_Z and prev_ee.position[2] >= TABLE_Z:
        events.append(SimEvent(new.tick, "table_contact"))

    new.task_done = check_success(new, task)
    return new, events


def initial_state(config: ArmConfig, task: TaskSpec) -> SimState:
    """Reset state: arm at home, objects at their task layout poses."""
    n = config.n_joints
    arm = ArmState(
        q=np.clip(config.home_q.astype(float), config.lower_limits(), config.upper_limits()),
        qdot=np.zeros(n),
        gripper_closed=False,
    )
    objects = [
        ObjectState(
            id=o.id,
            position=o.position.astype(float).copy(),
            quaternion=quat_normalize(o.quaternion.astype(float)),
            attached=False,
        )
        for o in task.objects
    ]
    state = SimState(arm=arm, objects=objects, tick=0, task_done=False)
    state.task_done = check_success(state, task)
    return state


class Simulator:
    """One arm + one task + one mutable state; instances are independent."""

    def __init__(self, config: ArmConfig, task: TaskSpec, dt: float = DEFAULT_DT):
        self.config = config
        self.task = task
        self.dt = dt
        self.state = initial_state(config, task)

    def reset(self) -> SimState:
        self.state = initial_state(self.config, self.task)
        return self.state

    def restore(self, state: SimState) -> None:
        if state.arm.q.shape != (self.config.n_joints,):
            raise SimError("state does not match arm configuration")
        self.state = state.copy()

    def save(self) -> SimState:
        return self.state.copy()

    def ee_pose(self) -> Pose:
        return forward_kinematics(self.config, self.state.arm.q)

    def step(self, q_target: np.ndarray, gripper_cmd: bool) -> list[SimEvent]:
        self.state, events = step(self.config, self.task, self.state, q_target, gripper_cmd, self.dt)
        return events

    def success(self) -> bool:
        return check_success(self.state, self.task)
