"""Scripted waypoint demonstrator: a stand-in for human operators.

Runs a simple phase machine per object (hover above it, descend, close the
gripper, carry to the goal, release) through the same leading-target action
interface policies use, and records a session-equivalent EpisodeRecord. Each
waypoint gets Gaussian jitter so different seeds produce distinct
trajectories, like different human operators would.
"""

from __future__ import annotations

import time

import numpy as np

from ..episode import EpisodeRecord, TickRecord, finalize_completion_time
from ..simcore import ArmConfig, TaskSpec, object_success
from ..transport import PoseCommand
from .env import STEP_SCALE, ArmTaskEnv

HOVER = 0.09  # approach height above a grasp point
SETTLE_TOL = 0.015  # tool-to-waypoint distance that counts as arrived
GRASP_TOL = 0.022  # tool-to-object distance required before closing


class DemoGenerationError(RuntimeError):
    pass


def _goal_for(task: TaskSpec, object_id: str) -> np.ndarray:
    """Where a grasped object should be carried before release."""
    if task.kind == "lifting":
        spec = task.object_spec(object_id)
        lift = float(task.success["lift_height"])
        return spec.position + np.array([0.0, 0.0, lift + 0.05])
    if task.kind == "picking":
        box = task.success["bins"][object_id]
        center = (np.asarray(box["min"], float) + np.asarray(box["max"], float)) / 2.0
        return np.array([center[0], center[1], 0.05])
    if task.kind == "assembly":
        peg = task.success["pegs"][object_id]
        return np.array([peg["xy"][0], peg["xy"][1], 0.06])
    raise DemoGenerationError(f"unsupported task kind {task.kind!r}")


class WaypointPolicy:
    """Phase machine emitting env actions toward jittered waypoints."""

    def __init__(self, task: TaskSpec, noise_scale: float, rng: np.random.Generator):
        self.task = task
        self.noise = noise_scale
        self.rng = rng
        self.phase = "select"
        self.target_object: str | None = None
        self.waypoint = np.zeros(3)
        self.dwell = 0

    def _jitter(self, p: np.ndarray) -> np.ndarray:
        return p + self.rng.normal(0.0, self.noise, 3) if self.noise > 0 else p.copy()

    def act(self, env: ArmTaskEnv) -> np.ndarray:
        state = env.sim.state
        ee = env.sim.ee_pose().position
        gripper = 1.0 if state.arm.gripper_closed else -1.0

        if self.phase == "select":
            remaining = [o.id for o in self.task.objects if not object_success(state, self.task, o.id)]
            if not remaining:
                return np.array([0.0, 0.0, 0.0, gripper])
            self.target_object = remaining[0]
            obj = state.object(self.target_object)
            self.waypoint = self._jitter(obj.position + np.array([0.0, 0.0, HOVER]))
            self.phase = "approach"

        obj = state.object(self.target_object)

        if self.phase == "approach":
            if np.linalg.norm(ee - self.waypoint) < SETTLE_TOL:
                self.waypoint = self._jitter(obj.position)
                self.phase = "descend"
            gripper = -1.0
        elif self.phase == "descend":
            if np.linalg.norm(ee - obj.position) < GRASP_TOL:
                self.phase = "close"
                self.dwell = 3
            else:
                # re-aim at the object itself once close; jitter only guides the way in
                self.waypoint = obj.position.copy() if np.linalg.norm(ee - obj.position) < 0.05 else self.waypoint
            gripper = -1.0
        elif self.phase == "close":
            gripper = 1.0
            self.dwell -= 1
            if self.dwell <= 0:
                if obj.attached:
                    self.waypoint = self._jitter(_goal_for(self.task, self.target_object))
                    self.phase = "carry"
                else:
                    # missed grasp (jitter): retry from above
                    self.waypoint = self._jitter(obj.position + np.array([0.0, 0.0, HOVER]))
                    self.phase = "approach"
                    gripper = -1.0
        elif self.phase == "carry":
            gripper = 1.0
            if np.linalg.norm(ee - self.waypoint) < SETTLE_TOL:
                if self.task.kind == "lifting":
                    pass  # hold: success fires while lifted
                else:
                    self.phase = "release"
                    self.dwell = 3
        elif self.phase == "release":
            gripper = -1.0
            self.dwell -= 1
            if self.dwell <= 0:
                self.phase = "select"

        step_vec = np.clip((self.waypoint - env.target_pos) / STEP_SCALE, -1.0, 1.0)
        return np.concatenate([step_vec, [gripper]])


def scripted_demonstrator(
    task: TaskSpec,
    noise_scale: float,
    seed: int,
    config: ArmConfig | None = None,
    user: str = "scripted",
    dt: float = 0.02,
    hold_ticks: int = 40,
) -> EpisodeRecord:
    """Generate one demonstration episode; success is the actual task outcome.

    After the task predicate first fires the demonstrator keeps holding the
    goal pose for hold_ticks (an operator keeps the cube up while the system
    confirms), so the recorded trajectory covers the success region, not just
    its boundary.
    """
    config = config or ArmConfig.default()
    rng = np.random.default_rng(seed)
    env = ArmTaskEnv(config, task, horizon=10**9, dt=dt, seed=seed)
    env.reset()
    policy = WaypointPolicy(task, noise_scale, rng)
    max_ticks = int(task.time_limit_s / dt)
    started = time.time()

    ticks: list[TickRecord] = []
    initial_state = env.sim.save()
    success = False
    remaining_hold = hold_ticks
    for _ in range(max_ticks):
        action = policy.act(env)
        _, reward, _, info = env.step(action)
        tick = env.sim.state.tick
        cmd = PoseCommand(
            seq=tick,
            client_timestamp=int(tick * dt * 1000),
            position=info["target_pos"],
            orientation=env.hold_quaternion.copy(),
            gripper=info["gripper"],
            engaged=True,
        )
        ticks.append(
            TickRecord(
                tick=tick,
                state=env.sim.save(),
                command=cmd,
                q_target=info["q_target"],
                reward=reward,
                events=info["events"],
            )
        )
        if env.sim.state.task_done:
            success = True
            if remaining_hold <= 0:
                break
            remaining_hold -= 1

    return EpisodeRecord(
        task=task,
        user=user,
        arm_config_hash=config.config_hash(),
        dt=dt,
        initial_state=initial_state,
        ticks=ticks,
        success=success,
        completion_time=finalize_completion_time(ticks, dt) if success else None,
        started_at=started,
        ended_at=time.time(),
    )


def generate_dataset(
    task: TaskSpec,
    count: int,
    noise_scale: float,
    seed: int,
    directory,
    config: ArmConfig | None = None,
    compress: bool = False,
):
    """Write `count` successful demos (failed attempts are regenerated)."""
    from ..demostore import write_demo

    config = config or ArmConfig.default()
    paths = []
    attempt = 0
    while len(paths) < count:
        rec = scripted_demonstrator(task, noise_scale, seed + attempt, config=config)
        attempt += 1
        if attempt > 20 * count + 50:
            raise DemoGenerationError(f"cannot reach {count} successes after {attempt} attempts")
        if not rec.success:
            continue
        paths.append(write_demo(rec, directory, compress=compress))
    return paths
