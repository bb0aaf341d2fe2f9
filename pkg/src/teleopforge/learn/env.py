"""Policy-facing environment view over the simulator.

Observation (15 dims for the default 7-joint arm):
    [q (n), tool position (3), focus-object position relative to tool (3),
     gripper flag (1), attached flag (1)]

Action (4 dims): [dx, dy, dz, gripper]. The translation components are
clipped to [-1, 1] and scaled by 0.02 m per step; they displace a persistent
leading target that the joint velocity controller chases through IK, the
same way an operator's clutched controller leads the arm. The target is kept
within LEAD_LIMIT of the tool so the arm never builds up unbounded lag.
gripper > 0 commands the gripper closed.

Reward is sparse: 1.0 for every step in which the task success predicate
holds. Episodes run a fixed horizon (default 100 steps).
"""

from __future__ import annotations

import numpy as np

from ..geometry import Pose
from ..simcore import (
    ArmConfig,
    SimState,
    Simulator,
    TaskSpec,
    forward_kinematics,
    object_success,
    solve_ik,
)

STEP_SCALE = 0.02  # meters of target displacement per unit action
LEAD_LIMIT = 0.08  # max distance the leading target may run ahead of the tool
DEFAULT_HORIZON = 100


class ArmTaskEnv:
    """One arm + one task with delta-position control and sparse reward."""

    def __init__(
        self,
        config: ArmConfig,
        task: TaskSpec,
        horizon: int = DEFAULT_HORIZON,
        dt: float = 0.02,
        ik_iters: int = 15,
        reset_jitter: float = 0.02,
        seed: int = 0,
    ):
        self.config = config
        self.task = task
        self.horizon = horizon
        self.ik_iters = ik_iters
        self.sim = Simulator(config, task, dt=dt)
        self.hold_quaternion = forward_kinematics(config, config.home_q).quaternion
        self.obs_dim = config.n_joints + 8
        self.action_dim = 4
        self.reset_jitter = reset_jitter
        self.reset_rng = np.random.default_rng(seed)
        self.target_pos = self.sim.ee_pose().position.copy()
        self.steps = 0
        self.episode_return = 0.0

    # -- resets ------------------------------------------------------------

    def reset(self) -> np.ndarray:
        """Default reset: task layout with seeded x/y object jitter.

        The jitter lives in the env, not the simulator, so sim stepping and
        snapshot restore stay bit-deterministic.
        """
        self.sim.reset()
        if self.reset_jitter > 0.0:
            for obj in self.sim.state.objects:
                obj.position[:2] += self.reset_rng.uniform(-self.reset_jitter, self.reset_jitter, 2)
        return self._begin_episode()

    def reset_from(self, state: SimState) -> np.ndarray:
        self.sim.restore(state)
        return self._begin_episode()

    def _begin_episode(self) -> np.ndarray:
        self.target_pos = self.sim.ee_pose().position.copy()
        self.steps = 0
        self.episode_return = 0.0
        return self.observe()

    # -- stepping ----------------------------------------------------------

    def apply_target_delta(self, delta: np.ndarray) -> np.ndarray:
        """Move the leading target; returns the post-clamp target position."""
        ee = self.sim.ee_pose().position
        t = self.target_pos + delta
        t = np.clip(t, self.task.workspace_min, self.task.workspace_max)
        lead = t - ee
        dist = float(np.linalg.norm(lead))
        if dist > LEAD_LIMIT:
            t = ee + lead * (LEAD_LIMIT / dist)
        self.target_pos = t
        return t

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict]:
        action = np.asarray(action, dtype=float)
        delta = np.clip(action[:3], -1.0, 1.0) * STEP_SCALE
        gripper = bool(action[3] > 0.0)
        self.apply_target_delta(delta)
        ik = solve_ik(
            self.config,
            self.sim.state.arm.q,
            Pose(self.target_pos, self.hold_quaternion),
            max_iters=self.ik_iters,
        )
        events = self.sim.step(ik.q, gripper)
        self.steps += 1
        reward = 1.0 if self.sim.success() else 0.0
        self.episode_return += reward
        done = self.steps >= self.horizon
        info = {"events": events, "q_target": ik.q, "target_pos": self.target_pos.copy(), "gripper": gripper}
        return self.observe(), reward, done, info

    # -- observations --------------------------------------------------------

    def focus_object(self) -> str:
        return focus_object(self.config, self.task, self.sim.state)

    def observe(self) -> np.ndarray:
        return observation(self.config, self.task, self.sim.state)


def focus_object(config: ArmConfig, task: TaskSpec, state: SimState) -> str:
    """First object not yet placed; keeps the observation layout fixed."""
    for spec in task.objects:
        if not object_success(state, task, spec.id):
            return spec.id
    return task.objects[-1].id


def observation(config: ArmConfig, task: TaskSpec, state: SimState) -> np.ndarray:
    """Policy observation vector for an arbitrary simulator state."""
    ee = forward_kinematics(config, state.arm.q).position
    obj = state.object(focus_object(config, task, state))
    return np.concatenate(
        [
            state.arm.q,
            ee,
            obj.position - ee,
            [1.0 if state.arm.gripper_closed else 0.0],
            [1.0 if obj.attached else 0.0],
        ]
    )
