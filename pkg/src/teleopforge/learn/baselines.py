"""Imitation baselines: behavior cloning and nearest-neighbor playback.

Both consume (observation, action) pairs reconstructed from stored
demonstrations: observations come from the recorded states, translation
actions from consecutive leading-target (command) position deltas, and the
gripper scalar from the recorded command flag.
"""

from __future__ import annotations

import numpy as np

from ..episode import EpisodeRecord
from ..simcore import ArmConfig, forward_kinematics
from .env import STEP_SCALE, observation
from .nets import MLP, Adam, Normalizer


def demo_pairs(records: list[EpisodeRecord], config: ArmConfig):
    """(obs, action) training arrays from demonstration records."""
    if not records:
        raise ValueError("empty demonstration set")
    all_obs, all_act = [], []
    for rec in records:
        states = rec.states()
        prev_target = forward_kinematics(config, rec.initial_state.arm.q).position
        for i, tick in enumerate(rec.ticks):
            if tick.command is None:
                continue
            delta = (tick.command.position - prev_target) / STEP_SCALE
            action = np.concatenate([delta, [1.0 if tick.command.gripper else -1.0]])
            all_obs.append(observation(config, rec.task, states[i]))
            all_act.append(action)
            prev_target = tick.command.position
    return np.asarray(all_obs), np.asarray(all_act)


class BCPolicy:
    """MLP action regressor; exposes mean_action like the RL policy."""

    def __init__(self, mlp: MLP, obs_norm: Normalizer):
        self.mlp = mlp
        self.obs_norm = obs_norm

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp(self.obs_norm.apply(obs)[None, :])[0]

    def to_dict(self) -> dict:
        return {"format": 1, "kind": "bc-mlp", "mlp": self.mlp.to_dict(), "obs_norm": self.obs_norm.to_dict()}

    @staticmethod
    def from_dict(d: dict) -> "BCPolicy":
        if d.get("kind") != "bc-mlp":
            raise ValueError(f"not a bc-mlp policy file: {d.get('kind')!r}")
        return BCPolicy(MLP.from_dict(d["mlp"]), Normalizer.from_dict(d["obs_norm"]))


def bc_train(
    records: list[EpisodeRecord],
    config: ArmConfig,
    hidden=(64, 64),
    epochs: int = 60,
    batch: int = 256,
    lr: float = 1e-3,
    seed: int = 0,
):
    """Least-squares behavior cloning; returns (policy, per-epoch loss curve)."""
    obs, actions = demo_pairs(records, config)
    rng = np.random.default_rng(seed)
    norm = Normalizer(obs.shape[1])
    norm.update(obs)
    x = norm.apply(obs)
    mlp = MLP([obs.shape[1]] + list(hidden) + [actions.shape[1]], rng, out_scale=0.1)
    opt = Adam(mlp.weights + mlp.biases, lr=lr)
    n = len(x)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            pred, acts = mlp.forward(x[idx])
            err = pred - actions[idx]
            loss = float(np.mean(err**2))
            dw, db, _ = mlp.backward(acts, (2.0 / err.size) * err)
            opt.step(dw + db)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return BCPolicy(mlp, norm), curve


class NearestNeighborPolicy:
    """Replay the stored action of the Euclidean-nearest stored observation."""

    def __init__(self, obs: np.ndarray, actions: np.ndarray):
        if len(obs) == 0:
            raise ValueError("empty demonstration set")
        self.obs = np.asarray(obs, dtype=float)
        self.actions = np.asarray(actions, dtype=float)

    @staticmethod
    def fit(records: list[EpisodeRecord], config: ArmConfig) -> "NearestNeighborPolicy":
        return NearestNeighborPolicy(*demo_pairs(records, config))

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        d2 = np.sum((self.obs - obs) ** 2, axis=1)
        return self.actions[int(np.argmin(d2))]

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "kind": "nearest-neighbor",
            "obs": self.obs.tolist(),
            "actions": self.actions.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "NearestNeighborPolicy":
        if d.get("kind") != "nearest-neighbor":
            raise ValueError(f"not a nearest-neighbor policy file: {d.get('kind')!r}")
        return NearestNeighborPolicy(np.asarray(d["obs"], float), np.asarray(d["actions"], float))
