"""Clipped-surrogate PPO with GAE over the arm task environment.

Actors each own a private simulator and RNG stream; rollouts are gathered
round-robin (deterministic given the seed), advantages use generalized
advantage estimation with episode ends treated as true terminals, and the
policy/value networks update synchronously per iteration with Adam on
hand-derived gradients.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..demostore import ResetSampler
from ..simcore import ArmConfig, TaskSpec
from .env import ArmTaskEnv
from .nets import MLP, Adam, GaussianPolicy


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    demo_reset_prob: float = 0.9
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    actors: int = 8
    episodes_per_actor: int = 4  # per update iteration
    epochs: int = 6
    minibatch: int = 256
    policy_lr: float = 1e-3
    value_lr: float = 3e-3
    entropy_coef: float = 0.01
    hidden: tuple = (64, 64)
    horizon: int = 100
    init_log_std: float = -0.5
    min_log_std: float = -1.6  # exploration floor
    seed: int = 0
    eval_episodes: int = 100

    def __post_init__(self):
        if not 0.0 <= self.demo_reset_prob <= 1.0:
            raise ValueError("demo_reset_prob must be in [0, 1]")
        for name in ("gamma", "gae_lambda", "clip_eps", "policy_lr", "value_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# Advantage estimation


def compute_gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float, last_value: float = 0.0):
    """(advantages, returns) for one episode.

    last_value bootstraps past the final step: pass V(s_T) when the episode
    was cut by the training horizon (the task itself does not end there), or
    0.0 for a true terminal.
    """
    T = len(rewards)
    adv = np.zeros(T)
    running = 0.0
    for t in reversed(range(T)):
        v_next = values[t + 1] if t + 1 < T else last_value
        delta = rewards[t] + gamma * v_next - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + values[:T]


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in reversed(range(len(rewards))):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# ---------------------------------------------------------------------------
# Losses with exact gradients


def surrogate_loss_and_grads(
    policy: GaussianPolicy,
    obs: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    clip_eps: float,
    entropy_coef: float = 0.0,
):
    """Clipped PPO objective; returns (loss, grads aligned with policy.param_arrays())."""
    n = obs.shape[0]
    logp, cache = policy.log_prob(obs, actions)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    loss = -float(np.mean(np.minimum(surr1, surr2))) - entropy_coef * policy.entropy()

    # d(-min)/d ratio: unclipped branch when surr1 <= surr2, else the clip
    # gate (zero outside the clip interval); d ratio/d logp = ratio.
    take_first = surr1 <= surr2
    inside = (ratio > 1.0 - clip_eps) & (ratio < 1.0 + clip_eps)
    dsurr_dratio = np.where(take_first, advantages, advantages * inside)
    dlogp = -(dsurr_dratio * ratio) / n
    dw, db, dlog_std = policy.log_prob_backward(cache, dlogp)
    dlog_std = dlog_std - entropy_coef  # dH/dlog_std = 1 per dim
    return loss, dw + db + [dlog_std]


def value_loss_and_grads(value_net: MLP, obs: np.ndarray, returns: np.ndarray):
    """Mean squared error; returns (loss, grads aligned with weights+biases)."""
    n = obs.shape[0]
    pred, acts = value_net.forward(obs)
    err = pred[:, 0] - returns
    loss = float(np.mean(err**2))
    dw, db, _ = value_net.backward(acts, (2.0 / n) * err[:, None])
    return loss, dw + db


# ---------------------------------------------------------------------------
# Rollouts


def _preflight_restore_check(env: ArmTaskEnv, sampler: ResetSampler, rng: np.random.Generator, n: int = 5):
    """Demo states must restore exactly before training starts."""
    for _ in range(n):
        state = sampler.sample(rng)
        env.reset_from(state)
        if env.sim.state.to_json() != state.to_json():
            raise ValueError("demo reset state failed the restore-fidelity check")
    env.reset()


def reset_env(env: ArmTaskEnv, sampler: ResetSampler | None, rng: np.random.Generator, demo_reset_prob: float):
    """Demo-state reset with the configured probability, else the default layout.

    Returns (obs, from_demo flag). An empty/missing dataset always falls back
    to the default reset.
    """
    if sampler is not None and len(sampler) > 0 and rng.random() < demo_reset_prob:
        return env.reset_from(sampler.sample(rng)), True
    return env.reset(), False


@dataclass
class Rollout:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    episode_returns: list[float]
    successes: int
    demo_resets: int
    episodes: int


def collect_rollout(
    policy: GaussianPolicy,
    value_net: MLP,
    envs: list[ArmTaskEnv],
    rngs: list[np.random.Generator],
    sampler: ResetSampler | None,
    cfg: TrainConfig,
) -> Rollout:
    all_obs, all_act, all_logp, all_adv, all_ret = [], [], [], [], []
    ep_returns: list[float] = []
    successes = 0
    demo_resets = 0
    episodes = 0
    for env, rng in zip(envs, rngs):
        for _ in range(cfg.episodes_per_actor):
            obs, from_demo = reset_env(env, sampler, rng, cfg.demo_reset_prob)
            demo_resets += from_demo
            episodes += 1
            o_buf, a_buf, lp_buf, r_buf = [], [], [], []
            done = False
            while not done:
                action, logp = policy.act(obs, rng)
                o_buf.append(obs)
                a_buf.append(action)
                lp_buf.append(logp)
                obs, reward, done, _ = env.step(action)
                r_buf.append(reward)
            o_arr = np.asarray(o_buf)
            r_arr = np.asarray(r_buf)
            v_arr = value_net(policy.obs_norm.apply(o_arr))[:, 0]
            # horizon cuts are truncations, not terminals: bootstrap V(s_T)
            v_last = float(value_net(policy.obs_norm.apply(obs[None, :]))[0, 0])
            adv, ret = compute_gae(r_arr, v_arr, cfg.gamma, cfg.gae_lambda, last_value=v_last)
            all_obs.append(o_arr)
            all_act.append(np.asarray(a_buf))
            all_logp.append(np.asarray(lp_buf))
            all_adv.append(adv)
            all_ret.append(ret)
            ep_returns.append(float(r_arr.sum()))
            successes += bool(r_arr.sum() > 0.0)
    return Rollout(
        obs=np.concatenate(all_obs),
        actions=np.concatenate(all_act),
        logp=np.concatenate(all_logp),
        advantages=np.concatenate(all_adv),
        returns=np.concatenate(all_ret),
        episode_returns=ep_returns,
        successes=successes,
        demo_resets=demo_resets,
        episodes=episodes,
    )


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_net: MLP
    curve: list[dict]  # per-iteration {steps, mean_return, success_rate, ...}
    final_success_rate: float
    env_steps: int
    wall_seconds: float
    demo_reset_fraction: float


def train_ppo(
    config: ArmConfig,
    task: TaskSpec,
    cfg: TrainConfig,
    sampler: ResetSampler | None,
    budget_steps: int,
    log=None,
) -> TrainResult:
    """Run PPO for a budget of environment steps; evaluates greedily at the end."""
    rng = np.random.default_rng(cfg.seed)
    envs = [
        ArmTaskEnv(config, task, horizon=cfg.horizon, seed=int(rng.integers(2**63)))
        for _ in range(cfg.actors)
    ]
    rngs = [np.random.default_rng(rng.integers(2**63)) for _ in range(cfg.actors)]
    if sampler is not None:
        _preflight_restore_check(envs[0], sampler, np.random.default_rng(cfg.seed))
    obs_dim, act_dim = envs[0].obs_dim, envs[0].action_dim
    policy = GaussianPolicy(obs_dim, act_dim, list(cfg.hidden), rng, init_log_std=cfg.init_log_std)
    value_net = MLP([obs_dim] + list(cfg.hidden) + [1], rng, out_scale=0.01)
    pol_opt = Adam(policy.param_arrays(), lr=cfg.policy_lr)
    val_opt = Adam(value_net.weights + value_net.biases, lr=cfg.value_lr)

    curve: list[dict] = []
    steps = 0
    total_episodes = 0
    total_demo_resets = 0
    t0 = time.time()
    iteration = 0
    while steps < budget_steps:
        roll = collect_rollout(policy, value_net, envs, rngs, sampler, cfg)
        steps += len(roll.obs)
        total_episodes += roll.episodes
        total_demo_resets += roll.demo_resets
        adv = roll.advantages
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        norm_obs = policy.obs_norm.apply(roll.obs)

        n = len(roll.obs)
        last_pol_loss = last_val_loss = 0.0
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                idx = order[start : start + cfg.minibatch]
                pol_loss, pol_grads = surrogate_loss_and_grads(
                    policy, roll.obs[idx], roll.actions[idx], roll.logp[idx], adv[idx],
                    cfg.clip_eps, cfg.entropy_coef,
                )
                val_loss, val_grads = value_loss_and_grads(value_net, norm_obs[idx], roll.returns[idx])
                if not (math.isfinite(pol_loss) and math.isfinite(val_loss)):
                    raise TrainingDiverged(
                        f"non-finite loss at step {steps}: policy={pol_loss}, value={val_loss}, "
                        f"log_std={policy.log_std.tolist()}"
                    )
                pol_opt.step(pol_grads)
                val_opt.step(val_grads)
                np.clip(policy.log_std, cfg.min_log_std, 1.0, out=policy.log_std)
                last_pol_loss, last_val_loss = pol_loss, val_loss

        policy.obs_norm.update(roll.obs)  # stats advance between iterations
        iteration += 1
        point = {
            "iteration": iteration,
            "steps": steps,
            "mean_return": float(np.mean(roll.episode_returns)),
            "success_rate": roll.successes / roll.episodes,
            "policy_loss": last_pol_loss,
            "value_loss": last_val_loss,
            "log_std_mean": float(np.mean(policy.log_std)),
        }
        curve.append(point)
        if log:
            log(point)

    # fixed eval seed: every run is scored on the same scene sequence
    eval_env = ArmTaskEnv(config, task, horizon=cfg.horizon, seed=424242)
    final = evaluate_policy(policy, eval_env, cfg.eval_episodes)
    return TrainResult(
        policy=policy,
        value_net=value_net,
        curve=curve,
        final_success_rate=final,
        env_steps=steps,
        wall_seconds=time.time() - t0,
        demo_reset_fraction=total_demo_resets / max(1, total_episodes),
    )


def evaluate_policy(policy: GaussianPolicy, env: ArmTaskEnv, episodes: int) -> float:
    """Greedy (mean-action) success rate from default resets.

    An episode counts as a success if the task predicate held at any step.
    """
    wins = 0
    for _ in range(episodes):
        obs = env.reset()
        done = False
        got = 0.0
        while not done:
            obs, reward, done, _ = env.step(policy.mean_action(obs))
            got += reward
        wins += got > 0.0
    return wins / episodes
