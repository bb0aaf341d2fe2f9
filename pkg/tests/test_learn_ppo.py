"""PPO losses and gradients against independent oracles."""

import numpy as np
import pytest

from teleopforge.learn.nets import MLP, Adam, GaussianPolicy
from teleopforge.learn.ppo import (
    TrainConfig,
    compute_gae,
    discounted_returns,
    surrogate_loss_and_grads,
    value_loss_and_grads,
)


def make_batch(rng, n=48, obs_dim=15, act_dim=4):
    obs = rng.normal(size=(n, obs_dim))
    actions = rng.normal(size=(n, act_dim))
    advantages = rng.normal(size=n)
    return obs, actions, advantages


class TestSurrogateLoss:
    def test_ratio_one_gives_negative_mean_advantage(self):
        rng = np.random.default_rng(0)
        policy = GaussianPolicy(15, 4, [64, 64], rng)
        obs, actions, adv = make_batch(rng)
        logp_now, _ = policy.log_prob(obs, actions)
        loss, _ = surrogate_loss_and_grads(policy, obs, actions, logp_now, adv, 0.2, entropy_coef=0.0)
        assert loss == pytest.approx(-np.mean(adv), abs=1e-12)

    def test_loss_decreases_along_gradient(self):
        rng = np.random.default_rng(1)
        policy = GaussianPolicy(15, 4, [64, 64], rng)
        obs, actions, adv = make_batch(rng)
        logp_old = policy.log_prob(obs, actions)[0] + rng.normal(0, 0.05, len(obs))
        loss0, grads = surrogate_loss_and_grads(policy, obs, actions, logp_old, adv, 0.2)
        for p, g in zip(policy.param_arrays(), grads):
            p -= 1e-4 * g
        loss1, _ = surrogate_loss_and_grads(policy, obs, actions, logp_old, adv, 0.2)
        assert loss1 < loss0


class TestGradientCheck:
    def rel_err(self, a, b):
        return np.max(np.abs(a - b) / np.maximum(1e-6, np.maximum(np.abs(a), np.abs(b))))

    def test_policy_loss_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        policy = GaussianPolicy(15, 4, [64, 64], rng)
        obs, actions, adv = make_batch(rng, n=32)
        # generic evaluation point: ratios spread around 1, some clipped
        logp_old = policy.log_prob(obs, actions)[0] + rng.normal(0, 0.3, len(obs))

        def loss_at(flat):
            saved = policy.get_flat()
            policy.set_flat(flat)
            loss, _ = surrogate_loss_and_grads(policy, obs, actions, logp_old, adv, 0.2, entropy_coef=0.01)
            policy.set_flat(saved)
            return loss

        _, grads = surrogate_loss_and_grads(policy, obs, actions, logp_old, adv, 0.2, entropy_coef=0.01)
        analytic = np.concatenate(
            [g.ravel() for g in grads[: len(policy.mlp.weights)]]
            + [g.ravel() for g in grads[len(policy.mlp.weights) : -1]]
            + [grads[-1].ravel()]
        )
        flat = policy.get_flat()
        h = 1e-6
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            up = flat.copy()
            up[i] += h
            dn = flat.copy()
            dn[i] -= h
            fd[i] = (loss_at(up) - loss_at(dn)) / (2 * h)
        assert self.rel_err(analytic, fd) < 1e-4

    def test_value_loss_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        net = MLP([15, 32, 1], rng, out_scale=0.1)
        obs = rng.normal(size=(24, 15))
        returns = rng.normal(size=24)

        def loss_at(flat):
            saved = net.get_flat()
            net.set_flat(flat)
            loss, _ = value_loss_and_grads(net, obs, returns)
            net.set_flat(saved)
            return loss

        _, grads = value_loss_and_grads(net, obs, returns)
        analytic = np.concatenate([g.ravel() for g in grads])
        flat = net.get_flat()
        h = 1e-6
        fd = np.array([(loss_at(flat + h * e) - loss_at(flat - h * e)) / (2 * h)
                       for e in np.eye(flat.size)])
        assert self.rel_err(analytic, fd) < 1e-4


class TestGAE:
    def test_lambda_one_is_discounted_return_minus_baseline(self):
        rng = np.random.default_rng(3)
        rewards = rng.normal(size=100)
        values = rng.normal(size=100)
        gamma = 0.99
        adv, returns = compute_gae(rewards, values, gamma, lam=1.0)
        oracle = discounted_returns(rewards, gamma) - values
        assert np.max(np.abs(adv - oracle)) < 1e-10
        assert np.max(np.abs(returns - discounted_returns(rewards, gamma))) < 1e-10

    def test_lambda_zero_is_one_step_td(self):
        rng = np.random.default_rng(4)
        rewards = rng.normal(size=50)
        values = rng.normal(size=50)
        adv, _ = compute_gae(rewards, values, 0.99, lam=0.0)
        v_next = np.append(values[1:], 0.0)
        oracle = rewards + 0.99 * v_next - values
        assert np.max(np.abs(adv - oracle)) < 1e-12


class TestAdvantageNormalization:
    def test_greedy_argmax_unchanged(self):
        rng = np.random.default_rng(5)
        policy = GaussianPolicy(15, 4, [64, 64], rng)
        obs, actions, adv = make_batch(rng)
        before = policy.mean_action(obs[0])
        normalized = (adv - adv.mean()) / (adv.std() + 1e-8)
        surrogate_loss_and_grads(policy, obs, actions, policy.log_prob(obs, actions)[0], normalized, 0.2)
        after = policy.mean_action(obs[0])
        assert np.array_equal(before, after)

    def test_gradient_linear_in_positive_scale(self):
        rng = np.random.default_rng(6)
        policy = GaussianPolicy(15, 4, [64, 64], rng)
        obs, actions, adv = make_batch(rng)
        logp_old = policy.log_prob(obs, actions)[0] + rng.normal(0, 0.1, len(obs))
        _, g1 = surrogate_loss_and_grads(policy, obs, actions, logp_old, adv, 0.2)
        _, g3 = surrogate_loss_and_grads(policy, obs, actions, logp_old, 3.0 * adv, 0.2)
        for a, b in zip(g1, g3):
            np.testing.assert_allclose(3.0 * a, b, atol=1e-12)


class TestNets:
    def test_adam_reduces_quadratic(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=(5,))
        params = [p]
        opt = Adam(params, lr=0.05)
        for _ in range(300):
            opt.step([2.0 * params[0]])  # d/dp ||p||^2
        assert np.linalg.norm(params[0]) < 1e-2

    def test_policy_json_round_trip(self):
        rng = np.random.default_rng(9)
        policy = GaussianPolicy(15, 4, [64, 64], rng)
        clone = GaussianPolicy.from_dict(policy.to_dict())
        obs = rng.normal(size=15)
        np.testing.assert_array_equal(policy.mean_action(obs), clone.mean_action(obs))

    def test_flat_round_trip(self):
        rng = np.random.default_rng(10)
        policy = GaussianPolicy(15, 4, [32], rng)
        flat = policy.get_flat()
        policy.set_flat(np.zeros_like(flat))
        assert np.all(policy.mean_action(rng.normal(size=15)) == 0.0)
        policy.set_flat(flat)
        assert np.array_equal(policy.get_flat(), flat)


class TestTrainConfig:
    def test_defaults_match_published_settings(self):
        cfg = TrainConfig()
        assert cfg.demo_reset_prob == 0.9
        assert cfg.gamma == 0.99
        assert cfg.gae_lambda == 0.95
        assert cfg.clip_eps == 0.2
        assert cfg.horizon == 100

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(demo_reset_prob=1.5)
        with pytest.raises(ValueError):
            TrainConfig(gamma=-0.1)


class TestTrainingLoop:
    """Tiny-budget runs: determinism, divergence, return bounds, preflight."""

    def _sampler(self, dataset_dir):
        from teleopforge.demostore import ResetSampler, scan_dataset

        return ResetSampler(scan_dataset(dataset_dir), task="lifting")

    def test_episode_returns_bounded_by_horizon(self, arm_config, lifting_task, lifting_dataset_dir):
        from teleopforge.learn.ppo import TrainConfig, collect_rollout
        from teleopforge.learn.env import ArmTaskEnv
        from teleopforge.learn.nets import MLP, GaussianPolicy

        rng = np.random.default_rng(0)
        cfg = TrainConfig(actors=2, episodes_per_actor=2)
        envs = [ArmTaskEnv(arm_config, lifting_task, seed=i) for i in range(2)]
        rngs = [np.random.default_rng(i) for i in range(2)]
        policy = GaussianPolicy(15, 4, [32], rng)
        value = MLP([15, 32, 1], rng)
        roll = collect_rollout(policy, value, envs, rngs, self._sampler(lifting_dataset_dir), cfg)
        for ret in roll.episode_returns:
            assert 0.0 <= ret <= cfg.horizon

    def test_identical_seeds_give_identical_policies(self, arm_config, lifting_task, lifting_dataset_dir):
        from teleopforge.learn.ppo import TrainConfig, train_ppo

        results = []
        for _ in range(2):
            cfg = TrainConfig(seed=5, actors=2, episodes_per_actor=1, eval_episodes=3)
            res = train_ppo(arm_config, lifting_task, cfg, self._sampler(lifting_dataset_dir),
                            budget_steps=600)
            results.append(res)
        a, b = results
        assert np.array_equal(a.policy.get_flat(), b.policy.get_flat())
        assert a.final_success_rate == b.final_success_rate
        assert [c["mean_return"] for c in a.curve] == [c["mean_return"] for c in b.curve]

    def test_divergence_aborts_with_diagnostics(self, arm_config, lifting_task, monkeypatch):
        import teleopforge.learn.ppo as ppomod
        from teleopforge.learn.ppo import TrainConfig, TrainingDiverged, train_ppo

        real = ppomod.surrogate_loss_and_grads

        def poisoned(*args, **kwargs):
            _, grads = real(*args, **kwargs)
            return float("nan"), grads

        monkeypatch.setattr(ppomod, "surrogate_loss_and_grads", poisoned)
        cfg = TrainConfig(seed=0, actors=1, episodes_per_actor=1, eval_episodes=1)
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train_ppo(arm_config, lifting_task, cfg, None, budget_steps=200)

    def test_preflight_rejects_mismatched_states(self, arm_config, lifting_task, lifting_dataset_dir):
        from teleopforge.learn.env import ArmTaskEnv
        from teleopforge.learn.ppo import _preflight_restore_check

        sampler = self._sampler(lifting_dataset_dir)
        env = ArmTaskEnv(arm_config, lifting_task)
        _preflight_restore_check(env, sampler, np.random.default_rng(0))  # passes
