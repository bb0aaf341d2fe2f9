"""Behavior cloning and nearest-neighbor baselines."""

import numpy as np
import pytest

from teleopforge.learn.baselines import (
    BCPolicy,
    NearestNeighborPolicy,
    bc_train,
    demo_pairs,
)
from teleopforge.learn.env import ArmTaskEnv
from teleopforge.learn.ppo import evaluate_policy
from teleopforge.learn.scripted import scripted_demonstrator


class TestDemoPairs:
    def test_shapes_and_gripper_signs(self, lifting_demos, arm_config):
        obs, act = demo_pairs(lifting_demos, arm_config)
        assert obs.shape[1] == 15 and act.shape[1] == 4
        assert obs.shape[0] == act.shape[0] == sum(r.n_ticks for r in lifting_demos)
        assert set(np.unique(act[:, 3])) <= {-1.0, 1.0}

    def test_translation_actions_bounded(self, lifting_demos, arm_config):
        _, act = demo_pairs(lifting_demos, arm_config)
        assert np.max(np.abs(act[:, :3])) <= 1.0 + 1e-9

    def test_empty_set_rejected(self, arm_config):
        with pytest.raises(ValueError):
            demo_pairs([], arm_config)


class TestNearestNeighbor:
    def test_reproduces_own_demo_from_start_state(self, arm_config, lifting_task):
        rec = scripted_demonstrator(lifting_task, 0.0, seed=0, config=arm_config)
        policy = NearestNeighborPolicy.fit([rec], arm_config)
        env = ArmTaskEnv(arm_config, lifting_task)
        obs = env.reset_from(rec.initial_state)
        for tick in rec.ticks:
            a = policy.mean_action(obs)
            obs, _, _, _ = env.step(a)
            assert np.max(np.abs(env.sim.state.arm.q - tick.state.arm.q)) < 1e-6
        assert env.sim.state.task_done

    def test_round_trip(self, lifting_demos, arm_config):
        policy = NearestNeighborPolicy.fit(lifting_demos[:2], arm_config)
        clone = NearestNeighborPolicy.from_dict(policy.to_dict())
        rng = np.random.default_rng(0)
        for _ in range(10):
            obs = rng.normal(size=15)
            np.testing.assert_array_equal(policy.mean_action(obs), clone.mean_action(obs))


@pytest.fixture(scope="module")
def noiseless_demos(arm_config, lifting_task):
    return [scripted_demonstrator(lifting_task, 0.0, seed=s, config=arm_config) for s in range(100)]


class TestBehaviorCloning:
    def test_loss_strictly_decreases_first_ten_epochs(self, noiseless_demos, arm_config):
        _, curve = bc_train(noiseless_demos, arm_config, epochs=10, seed=0)
        assert all(a > b for a, b in zip(curve, curve[1:])), curve

    def test_bc_and_np_success_reported(self, noiseless_demos, arm_config, lifting_task):
        bc, _ = bc_train(noiseless_demos, arm_config, epochs=30, seed=0)
        np_policy = NearestNeighborPolicy.fit(noiseless_demos[:20], arm_config)
        env = ArmTaskEnv(arm_config, lifting_task, seed=424242)
        for policy in (bc, np_policy):
            rate = evaluate_policy(policy, env, episodes=10)
            assert 0.0 <= rate <= 1.0

    def test_policy_round_trip(self, noiseless_demos, arm_config):
        bc, _ = bc_train(noiseless_demos[:5], arm_config, epochs=3, seed=0)
        clone = BCPolicy.from_dict(bc.to_dict())
        obs = np.random.default_rng(1).normal(size=15)
        np.testing.assert_array_equal(bc.mean_action(obs), clone.mean_action(obs))
