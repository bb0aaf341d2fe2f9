"""Demo file round-trips, corruption handling, reset sampling, replay."""

import gzip

import numpy as np
import pytest

from teleopforge.demostore import (
    CorruptDemoError,
    DatasetIndex,
    DemoSummary,
    EmptyDatasetError,
    ResetSampler,
    read_demo,
    replay_demo,
    sample_reset_state,
    scan_dataset,
    write_demo,
)
from teleopforge.simcore import check_success


def records_equal(a, b) -> bool:
    if (
        a.user != b.user
        or a.arm_config_hash != b.arm_config_hash
        or a.dt != b.dt
        or a.success != b.success
        or a.completion_time != b.completion_time
        or a.started_at != b.started_at
        or a.ended_at != b.ended_at
        or a.task.to_dict() != b.task.to_dict()
        or a.initial_state.to_json() != b.initial_state.to_json()
        or len(a.ticks) != len(b.ticks)
    ):
        return False
    for ta, tb in zip(a.ticks, b.ticks):
        if ta.tick != tb.tick or ta.reward != tb.reward:
            return False
        if ta.state.to_json() != tb.state.to_json():
            return False
        if not np.array_equal(ta.q_target, tb.q_target):
            return False
        if (ta.command is None) != (tb.command is None):
            return False
        if ta.command is not None and ta.command.to_dict() != tb.command.to_dict():
            return False
        if [(e.tick, e.kind, e.object_id) for e in ta.events] != [
            (e.tick, e.kind, e.object_id) for e in tb.events
        ]:
            return False
    return True


class TestRoundTrip:
    def test_field_for_field_equality(self, lifting_demos, tmp_path):
        rec = lifting_demos[0]
        path = write_demo(rec, tmp_path)
        assert records_equal(read_demo(path), rec)

    def test_gzip_and_plain_parse_identically(self, lifting_demos, tmp_path):
        rec = lifting_demos[1]
        plain = read_demo(write_demo(rec, tmp_path, compress=False))
        packed = read_demo(write_demo(rec, tmp_path, compress=True))
        assert records_equal(plain, packed)

    def test_truncated_file_is_corrupt(self, lifting_demos, tmp_path):
        path = write_demo(lifting_demos[0], tmp_path)
        data = path.read_text().splitlines()
        path.write_text("\n".join(data[: len(data) // 2]) + "\n")
        with pytest.raises(CorruptDemoError) as err:
            read_demo(path)
        assert str(path) in str(err.value)

    def test_scan_skips_corrupt_with_warning(self, lifting_demos, tmp_path, caplog):
        good = write_demo(lifting_demos[0], tmp_path)
        bad = write_demo(lifting_demos[1], tmp_path)
        bad.write_text(bad.read_text()[: 200])
        with caplog.at_level("WARNING"):
            index = scan_dataset(tmp_path)
        assert len(index.rows) == 1
        assert index.rows[0].path == good
        assert index.skipped == [bad]
        assert any("skipping" in r.message for r in caplog.records)

    def test_mangled_gzip_is_corrupt(self, lifting_demos, tmp_path):
        path = write_demo(lifting_demos[0], tmp_path, compress=True)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CorruptDemoError):
            read_demo(path)


class TestIndex:
    def test_rows_match_files_and_aggregates_recompute(self, lifting_dataset_dir):
        index = scan_dataset(lifting_dataset_dir)
        assert len(index.rows) == 5
        assert index.n_success == sum(1 for r in index.rows if r.success)
        times = index.completion_times_by("task")["lifting"]
        recomputed = [
            read_demo(r.path).completion_time for r in index.rows if r.success
        ]
        assert sorted(times) == sorted(recomputed)


class TestResetSampling:
    def test_degenerate_singleton(self, lifting_dataset_dir):
        index = scan_dataset(lifting_dataset_dir)
        solo = DatasetIndex(rows=index.rows[:1], skipped=[])
        sampler = ResetSampler(solo)
        states = read_demo(index.rows[0].path).states()
        texts = {s.to_json() for s in states}
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert sampler.sample(rng).to_json() in texts

    def test_uniform_over_demos(self, tmp_path, lifting_demos):
        # ten equal-length records whose states are tagged by q[0]:
        # per-demo draw frequency must be 0.1 +- 0.01 over 10k samples
        import copy

        base = lifting_demos[0]
        rec_dir = tmp_path / "ten"
        for i in range(10):
            tagged = copy.deepcopy(base)
            tagged.user = f"u{i}"
            tagged.ticks = tagged.ticks[:1]
            tagged.completion_time = 0.0
            tagged.initial_state.arm.q[0] = 0.1 * i
            tagged.ticks[0].state.arm.q[0] = 0.1 * i
            write_demo(tagged, rec_dir)
        index = scan_dataset(rec_dir)
        sampler = ResetSampler(index)
        rng = np.random.default_rng(42)
        counts = [0] * 10
        draws = 10_000
        for _ in range(draws):
            state = sampler.sample(rng)
            counts[round(state.arm.q[0] / 0.1)] += 1
        for i, c in enumerate(counts):
            assert abs(c / draws - 0.1) <= 0.01, (i, c)

    def test_empty_dataset_error(self, tmp_path):
        index = scan_dataset(tmp_path)
        with pytest.raises(EmptyDatasetError):
            sample_reset_state(index, np.random.default_rng(0))

    def test_sampled_states_are_restorable(self, lifting_dataset_dir, arm_config, lifting_task):
        from teleopforge.simcore import Simulator

        index = scan_dataset(lifting_dataset_dir)
        sampler = ResetSampler(index, task="lifting")
        rng = np.random.default_rng(1)
        sim = Simulator(arm_config, lifting_task)
        for _ in range(25):
            state = sampler.sample(rng)
            sim.restore(state)
            assert sim.state.to_json() == state.to_json()
            sim.step(sim.state.arm.q, sim.state.arm.gripper_closed)  # steppable


class TestReplay:
    def test_replay_reproduces_final_state(self, lifting_demos, arm_config):
        for rec in lifting_demos:
            final = replay_demo(rec, arm_config)
            recorded = rec.final_state()
            assert np.max(np.abs(final.arm.q - recorded.arm.q)) < 1e-9
            for o_new, o_rec in zip(final.objects, recorded.objects):
                assert np.max(np.abs(o_new.position - o_rec.position)) < 1e-9
            assert final.task_done == recorded.task_done
            assert check_success(final, rec.task)

    def test_replay_rejects_wrong_arm(self, lifting_demos, arm_config):
        import dataclasses

        rec = dataclasses.replace(lifting_demos[0], arm_config_hash="sha256:deadbeef")
        with pytest.raises(ValueError, match="hash mismatch"):
            replay_demo(rec, arm_config)
