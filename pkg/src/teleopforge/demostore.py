"""Demonstration persistence: .djsonl files, dataset index, reset sampling.

A demo file is newline-delimited JSON, optionally gzip-compressed:

    {"kind": "header", "format_version": 1, "task": ..., "task_spec": {...},
     "user": ..., "arm_config_hash": ..., "dt": ..., "success": ...,
     "completion_time": ..., "started_at": ..., "ended_at": ...,
     "initial_state": {...}}
    {"kind": "tick", "tick": 1, "state": {...}, "command": {...} | null,
     "q_target": [...], "reward": ..., "events": [...]}
    ...
    {"kind": "footer", "ticks": N, "success": ...}

The footer terminates a complete file; a missing or inconsistent footer means
the writer died mid-episode and the file is treated as corrupt. Floats are
written at 17 significant digits so a read-back record is bit-identical.
"""

from __future__ import annotations

import gzip
import json
import logging
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import canonjson
from .episode import EpisodeRecord, TickRecord
from .simcore import ArmConfig, SimEvent, SimState, Simulator, TaskSpec
from .transport import PoseCommand

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CorruptDemoError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"corrupt demo file {path}: {reason}")
        self.path = Path(path)
        self.reason = reason


class EmptyDatasetError(ValueError):
    pass


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _event_dict(ev: SimEvent) -> dict:
    return {"tick": ev.tick, "kind": ev.kind, "object_id": ev.object_id}


def write_demo(record: EpisodeRecord, directory, compress: bool = False) -> Path:
    """Persist a finalized episode; returns the file path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = f"{record.task.kind}_{record.user}_{int(record.started_at * 1000)}_{uuid.uuid4().hex[:8]}"
    path = directory / (stem + (".djsonl.gz" if compress else ".djsonl"))
    header = {
        "kind": "header",
        "format_version": FORMAT_VERSION,
        "task": record.task.kind,
        "task_spec": record.task.to_dict(),
        "user": record.user,
        "arm_config_hash": record.arm_config_hash,
        "dt": record.dt,
        "success": record.success,
        "completion_time": record.completion_time,
        "started_at": record.started_at,
        "ended_at": record.ended_at,
        "initial_state": record.initial_state.to_dict(),
    }
    tmp = path.parent / (path.name + ".tmp")
    opener = (lambda p: gzip.open(p, "wt", encoding="utf-8")) if compress else (lambda p: open(p, "w", encoding="utf-8"))
    with opener(tmp) as f:
        f.write(canonjson.dumps(header) + "\n")
        for t in record.ticks:
            row = {
                "kind": "tick",
                "tick": t.tick,
                "state": t.state.to_dict(),
                "command": t.command.to_dict() if t.command is not None else None,
                "q_target": np.asarray(t.q_target, dtype=float).tolist(),
                "reward": float(t.reward),
                "events": [_event_dict(e) for e in t.events],
            }
            f.write(canonjson.dumps(row) + "\n")
        f.write(canonjson.dumps({"kind": "footer", "ticks": len(record.ticks), "success": record.success}) + "\n")
    tmp.rename(path)
    return path


def read_demo(path) -> EpisodeRecord:
    """Load a demo file; raises CorruptDemoError on truncation or bad structure."""
    path = Path(path)
    try:
        with _open_text(path, "r") as f:
            lines = f.read().splitlines()
    except (OSError, EOFError, gzip.BadGzipFile) as e:
        raise CorruptDemoError(path, f"unreadable: {e}") from e
    if not lines:
        raise CorruptDemoError(path, "empty file")
    try:
        rows = [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as e:
        raise CorruptDemoError(path, f"bad JSON: {e}") from e
    if not rows or rows[0].get("kind") != "header":
        raise CorruptDemoError(path, "missing header record")
    if rows[-1].get("kind") != "footer":
        raise CorruptDemoError(path, "missing footer record (truncated write)")
    header, footer, tick_rows = rows[0], rows[-1], rows[1:-1]
    if any(r.get("kind") != "tick" for r in tick_rows):
        raise CorruptDemoError(path, "unexpected record kind between header and footer")
    if footer.get("ticks") != len(tick_rows):
        raise CorruptDemoError(path, f"footer says {footer.get('ticks')} ticks, found {len(tick_rows)}")
    if header.get("format_version") != FORMAT_VERSION:
        raise CorruptDemoError(path, f"unsupported format version {header.get('format_version')}")

    ticks = []
    prev_tick = None
    for r in tick_rows:
        tick = int(r["tick"])
        if prev_tick is not None and tick <= prev_tick:
            raise CorruptDemoError(path, f"non-increasing tick {tick}")
        prev_tick = tick
        ticks.append(
            TickRecord(
                tick=tick,
                state=SimState.from_dict(r["state"]),
                command=PoseCommand.from_dict(r["command"]) if r["command"] is not None else None,
                q_target=np.asarray(r["q_target"], dtype=float),
                reward=float(r["reward"]),
                events=[SimEvent(int(e["tick"]), str(e["kind"]), str(e["object_id"])) for e in r["events"]],
            )
        )
    return EpisodeRecord(
        task=TaskSpec.from_dict(header["task_spec"]),
        user=str(header["user"]),
        arm_config_hash=str(header["arm_config_hash"]),
        dt=float(header["dt"]),
        initial_state=SimState.from_dict(header["initial_state"]),
        ticks=ticks,
        success=bool(header["success"]),
        completion_time=None if header["completion_time"] is None else float(header["completion_time"]),
        started_at=float(header["started_at"]),
        ended_at=float(header["ended_at"]),
    )


# ---------------------------------------------------------------------------
# Dataset index


@dataclass
class DemoSummary:
    path: Path
    task: str
    user: str
    success: bool
    completion_time: float | None
    ticks: int


@dataclass
class DatasetIndex:
    rows: list[DemoSummary]
    skipped: list[Path]  # corrupt files found during the scan

    def successful(self, task: str | None = None) -> list[DemoSummary]:
        return [
            r
            for r in self.rows
            if r.success and (task is None or r.task == task)
        ]

    def completion_times_by(self, key: str) -> dict[str, list[float]]:
        """Group successful completion times by 'task' or 'user'."""
        out: dict[str, list[float]] = {}
        for r in self.rows:
            if not r.success or r.completion_time is None:
                continue
            out.setdefault(getattr(r, key), []).append(r.completion_time)
        return out

    @property
    def n_success(self) -> int:
        return sum(1 for r in self.rows if r.success)


def scan_dataset(directory) -> DatasetIndex:
    """Index every demo file under directory; corrupt files are skipped with a warning."""
    directory = Path(directory)
    rows: list[DemoSummary] = []
    skipped: list[Path] = []
    paths = sorted(list(directory.glob("*.djsonl")) + list(directory.glob("*.djsonl.gz")))
    for path in paths:
        try:
            rec = read_demo(path)
        except CorruptDemoError as e:
            log.warning("skipping %s: %s", path, e.reason)
            skipped.append(path)
            continue
        rows.append(
            DemoSummary(
                path=path,
                task=rec.task.kind,
                user=rec.user,
                success=rec.success,
                completion_time=rec.completion_time,
                ticks=rec.n_ticks,
            )
        )
    return DatasetIndex(rows=rows, skipped=skipped)


# ---------------------------------------------------------------------------
# Demo-reset sampling


class ResetSampler:
    """Uniform-over-demos, then uniform-over-states reset-state source.

    Loaded trajectories are cached so high-rate sampling (RL training
    resets) does not reread files.
    """

    def __init__(self, index: DatasetIndex, task: str | None = None):
        self._summaries = index.successful(task)
        if not self._summaries:
            raise EmptyDatasetError(f"no successful demos{f' for task {task!r}' if task else ''}")
        self._cache: dict[Path, list[SimState]] = {}

    def __len__(self) -> int:
        return len(self._summaries)

    def _states(self, summary: DemoSummary) -> list[SimState]:
        states = self._cache.get(summary.path)
        if states is None:
            states = read_demo(summary.path).states()
            self._cache[summary.path] = states
        return states

    def sample(self, rng: np.random.Generator) -> SimState:
        summary = self._summaries[int(rng.integers(len(self._summaries)))]
        states = self._states(summary)
        return states[int(rng.integers(len(states)))].copy()


def sample_reset_state(index: DatasetIndex, rng: np.random.Generator, task: str | None = None) -> SimState:
    """One-shot uniform demo state draw (see ResetSampler for bulk use)."""
    return ResetSampler(index, task).sample(rng)


# ---------------------------------------------------------------------------
# Replay


def replay_demo(record: EpisodeRecord, config: ArmConfig) -> SimState:
    """Re-run a record's q_targets through the simulator from its initial state.

    Returns the final replayed state. Raises on arm-config mismatch: replays
    are only meaningful against the configuration that produced the record.
    """
    if config.config_hash() != record.arm_config_hash:
        raise ValueError(
            f"arm config hash mismatch: record {record.arm_config_hash}, given {config.config_hash()}"
        )
    sim = Simulator(config, record.task, dt=record.dt)
    sim.restore(record.initial_state)
    for t in record.ticks:
        gripper = t.command.gripper if t.command is not None else False
        sim.step(t.q_target, gripper)
    return sim.state
