"""Episode records: the per-tick trajectory a teleoperation session produces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simcore import SimEvent, SimState, TaskSpec
from .transport import PoseCommand


@dataclass
class TickRecord:
    tick: int
    state: SimState  # snapshot after this tick's step
    command: PoseCommand | None  # latest applied command, None while idle
    q_target: np.ndarray
    reward: float
    events: list[SimEvent] = field(default_factory=list)


@dataclass
class EpisodeRecord:
    task: TaskSpec
    user: str
    arm_config_hash: str
    dt: float
    initial_state: SimState
    ticks: list[TickRecord]
    success: bool
    completion_time: float | None  # (last tick - first tick) * dt when successful
    started_at: float = 0.0  # wall seconds
    ended_at: float = 0.0

    @property
    def n_ticks(self) -> int:
        return len(self.ticks)

    def final_state(self) -> SimState:
        return self.ticks[-1].state if self.ticks else self.initial_state

    def states(self) -> list[SimState]:
        """All restorable states along the trajectory, initial first."""
        return [self.initial_state] + [t.state for t in self.ticks]


def finalize_completion_time(ticks: list[TickRecord], dt: float) -> float | None:
    if not ticks:
        return None
    return (ticks[-1].tick - ticks[0].tick) * dt
