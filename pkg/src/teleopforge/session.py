"""Dedicated per-user teleoperation server.

One WebSocket client drives one simulator through a fixed-rate control loop:

    latest PoseCommand -> clutch map -> IK -> velocity-controlled sim step

StateFrames stream back at 30 Hz, haptic events immediately. Successful
episodes are finalized automatically, written to the demo store, and
acknowledged with DEMO_DONE; a RESET aborts the episode as unsuccessful.
The loop uses drift-free monotonic scheduling (next deadline advances by dt,
never resampled), so tick rate holds over long windows; --headless removes
the pacing entirely for fast tests.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import websockets
from websockets.protocol import State

from .demostore import write_demo
from .episode import EpisodeRecord, TickRecord, finalize_completion_time
from .geometry import Pose
from .simcore import ArmConfig, SimEvent, Simulator, TaskSpec, solve_ik
from .transport import (
    HapticEvent,
    LatestWins,
    Message,
    MsgType,
    ObjectFrame,
    PoseCommand,
    StateFrame,
    decode,
    encode,
)

log = logging.getLogger(__name__)

FRAME_RATE_NUM = 3  # 30 Hz out of the 50 Hz loop: 3 frames per 5 ticks
FRAME_RATE_DEN = 5
OUTBOUND_QUEUE = 32  # frames; drop-oldest on overflow


def now_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass
class ClutchMap:
    """Relative-control clutch: controller deltas move the arm only while engaged.

    Controller and simulator share world axes (phone AR-world to robot world,
    identity scaling), so the positional offset captured at engage is a plain
    world-frame translation: moving the controller +x moves the tool target
    +x. Orientation composes rigidly: rotating the controller rotates the
    tool by the same world rotation.
    """

    engaged: bool = False
    position_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation_offset: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    target: Pose | None = None  # frozen when disengaged


def map_command(
    cmd: PoseCommand,
    clutch: ClutchMap,
    current_ee: Pose,
    task: TaskSpec,
) -> tuple[Pose | None, list[str]]:
    """Update the clutch with one command; returns (ee target or None, clamp events).

    On the engage edge the offsets are captured so the target equals the
    current tool pose exactly (no jump). While engaged the target follows
    the command through the captured offsets, position-clamped to the
    workspace box and the table plane.
    """
    from .geometry import quat_conjugate, quat_multiply, quat_normalize

    events: list[str] = []
    if cmd.engaged and not clutch.engaged:
        clutch.position_offset = current_ee.position - cmd.position
        clutch.rotation_offset = quat_multiply(current_ee.quaternion, quat_conjugate(cmd.orientation))
        clutch.engaged = True
        clutch.target = current_ee.copy()
        return clutch.target, events
    if not cmd.engaged:
        clutch.engaged = False
        return clutch.target, events  # frozen at last value (None if never engaged)
    pos = clutch.position_offset + cmd.position
    quat = quat_normalize(quat_multiply(clutch.rotation_offset, cmd.orientation))
    clamped = np.clip(pos, task.workspace_min, task.workspace_max)
    if not np.array_equal(clamped, pos):
        events.append("clamp")
        pos = clamped
    clutch.target = Pose(pos, quat)
    return clutch.target, events


@dataclass
class SessionStats:
    ticks: int = 0
    episodes_started: int = 1
    demos_stored: int = 0
    episodes_failed: int = 0
    frames_sent: int = 0
    frames_dropped: int = 0
    commands_applied: int = 0


class _Recorder:
    """Accumulates one episode's TickRecords."""

    def __init__(self, sim: Simulator, user: str, config_hash: str):
        self.user = user
        self.config_hash = config_hash
        self.initial_state = sim.save()
        self.ticks: list[TickRecord] = []
        self.started_at = time.time()

    def add(self, sim, cmd, q_target, reward, events):
        self.ticks.append(
            TickRecord(
                tick=sim.state.tick,
                state=sim.save(),
                command=cmd,
                q_target=np.asarray(q_target, dtype=float).copy(),
                reward=reward,
                events=events,
            )
        )

    def finalize(self, task: TaskSpec, dt: float, success: bool) -> EpisodeRecord:
        return EpisodeRecord(
            task=task,
            user=self.user,
            arm_config_hash=self.config_hash,
            dt=dt,
            initial_state=self.initial_state,
            ticks=self.ticks,
            success=success,
            completion_time=finalize_completion_time(self.ticks, dt) if success else None,
            started_at=self.started_at,
            ended_at=time.time(),
        )


class TeleopSession:
    """Hosts the control loop and channel I/O for a single operator."""

    def __init__(
        self,
        config: ArmConfig,
        task: TaskSpec,
        token: str,
        storage_dir,
        user: str = "operator",
        dt: float = 0.02,
        headless: bool = False,
    ):
        self.config = config
        self.task = task
        self.token = token
        self.storage_dir = storage_dir
        self.user = user
        self.dt = dt
        self.headless = headless
        self.sim = Simulator(config, task, dt=dt)
        self.stats = SessionStats()
        self.port: int | None = None
        self._server = None
        self._active = False
        self._config_hash = config.config_hash()
        self.closed = asyncio.Event()

    # -- server lifecycle ----------------------------------------------------

    async def serve(self, host: str = "127.0.0.1", port: int = 0):
        self._server = await websockets.serve(self._handle, host, port, max_size=1 << 20)
        self.port = self._server.sockets[0].getsockname()[1]
        return self

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        self.closed.set()

    async def _handle(self, ws):
        if self._active:
            await ws.send(encode(Message.error("busy", "session already has an operator")))
            await ws.close()
            return
        try:
            raw = await asyncio.wait_for(ws.recv(), timeout=10.0)
            hello = decode(raw)
        except (asyncio.TimeoutError, websockets.ConnectionClosed):
            return
        if hello.type != MsgType.HELLO or hello.body.get("token") != self.token:
            await ws.send(encode(Message.error("auth", "authentication failed")))
            await ws.close()
            return
        self._active = True
        try:
            await self._run(ws)
        finally:
            self._active = False

    # -- the session proper ----------------------------------------------------

    async def _run(self, ws):
        inbox = LatestWins()
        reset_requested = asyncio.Event()
        outbound: asyncio.Queue[bytes] = asyncio.Queue(maxsize=OUTBOUND_QUEUE)

        async def reader():
            try:
                async for raw in ws:
                    msg = decode(raw)
                    if msg.type == MsgType.POSE_CMD:
                        inbox.offer(msg.pose)
                    elif msg.type == MsgType.RESET:
                        reset_requested.set()
                    elif msg.type == MsgType.HEARTBEAT:
                        pass
                    else:
                        log.debug("ignoring %s on teleop channel", msg.type.name)
            except (websockets.ConnectionClosed, ValueError):
                pass

        async def sender():
            try:
                while True:
                    data = await outbound.get()
                    await ws.send(data)
                    self.stats.frames_sent += 1
            except (websockets.ConnectionClosed, asyncio.CancelledError):
                pass

        def send_soon(data: bytes):
            # bounded queue: drop the oldest frame under backpressure
            while True:
                try:
                    outbound.put_nowait(data)
                    return
                except asyncio.QueueFull:
                    try:
                        outbound.get_nowait()
                        self.stats.frames_dropped += 1
                    except asyncio.QueueEmpty:
                        pass

        reader_task = asyncio.ensure_future(reader())
        sender_task = asyncio.ensure_future(sender())
        try:
            await self._control_loop(ws, inbox, reset_requested, send_soon)
        except (websockets.ConnectionClosed, ConnectionError):
            self.stats.episodes_failed += 1  # channel loss: episode abandoned
        finally:
            reader_task.cancel()
            sender_task.cancel()
            self.closed.set()

    async def _control_loop(self, ws, inbox: LatestWins, reset_requested, send_soon):
        loop = asyncio.get_running_loop()
        clutch = ClutchMap()
        recorder = _Recorder(self.sim, self.user, self._config_hash)
        episode_reward = 0.0
        episode_ticks = 0
        max_ticks = int(self.task.time_limit_s / self.dt)
        last_cmd: PoseCommand | None = None
        q_target = self.sim.state.arm.q.copy()
        next_deadline = loop.time() + self.dt

        def begin_episode():
            nonlocal recorder, episode_reward, episode_ticks, clutch, q_target
            self.sim.reset()
            recorder = _Recorder(self.sim, self.user, self._config_hash)
            episode_reward = 0.0
            episode_ticks = 0
            clutch = ClutchMap()
            q_target = self.sim.state.arm.q.copy()
            self.stats.episodes_started += 1

        while True:
            if not self.headless:
                delay = next_deadline - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                next_deadline += self.dt
            else:
                await asyncio.sleep(0)

            if ws.state is not State.OPEN:
                self.stats.episodes_failed += 1
                return

            if reset_requested.is_set():
                reset_requested.clear()
                self.stats.episodes_failed += 1
                begin_episode()
                continue

            cmd = inbox.take()
            clamp_events: list[str] = []
            if cmd is not None:
                if cmd is not last_cmd:
                    self.stats.commands_applied += 1
                    last_cmd = cmd
                target, clamp_events = map_command(cmd, clutch, self.sim.ee_pose(), self.task)
                if target is not None:
                    ik = solve_ik(self.config, self.sim.state.arm.q, target, max_iters=15)
                    q_target = ik.q
            gripper = bool(cmd.gripper) if cmd is not None else False

            events = self.sim.step(q_target, gripper)
            self.stats.ticks += 1
            episode_ticks += 1
            tick = self.sim.state.tick
            all_events = list(events) + [SimEvent(tick, "clamp") for _ in clamp_events]
            reward = 1.0 if self.sim.success() else 0.0
            episode_reward += reward
            recorder.add(self.sim, cmd, q_target, reward, all_events)

            for ev in all_events:
                send_soon(encode(Message.haptic(HapticEvent(ev.tick, ev.kind, ev.object_id))))

            if (tick * FRAME_RATE_NUM) // FRAME_RATE_DEN != ((tick - 1) * FRAME_RATE_NUM) // FRAME_RATE_DEN:
                send_soon(encode(Message.state_frame(self._frame(cmd, episode_reward))))

            if self.sim.state.task_done:
                record = recorder.finalize(self.task, self.dt, success=True)
                path = write_demo(record, self.storage_dir)
                self.stats.demos_stored += 1
                await ws.send(
                    encode(
                        Message.demo_done(
                            str(path), True, record.completion_time or 0.0, record.n_ticks
                        )
                    )
                )
                begin_episode()
            elif episode_ticks >= max_ticks:
                self.stats.episodes_failed += 1
                begin_episode()

    def _frame(self, cmd: PoseCommand | None, reward_to_date: float) -> StateFrame:
        ee = self.sim.ee_pose()
        state = self.sim.state
        return StateFrame(
            tick=state.tick,
            server_timestamp=now_ms(),
            echoed_client_timestamp=cmd.client_timestamp if cmd is not None else 0,
            q=state.arm.q.copy(),
            ee_position=ee.position,
            ee_quaternion=ee.quaternion,
            objects=[
                ObjectFrame(o.id, o.position.copy(), o.quaternion.copy(), o.attached)
                for o in state.objects
            ],
            task_done=state.task_done,
            reward_to_date=reward_to_date,
        )


async def run_teleop_server(
    config: ArmConfig,
    task: TaskSpec,
    token: str,
    storage_dir,
    host: str = "127.0.0.1",
    port: int = 0,
    user: str = "operator",
    headless: bool = False,
    ready_callback=None,
):
    """Start a session server and park until it closes (CLI entry path)."""
    session = TeleopSession(config, task, token, storage_dir, user=user, headless=headless)
    await session.serve(host=host, port=port)
    if ready_callback:
        ready_callback(session.port)
    await session.closed.wait()
    await session.close()
    return session
