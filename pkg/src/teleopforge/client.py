"""Scripted operator client: joins through the coordinator and solves tasks.

The client is fully closed-loop over the wire protocol: it reads StateFrames
(newest wins, stale ticks discarded), runs a waypoint stage machine, and
streams clutched PoseCommands at the command rate. Its virtual controller
position is initialized to the tool position from the first frame, so after
the engage edge the controller coordinates coincide with world coordinates.
Stage transitions tolerate feedback staleness (they act on the newest frame,
however old), which is what lets sessions complete over degraded links.
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, field

import numpy as np
import websockets

from .session import now_ms
from .simcore import TaskSpec
from .transport import (
    Message,
    MsgType,
    PoseCommand,
    StateFrame,
    decode,
    encode,
)

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
HOVER = 0.09
ARRIVE_TOL = 0.02
GRASP_TOL = 0.02


@dataclass
class ClientReport:
    success: bool = False
    completion_time: float | None = None
    demo_path: str | None = None
    demo_ticks: int = 0
    frames_received: int = 0
    stale_frames_dropped: int = 0
    haptic_events: list[str] = field(default_factory=list)
    min_delay_ms: float | None = None  # uplink estimate via timestamp echo
    commands_sent: int = 0
    wall_seconds: float = 0.0
    error: str | None = None


class FrameDriver:
    """Waypoint stage machine over received frames."""

    def __init__(self, task: TaskSpec, speed: float = 0.30):
        self.task = task
        self.speed = speed  # m/s of controller motion
        self.stage = "select"
        self.target_object: str | None = None
        self.waypoint = np.zeros(3)
        self.virtual_pos: np.ndarray | None = None
        self.gripper = False
        self.release_until = 0.0
        self.initial_z: dict[str, float] = {o.id: float(o.position[2]) for o in task.objects}

    def _placed(self, oid: str, pos: np.ndarray, attached: bool) -> bool:
        if self.task.kind == "lifting":
            return pos[2] >= self.initial_z[oid] + float(self.task.success["lift_height"])
        if self.task.kind == "picking":
            box = self.task.success["bins"][oid]
            inside = bool(
                np.all(pos >= np.asarray(box["min"])) and np.all(pos <= np.asarray(box["max"]))
            )
            return inside and not attached
        peg = self.task.success["pegs"][oid]
        radial = float(np.linalg.norm(pos[:2] - np.asarray(peg["xy"])))
        return radial <= float(peg["radial_tol"]) and pos[2] < float(peg["top_z"])

    def _goal(self, oid: str, obj_pos: np.ndarray) -> np.ndarray:
        if self.task.kind == "lifting":
            lift = float(self.task.success["lift_height"])
            return np.array([obj_pos[0], obj_pos[1], self.initial_z[oid] + lift + 0.05])
        if self.task.kind == "picking":
            box = self.task.success["bins"][oid]
            center = (np.asarray(box["min"], float) + np.asarray(box["max"], float)) / 2.0
            return np.array([center[0], center[1], 0.05])
        peg = self.task.success["pegs"][oid]
        return np.array([peg["xy"][0], peg["xy"][1], 0.06])

    def update(self, frame: StateFrame, dt: float, now: float) -> tuple[np.ndarray, bool]:
        """Advance one command period; returns (controller position, gripper)."""
        ee = frame.ee_position
        if self.virtual_pos is None:
            self.virtual_pos = ee.copy()
        objects = {o.id: o for o in frame.objects}

        if self.stage == "select":
            remaining = [
                o.id
                for o in self.task.objects
                if not self._placed(o.id, objects[o.id].position, objects[o.id].attached)
            ]
            if remaining:
                self.target_object = remaining[0]
                self.waypoint = objects[self.target_object].position + np.array([0.0, 0.0, HOVER])
                self.stage = "approach"
                self.gripper = False

        if self.target_object is not None:
            obj = objects[self.target_object]
            if self.stage == "approach":
                if np.linalg.norm(ee - self.waypoint) < ARRIVE_TOL:
                    self.stage = "descend"
                    self.waypoint = obj.position.copy()
                    self.gripper = True  # level-trigger grasp on arrival
            elif self.stage == "descend":
                self.waypoint = obj.position.copy() if not obj.attached else self.waypoint
                self.gripper = True
                if obj.attached:
                    self.stage = "carry"
                    self.waypoint = self._goal(self.target_object, obj.position)
            elif self.stage == "carry":
                self.gripper = True
                if self.task.kind == "lifting":
                    pass  # hold until the server confirms the demo
                elif np.linalg.norm(ee - self.waypoint) < ARRIVE_TOL:
                    self.stage = "release"
                    self.release_until = now + 0.25
            elif self.stage == "release":
                self.gripper = False
                if now >= self.release_until:
                    self.stage = "select"

        step = self.waypoint - self.virtual_pos
        dist = float(np.linalg.norm(step))
        max_step = self.speed * dt
        if dist > max_step:
            step = step * (max_step / dist)
        self.virtual_pos = self.virtual_pos + step
        return self.virtual_pos, self.gripper

    def restart_episode(self):
        self.stage = "select"
        self.target_object = None
        self.gripper = False


async def join_session(coordinator_host: str, coordinator_port: int, user: str, task_kind: str):
    """JOIN via the coordinator; returns (session body, open coordinator ws)."""
    ws = await websockets.connect(f"ws://{coordinator_host}:{coordinator_port}", max_size=1 << 20)
    await ws.send(encode(Message.join(user, task_kind)))
    reply = decode(await asyncio.wait_for(ws.recv(), timeout=30.0))
    if reply.type == MsgType.ERROR:
        await ws.close()
        raise RuntimeError(f"join failed: {reply.body.get('code')}: {reply.body.get('message')}")
    if reply.type != MsgType.SESSION:
        await ws.close()
        raise RuntimeError(f"unexpected reply {reply.type.name}")
    return reply.body, ws


async def run_scripted_client(
    coordinator_host: str,
    coordinator_port: int,
    task_kind: str,
    user: str = "scripted",
    command_hz: float = 60.0,
    speed: float = 0.30,
    demos_wanted: int = 1,
    timeout_s: float = 60.0,
    endpoint_rewrite=None,
) -> ClientReport:
    """Join, teleoperate until demos_wanted demos are stored, report stats.

    endpoint_rewrite(host, port) -> (host, port) lets a harness route the
    teleop connection through an emulated link.
    """
    report = ClientReport()
    t_start = time.time()
    task = TaskSpec.load(task_kind)
    session, coord_ws = await join_session(coordinator_host, coordinator_port, user, task_kind)
    host, port_s = session["endpoint"].rsplit(":", 1)
    host, port = (host, int(port_s))
    if endpoint_rewrite is not None:
        host, port = await _maybe_await(endpoint_rewrite(host, port))

    async def heartbeats():
        try:
            while True:
                await asyncio.sleep(5.0)
                await coord_ws.send(encode(Message.heartbeat()))
        except (websockets.ConnectionClosed, asyncio.CancelledError):
            pass

    hb_task = asyncio.ensure_future(heartbeats())
    newest: dict = {"frame": None, "tick": -1}
    done_event = asyncio.Event()
    demos_done = 0

    try:
        teleop_ws = await websockets.connect(f"ws://{host}:{port}", max_size=1 << 20)
    except OSError as e:
        hb_task.cancel()
        await coord_ws.close()
        report.error = f"teleop endpoint unreachable: {e}"
        return report

    await teleop_ws.send(encode(Message.hello(session["token"])))

    async def reader():
        nonlocal demos_done
        try:
            async for raw in teleop_ws:
                msg = decode(raw)
                if msg.type == MsgType.STATE_FRAME:
                    report.frames_received += 1
                    f = msg.frame
                    if f.tick <= newest["tick"]:
                        report.stale_frames_dropped += 1
                        continue
                    newest["tick"] = f.tick
                    newest["frame"] = f
                    if f.echoed_client_timestamp > 0:
                        delay = f.server_timestamp - f.echoed_client_timestamp
                        if report.min_delay_ms is None or delay < report.min_delay_ms:
                            report.min_delay_ms = float(delay)
                elif msg.type == MsgType.HAPTIC_EVENT:
                    report.haptic_events.append(msg.haptic.kind)
                elif msg.type == MsgType.DEMO_DONE:
                    demos_done += 1
                    report.demo_path = msg.body["path"]
                    report.completion_time = float(msg.body["completion_time"])
                    report.demo_ticks = int(msg.body["ticks"])
                    if demos_done >= demos_wanted:
                        report.success = True
                        done_event.set()
                    else:
                        restart["flag"] = True
                elif msg.type == MsgType.ERROR:
                    report.error = f"{msg.body.get('code')}: {msg.body.get('message')}"
                    done_event.set()
        except (websockets.ConnectionClosed, ValueError) as e:
            if not done_event.is_set():
                report.error = report.error or f"channel closed: {e}"
                done_event.set()

    restart = {"flag": False}
    reader_task = asyncio.ensure_future(reader())
    driver = FrameDriver(task, speed=speed)
    seq = 0
    period = 1.0 / command_hz
    deadline = time.time() + timeout_s

    try:
        while not done_event.is_set():
            if time.time() > deadline:
                report.error = report.error or "timeout"
                break
            if restart["flag"]:
                restart["flag"] = False
                driver.restart_episode()
            frame = newest["frame"]
            if frame is not None:
                pos, gripper = driver.update(frame, period, time.time())
                seq += 1
                cmd = PoseCommand(
                    seq=seq,
                    client_timestamp=now_ms(),
                    position=pos,
                    orientation=IDENTITY_QUAT.copy(),
                    gripper=gripper,
                    engaged=True,
                )
                try:
                    await teleop_ws.send(encode(Message.pose_cmd(cmd)))
                    report.commands_sent += 1
                except websockets.ConnectionClosed:
                    report.error = report.error or "teleop channel closed"
                    break
            await asyncio.sleep(period)
    finally:
        reader_task.cancel()
        hb_task.cancel()
        try:
            await teleop_ws.close()
        except Exception:
            pass
        try:
            await coord_ws.close()
        except Exception:
            pass
    report.wall_seconds = time.time() - t_start
    return report


async def _maybe_await(value):
    if asyncio.iscoroutine(value):
        return await value
    return value
