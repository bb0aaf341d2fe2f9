"""Coordination service: joins, per-user teleoperation server spawning, reaping.

A JOIN spawns a dedicated teleoperation server (a subprocess by default, an
in-process task under single-process mode) bound to a fresh port, and the
SESSION reply hands the client its endpoint and bearer token. From then on
the coordinator is off the data path; the client keeps the control
connection open only for 5-second heartbeats. Sessions silent for longer
than the timeout, or whose server died, are reaped and their resources
freed. Partially recorded demonstrations are never persisted (only the
teleop server writes, and only on success).
"""

from __future__ import annotations

import asyncio
import json
import logging
import secrets
import sys
import time
import uuid
from dataclasses import dataclass, field

import websockets

from .simcore import ArmConfig, TaskSpec, TASK_KINDS
from .transport import Message, MsgType, decode, encode

log = logging.getLogger(__name__)

HEARTBEAT_PERIOD = 5.0
HEARTBEAT_TIMEOUT = 15.0


class CapacityError(RuntimeError):
    pass


class UnknownTaskError(ValueError):
    pass


@dataclass
class SessionDescriptor:
    session_id: str
    user: str
    task: str
    endpoint: str  # host:port of the teleop server
    token: str
    created_at: float
    status: str = "starting"  # starting | live | closed
    last_heartbeat: float = 0.0


class SpawnedServer:
    """Handle to a running teleop server, however it is hosted."""

    def __init__(self, endpoint: str, alive, terminate):
        self.endpoint = endpoint
        self._alive = alive
        self._terminate = terminate

    def alive(self) -> bool:
        return self._alive()

    async def terminate(self) -> None:
        await self._terminate()


class SubprocessSpawner:
    """Each session is an OS process: the paper-shaped isolation boundary."""

    def __init__(self, storage_dir, host: str = "127.0.0.1", headless: bool = False):
        self.storage_dir = storage_dir
        self.host = host
        self.headless = headless

    async def spawn(self, task_kind: str, token: str, user: str) -> SpawnedServer:
        args = [
            sys.executable,
            "-m",
            "teleopforge.cli",
            "teleop",
            "--port",
            "0",
            "--host",
            self.host,
            "--task",
            task_kind,
            "--token",
            token,
            "--user",
            user,
            "--storage",
            str(self.storage_dir),
        ]
        if self.headless:
            args.append("--headless")
        proc = await asyncio.create_subprocess_exec(
            *args, stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.DEVNULL
        )
        try:
            line = await asyncio.wait_for(proc.stdout.readline(), timeout=20.0)
        except asyncio.TimeoutError:
            proc.terminate()
            raise RuntimeError("teleop server did not become ready in 20 s")
        try:
            ready = json.loads(line.decode().strip().removeprefix("TELEOP_READY "))
            port = int(ready["port"])
        except (ValueError, KeyError) as e:
            proc.terminate()
            raise RuntimeError(f"bad ready line from teleop server: {line!r}") from e

        async def _terminate():
            if proc.returncode is None:
                proc.terminate()
                try:
                    await asyncio.wait_for(proc.wait(), timeout=5.0)
                except asyncio.TimeoutError:
                    proc.kill()

        return SpawnedServer(
            endpoint=f"{self.host}:{port}",
            alive=lambda: proc.returncode is None,
            terminate=_terminate,
        )


class InProcessSpawner:
    """Sessions as tasks in this event loop (--single-process, unit tests)."""

    def __init__(self, storage_dir, config: ArmConfig | None = None, headless: bool = False):
        self.storage_dir = storage_dir
        self.config = config or ArmConfig.default()
        self.headless = headless

    async def spawn(self, task_kind: str, token: str, user: str) -> SpawnedServer:
        from .session import TeleopSession

        session = TeleopSession(
            self.config,
            TaskSpec.load(task_kind),
            token,
            self.storage_dir,
            user=user,
            headless=self.headless,
        )
        await session.serve()
        alive = lambda: not session.closed.is_set()

        async def _terminate():
            await session.close()

        return SpawnedServer(f"127.0.0.1:{session.port}", alive, _terminate)


class SessionTable:
    """Session bookkeeping; time is always passed in so tests can fake it."""

    def __init__(self, spawner, max_sessions: int, heartbeat_timeout: float = HEARTBEAT_TIMEOUT):
        self.spawner = spawner
        self.max_sessions = max_sessions
        self.heartbeat_timeout = heartbeat_timeout
        self.sessions: dict[str, SessionDescriptor] = {}
        self.servers: dict[str, SpawnedServer] = {}
        self._lock = asyncio.Lock()

    def live(self) -> list[SessionDescriptor]:
        return [s for s in self.sessions.values() if s.status == "live"]

    async def join(self, user: str, task_kind: str, now: float) -> SessionDescriptor:
        if task_kind not in TASK_KINDS:
            raise UnknownTaskError(f"unknown task {task_kind!r}")
        async with self._lock:
            if len(self.live()) >= self.max_sessions:
                raise CapacityError(f"at capacity ({self.max_sessions} live sessions)")
            desc = SessionDescriptor(
                session_id=uuid.uuid4().hex,
                user=user,
                task=task_kind,
                endpoint="",
                token=secrets.token_hex(16),  # 128-bit bearer token
                created_at=now,
                last_heartbeat=now,
            )
            self.sessions[desc.session_id] = desc
        try:
            server = await self.spawner.spawn(task_kind, desc.token, user)
        except Exception:
            self.sessions.pop(desc.session_id, None)
            raise
        desc.endpoint = server.endpoint
        desc.status = "live"
        self.servers[desc.session_id] = server
        return desc

    def heartbeat(self, session_id: str, now: float) -> bool:
        desc = self.sessions.get(session_id)
        if desc is None or desc.status != "live":
            return False
        desc.last_heartbeat = now
        return True

    async def reap(self, now: float) -> list[SessionDescriptor]:
        """Close sessions silent past the timeout or whose server died."""
        closed = []
        for desc in list(self.sessions.values()):
            if desc.status != "live":
                continue
            server = self.servers.get(desc.session_id)
            timed_out = now - desc.last_heartbeat > self.heartbeat_timeout
            dead = server is not None and not server.alive()
            if timed_out or dead:
                desc.status = "closed"
                if server is not None:
                    await server.terminate()
                    del self.servers[desc.session_id]
                closed.append(desc)
                log.info("reaped session %s (%s)", desc.session_id[:8], "timeout" if timed_out else "exited")
        return closed

    async def close_all(self) -> None:
        for desc in self.sessions.values():
            if desc.status == "live":
                desc.status = "closed"
        for server in list(self.servers.values()):
            await server.terminate()
        self.servers.clear()


class Coordinator:
    """WebSocket front door for the session table."""

    def __init__(self, table: SessionTable, reap_period: float = 1.0):
        self.table = table
        self.reap_period = reap_period
        self._server = None
        self._reaper = None
        self.port: int | None = None

    async def serve(self, host: str = "127.0.0.1", port: int = 0):
        self._server = await websockets.serve(self._handle, host, port, max_size=1 << 20)
        self.port = self._server.sockets[0].getsockname()[1]
        self._reaper = asyncio.ensure_future(self._reap_loop())
        return self

    async def close(self):
        if self._reaper:
            self._reaper.cancel()
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        await self.table.close_all()

    async def _reap_loop(self):
        try:
            while True:
                await asyncio.sleep(self.reap_period)
                await self.table.reap(time.monotonic())
        except asyncio.CancelledError:
            pass

    async def _handle(self, ws):
        bound_session: str | None = None
        try:
            async for raw in ws:
                try:
                    msg = decode(raw)
                except ValueError as e:
                    await ws.send(encode(Message.error("bad-message", str(e))))
                    continue
                if msg.type == MsgType.JOIN:
                    user = str(msg.body.get("user", "anon"))
                    task_kind = str(msg.body.get("task", ""))
                    try:
                        desc = await self.table.join(user, task_kind, time.monotonic())
                    except UnknownTaskError as e:
                        await ws.send(encode(Message.error("invalid-argument", str(e))))
                        continue
                    except CapacityError as e:
                        await ws.send(encode(Message.error("busy", str(e))))
                        continue
                    bound_session = desc.session_id
                    await ws.send(encode(Message.session(desc.session_id, desc.endpoint, desc.token)))
                elif msg.type == MsgType.HEARTBEAT:
                    if bound_session is not None:
                        self.table.heartbeat(bound_session, time.monotonic())
                else:
                    await ws.send(encode(Message.error("unexpected", f"{msg.type.name} not valid here")))
        except (websockets.ConnectionClosed, ConnectionError):
            pass


async def run_coordinator(
    storage_dir,
    host: str = "127.0.0.1",
    port: int = 0,
    max_sessions: int = 8,
    single_process: bool = False,
    headless: bool = False,
    ready_callback=None,
):
    """Start the coordinator and park forever (CLI entry path)."""
    spawner = (
        InProcessSpawner(storage_dir, headless=headless)
        if single_process
        else SubprocessSpawner(storage_dir, host=host, headless=headless)
    )
    table = SessionTable(spawner, max_sessions=max_sessions)
    coord = Coordinator(table)
    await coord.serve(host=host, port=port)
    if ready_callback:
        ready_callback(coord.port)
    try:
        await asyncio.Future()
    finally:
        await coord.close()
