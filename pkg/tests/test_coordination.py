"""Session lifecycle: joins, capacity, reaping, isolation, crash containment."""

import asyncio
import tempfile

import numpy as np
import pytest
import websockets

from teleopforge.client import join_session, run_scripted_client
from teleopforge.coordinator import (
    CapacityError,
    Coordinator,
    InProcessSpawner,
    SessionTable,
    SpawnedServer,
    SubprocessSpawner,
    UnknownTaskError,
)
from teleopforge.demostore import scan_dataset
from teleopforge.transport import Message, MsgType, PoseCommand, decode, encode


class FakeSpawner:
    """Instant fake teleop servers for table-logic tests."""

    def __init__(self):
        self.spawned = 0
        self.terminated = 0
        self.alive_flags = {}

    async def spawn(self, task_kind, token, user):
        self.spawned += 1
        port = 40000 + self.spawned
        key = self.spawned
        self.alive_flags[key] = True

        async def _terminate():
            self.alive_flags[key] = False
            self.terminated += 1

        return SpawnedServer(f"127.0.0.1:{port}", lambda: self.alive_flags[key], _terminate)


class TestSessionTable:
    def test_join_assigns_unique_sessions_and_ports(self):
        async def main():
            table = SessionTable(FakeSpawner(), max_sessions=4)
            a = await table.join("u1", "lifting", now=0.0)
            b = await table.join("u2", "lifting", now=0.0)
            assert a.session_id != b.session_id
            assert a.endpoint != b.endpoint
            assert a.token != b.token
            assert a.status == b.status == "live"
            assert len(a.token) == 32  # 128-bit hex

        asyncio.run(main())

    def test_unknown_task_rejected_without_spawn(self):
        async def main():
            spawner = FakeSpawner()
            table = SessionTable(spawner, max_sessions=4)
            with pytest.raises(UnknownTaskError):
                await table.join("u", "welding", now=0.0)
            assert spawner.spawned == 0

        asyncio.run(main())

    def test_capacity_enforced(self):
        async def main():
            table = SessionTable(FakeSpawner(), max_sessions=2)
            await table.join("a", "lifting", 0.0)
            await table.join("b", "lifting", 0.0)
            with pytest.raises(CapacityError):
                await table.join("c", "lifting", 0.0)

        asyncio.run(main())

    def test_reap_exactly_the_silent_sessions(self):
        # 50 sessions, 10 silent past the 15 s timeout -> exactly 10 reaped
        async def main():
            spawner = FakeSpawner()
            table = SessionTable(spawner, max_sessions=64)
            descs = [await table.join(f"u{i}", "lifting", now=0.0) for i in range(50)]
            for i, d in enumerate(descs):
                if i >= 10:
                    table.heartbeat(d.session_id, now=10.0)
            closed = await table.reap(now=16.0)
            assert len(closed) == 10
            assert {d.session_id for d in closed} == {d.session_id for d in descs[:10]}
            assert len(table.live()) == 40
            assert spawner.terminated == 10
            # fresh heartbeats keep the rest alive through later reaps
            for d in descs[10:]:
                table.heartbeat(d.session_id, now=20.0)
            assert await table.reap(now=30.0) == []

        asyncio.run(main())

    def test_reap_detects_dead_server(self):
        async def main():
            spawner = FakeSpawner()
            table = SessionTable(spawner, max_sessions=4)
            d = await table.join("u", "lifting", 0.0)
            spawner.alive_flags[1] = False  # server died on its own
            closed = await table.reap(now=1.0)
            assert [c.session_id for c in closed] == [d.session_id]

        asyncio.run(main())


class TestCoordinatorServer:
    def test_join_happy_path_and_unknown_task(self):
        async def main():
            storage = tempfile.mkdtemp()
            coord = Coordinator(SessionTable(InProcessSpawner(storage), max_sessions=2))
            await coord.serve()
            ws = await websockets.connect(f"ws://127.0.0.1:{coord.port}")
            await ws.send(encode(Message.join("alice", "welding")))
            reply = decode(await ws.recv())
            assert reply.type == MsgType.ERROR
            assert reply.body["code"] == "invalid-argument"
            await ws.send(encode(Message.join("alice", "lifting")))
            reply = decode(await ws.recv())
            assert reply.type == MsgType.SESSION
            assert ":" in reply.body["endpoint"]
            await ws.close()
            await coord.close()

        asyncio.run(main())

    def test_capacity_error_over_wire_fails_fast(self):
        async def main():
            storage = tempfile.mkdtemp()
            coord = Coordinator(SessionTable(InProcessSpawner(storage), max_sessions=1))
            await coord.serve()
            _, ws1 = await join_session("127.0.0.1", coord.port, "a", "lifting")
            ws2 = await websockets.connect(f"ws://127.0.0.1:{coord.port}")
            await ws2.send(encode(Message.join("b", "lifting")))
            reply = decode(await asyncio.wait_for(ws2.recv(), timeout=5))
            assert reply.type == MsgType.ERROR and reply.body["code"] == "busy"
            await ws1.close()
            await ws2.close()
            await coord.close()

        asyncio.run(main())

    def test_two_sessions_are_isolated(self):
        async def main():
            storage = tempfile.mkdtemp()
            coord = Coordinator(SessionTable(InProcessSpawner(storage), max_sessions=4))
            await coord.serve()
            sa, wsa = await join_session("127.0.0.1", coord.port, "a", "lifting")
            sb, wsb = await join_session("127.0.0.1", coord.port, "b", "lifting")
            assert sa["endpoint"] != sb["endpoint"]

            async def connect(sess):
                host, port = sess["endpoint"].rsplit(":", 1)
                ws = await websockets.connect(f"ws://{host}:{port}")
                await ws.send(encode(Message.hello(sess["token"])))
                return ws

            ta = await connect(sa)
            tb = await connect(sb)

            # drive A upward, leave B idle; interleave
            seq = 0
            ident = np.array([1.0, 0.0, 0.0, 0.0])
            for step in range(120):
                seq += 1
                z = min(0.15, step * 0.002)
                await ta.send(
                    encode(
                        Message.pose_cmd(PoseCommand(seq, seq, np.array([0.0, 0.0, z]), ident, False, True))
                    )
                )
                await asyncio.sleep(0.002)

            async def last_frame(ws):
                frame = None
                end = asyncio.get_event_loop().time() + 2.0
                while asyncio.get_event_loop().time() < end:
                    try:
                        msg = decode(await asyncio.wait_for(ws.recv(), timeout=0.3))
                    except asyncio.TimeoutError:
                        break
                    if msg.type == MsgType.STATE_FRAME:
                        frame = msg.frame
                return frame

            fa = await last_frame(ta)
            fb = await last_frame(tb)
            assert fa is not None and fb is not None
            # A moved; B still exactly at home
            from teleopforge.simcore import ArmConfig

            home = ArmConfig.default().home_q
            assert np.max(np.abs(fa.q - home)) > 0.05
            np.testing.assert_allclose(fb.q, home, atol=1e-9)
            for ws in (ta, tb, wsa, wsb):
                await ws.close()
            await coord.close()

        asyncio.run(main())

    def test_crash_containment_with_subprocesses(self):
        async def main():
            storage = tempfile.mkdtemp()
            table = SessionTable(SubprocessSpawner(storage, headless=True), max_sessions=4)
            coord = Coordinator(table, reap_period=0.2)
            await coord.serve()
            sa, wsa = await join_session("127.0.0.1", coord.port, "a", "lifting")
            sb, wsb = await join_session("127.0.0.1", coord.port, "b", "lifting")

            # kill A's server process outright
            server_a = table.servers[sa["session_id"]]
            await server_a.terminate()
            for _ in range(30):
                await asyncio.sleep(0.2)
                if len(table.live()) == 1:
                    break
            assert len(table.live()) == 1

            # B still serves: connect and get a frame
            host, port = sb["endpoint"].rsplit(":", 1)
            ws = await websockets.connect(f"ws://{host}:{port}")
            await ws.send(encode(Message.hello(sb["token"])))
            msg = decode(await asyncio.wait_for(ws.recv(), timeout=10))
            assert msg.type in (MsgType.STATE_FRAME, MsgType.HAPTIC_EVENT)

            # coordinator still accepts joins
            sc, wsc = await join_session("127.0.0.1", coord.port, "c", "lifting")
            assert sc["session_id"] not in (sa["session_id"], sb["session_id"])
            for w in (ws, wsa, wsb, wsc):
                await w.close()
            await coord.close()

        asyncio.run(main())
