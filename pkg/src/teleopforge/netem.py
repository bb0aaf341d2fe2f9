"""Network emulation: constant-rate shaping, one-way delay, trace replay.

The emulator shapes the TCP byte stream (not IP packets): each direction of
a proxied connection runs through a LinkShaper, a discrete-event model that
answers "which bytes are deliverable by time t". Constant-rate mode
serializes bytes at the configured bit rate; trace mode releases up to one
MTU per delivery opportunity listed in the trace (Mahimahi/Cellsim text
convention: one integer millisecond per line, looped when exhausted). Every
byte is additionally held for the one-way propagation delay, and the
pre-link queue is capped at 1 MiB with counted tail drops.
"""

from __future__ import annotations

import asyncio
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

MTU = 1500
QUEUE_CAPACITY = 1 << 20  # 1 MiB


@dataclass
class LinkSpec:
    rate_bps: float | None = None  # constant-rate mode
    trace_ms: list[int] | None = None  # delivery-opportunity mode
    mtu: int = MTU
    looped: bool = True

    def __post_init__(self):
        if (self.rate_bps is None) == (self.trace_ms is None):
            raise ValueError("exactly one of rate_bps / trace_ms required")
        if self.rate_bps is not None and self.rate_bps <= 0:
            raise ValueError("rate must be > 0")
        if self.trace_ms is not None:
            if not self.trace_ms:
                raise ValueError("empty trace")
            if any(b > a for a, b in zip(self.trace_ms[1:], self.trace_ms)):
                raise ValueError("trace timestamps must be nondecreasing")
            if self.trace_ms[-1] <= 0 and self.looped:
                raise ValueError("looped trace must span positive time")


@dataclass
class NetworkProfile:
    up: LinkSpec
    down: LinkSpec
    delay_s: float  # one-way, per direction

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValueError("delay must be >= 0")

    @staticmethod
    def named(name: str) -> "NetworkProfile":
        """The four benchmark conditions."""
        table = {
            "baseline": (2_400_000.0, 0.020),
            "low-capacity": (500_000.0, 0.020),
            "high-delay": (2_400_000.0, 0.120),
            "both": (500_000.0, 0.120),
        }
        if name not in table:
            raise KeyError(f"unknown profile {name!r} (have {sorted(table)})")
        rate, delay = table[name]
        return NetworkProfile(up=LinkSpec(rate_bps=rate), down=LinkSpec(rate_bps=rate), delay_s=delay)

    @staticmethod
    def passthrough() -> "NetworkProfile":
        return NetworkProfile(LinkSpec(rate_bps=1e12), LinkSpec(rate_bps=1e12), 0.0)


def load_trace(path) -> list[int]:
    """One integer millisecond per line."""
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError as e:
            raise ValueError(f"{path}:{i + 1}: not an integer millisecond: {line!r}") from e
    if not out:
        raise ValueError(f"{path}: empty trace")
    return out


class LinkShaper:
    """One direction of an emulated link as a discrete-event system.

    offer(t, data) enqueues bytes arriving at time t; pop_ready(t) returns
    every byte deliverable by t, in FIFO order. Time is any monotone float
    clock in seconds, which makes the model directly unit-testable.
    """

    def __init__(self, spec: LinkSpec, delay_s: float, capacity: int = QUEUE_CAPACITY):
        self.spec = spec
        self.delay_s = delay_s
        self.capacity = capacity
        self.dropped_bytes = 0
        self.offered_bytes = 0
        self.delivered_bytes = 0
        self._ready: deque[tuple[float, bytes]] = deque()  # (deliver_at, chunk)
        if spec.rate_bps is not None:
            self._link_free_at = 0.0
        else:
            self._queue: deque[tuple[float, bytearray]] = deque()  # (arrival, bytes)
            self._queued_bytes = 0
            self._trace_pos = 0
            self._trace_epoch = 0.0  # start time of current loop iteration
            self._trace_started = None  # wall origin of the trace clock

    # -- input ---------------------------------------------------------------

    def offer(self, now: float, data: bytes) -> None:
        if not data:
            return
        self.offered_bytes += len(data)
        if self.spec.rate_bps is not None:
            self._offer_rate(now, data)
        else:
            self._offer_trace(now, data)

    def _offer_rate(self, now: float, data: bytes) -> None:
        # backlog awaiting serialization, in bytes
        backlog = max(0.0, self._link_free_at - now) * self.spec.rate_bps / 8.0
        room = self.capacity - backlog
        if room <= 0:
            self.dropped_bytes += len(data)
            return
        if len(data) > room:
            self.dropped_bytes += len(data) - int(room)
            data = data[: int(room)]
            if not data:
                return
        start = max(now, self._link_free_at)
        self._link_free_at = start + len(data) * 8.0 / self.spec.rate_bps
        self._ready.append((self._link_free_at + self.delay_s, bytes(data)))

    def _offer_trace(self, now: float, data: bytes) -> None:
        if self._trace_started is None:
            self._trace_started = now
            self._trace_epoch = now
        if self._queued_bytes + len(data) > self.capacity:
            room = self.capacity - self._queued_bytes
            self.dropped_bytes += len(data) - room
            data = data[:room]
            if not data:
                return
        self._queue.append((now, bytearray(data)))
        self._queued_bytes += len(data)

    # -- trace opportunities ---------------------------------------------------

    def _advance_trace(self, upto: float) -> None:
        """Serve every delivery opportunity at or before `upto`."""
        if self._trace_started is None:
            return
        trace = self.spec.trace_ms
        span = trace[-1] / 1000.0
        while True:
            if self._trace_pos >= len(trace):
                if not self.spec.looped:
                    return
                self._trace_pos = 0
                self._trace_epoch += max(span, 1e-3)
            op_time = self._trace_epoch + trace[self._trace_pos] / 1000.0
            if op_time > upto:
                return
            self._serve_opportunity(op_time)
            self._trace_pos += 1

    def _serve_opportunity(self, op_time: float) -> None:
        budget = self.spec.mtu
        out = bytearray()
        while budget > 0 and self._queue:
            arrival, chunk = self._queue[0]
            if arrival > op_time:
                break
            take = min(budget, len(chunk))
            out.extend(chunk[:take])
            del chunk[:take]
            budget -= take
            self._queued_bytes -= take
            if not chunk:
                self._queue.popleft()
        if out:
            self._ready.append((op_time + self.delay_s, bytes(out)))

    # -- output ----------------------------------------------------------------

    def pop_ready(self, now: float) -> bytes:
        if self.spec.trace_ms is not None:
            self._advance_trace(now)
        out = bytearray()
        while self._ready and self._ready[0][0] <= now:
            out.extend(self._ready.popleft()[1])
        self.delivered_bytes += len(out)
        return bytes(out)

    def next_event_time(self, now: float) -> float | None:
        """Earliest future time at which pop_ready may return more bytes."""
        if self._ready:
            return self._ready[0][0]
        if self.spec.trace_ms is not None and self._queue:
            # next opportunity after now
            trace = self.spec.trace_ms
            span = trace[-1] / 1000.0
            pos, epoch = self._trace_pos, self._trace_epoch
            for _ in range(len(trace) + 1):
                if pos >= len(trace):
                    if not self.spec.looped:
                        return None
                    pos = 0
                    epoch += max(span, 1e-3)
                t = epoch + trace[pos] / 1000.0
                if t > now:
                    return t + self.delay_s
                pos += 1
        return None

    @property
    def drained(self) -> bool:
        pending = self._queued_bytes if self.spec.trace_ms is not None else 0
        return not self._ready and pending == 0


# ---------------------------------------------------------------------------
# TCP proxy


class ProxyStats:
    def __init__(self):
        self.connections = 0
        self.up_dropped = 0
        self.down_dropped = 0


async def _pump(reader: asyncio.StreamReader, writer: asyncio.StreamWriter, shaper: LinkShaper):
    """Forward one direction through a shaper on the event-loop clock."""
    loop = asyncio.get_running_loop()
    wake = asyncio.Event()
    eof = False

    async def feed():
        nonlocal eof
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                shaper.offer(loop.time(), data)
                wake.set()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            eof = True
            wake.set()

    feeder = asyncio.ensure_future(feed())
    try:
        while True:
            now = loop.time()
            data = shaper.pop_ready(now)
            if data:
                writer.write(data)
                await writer.drain()
            if eof and shaper.drained:
                break
            nxt = shaper.next_event_time(loop.time())
            wake.clear()
            try:
                if nxt is None:
                    await wake.wait()
                else:
                    await asyncio.wait_for(wake.wait(), timeout=max(0.0, nxt - loop.time()) + 1e-4)
            except asyncio.TimeoutError:
                pass
    except (ConnectionError, asyncio.CancelledError):
        pass
    finally:
        feeder.cancel()
        try:
            writer.close()
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass


async def start_proxy(
    listen_port: int,
    upstream_host: str,
    upstream_port: int,
    profile: NetworkProfile,
    host: str = "127.0.0.1",
):
    """Bidirectional shaping proxy; returns (asyncio server, ProxyStats)."""
    stats = ProxyStats()

    async def handle(client_reader, client_writer):
        try:
            up_reader, up_writer = await asyncio.open_connection(upstream_host, upstream_port)
        except OSError as e:
            log.warning("upstream %s:%d refused: %s", upstream_host, upstream_port, e)
            client_writer.close()
            return
        stats.connections += 1
        up_shaper = LinkShaper(profile.up, profile.delay_s)
        down_shaper = LinkShaper(profile.down, profile.delay_s)
        try:
            await asyncio.gather(
                _pump(client_reader, up_writer, up_shaper),
                _pump(up_reader, client_writer, down_shaper),
            )
        finally:
            stats.up_dropped += up_shaper.dropped_bytes
            stats.down_dropped += down_shaper.dropped_bytes

    server = await asyncio.start_server(handle, host, listen_port)
    return server, stats
