"""End-to-end harness: coordinator + emulated network + scripted client.

Both the coordination channel and the per-session teleoperation channel are
routed through shaping proxies, so the whole protocol experiences the
configured link. Asserts that at least one successful demonstration lands in
storage and reports timing, measured delay, and drop counters.
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, field
from pathlib import Path

from .client import run_scripted_client
from .coordinator import Coordinator, InProcessSpawner, SessionTable, SubprocessSpawner
from .demostore import scan_dataset
from .netem import NetworkProfile, start_proxy


@dataclass
class E2EReport:
    profile: str
    success: bool
    completion_time: float | None
    wall_seconds: float
    measured_delay_ms: float | None
    frames_received: int
    stale_frames_dropped: int
    netem_dropped_bytes: int
    demos_stored: int
    haptic_events: list[str] = field(default_factory=list)
    error: str | None = None

    def lines(self) -> list[str]:
        return [
            f"profile:            {self.profile}",
            f"success:            {self.success}",
            f"completion_time_s:  {self.completion_time}",
            f"wall_seconds:       {self.wall_seconds:.2f}",
            f"measured_delay_ms:  {self.measured_delay_ms}",
            f"frames_received:    {self.frames_received}",
            f"stale_frames:       {self.stale_frames_dropped}",
            f"netem_drop_bytes:   {self.netem_dropped_bytes}",
            f"demos_stored:       {self.demos_stored}",
            f"haptic_events:      {self.haptic_events}",
            f"error:              {self.error}",
        ]


async def run_e2e(
    profile: NetworkProfile,
    profile_name: str,
    task_kind: str,
    storage_dir,
    single_process: bool = False,
    user: str = "e2e",
    timeout_s: float = 60.0,
    client_speed: float = 0.30,
) -> E2EReport:
    storage_dir = Path(storage_dir)
    storage_dir.mkdir(parents=True, exist_ok=True)
    spawner = (
        InProcessSpawner(storage_dir) if single_process else SubprocessSpawner(storage_dir)
    )
    table = SessionTable(spawner, max_sessions=4)
    coord = Coordinator(table)
    await coord.serve()
    proxies = []

    async def open_proxy(host: str, port: int):
        proxy, stats = await start_proxy(0, host, port, profile)
        proxies.append((proxy, stats))
        return "127.0.0.1", proxy.sockets[0].getsockname()[1]

    t0 = time.time()
    try:
        ctrl_host, ctrl_port = await open_proxy("127.0.0.1", coord.port)

        async def rewrite(host, port):
            return await open_proxy(host, port)

        report = await run_scripted_client(
            ctrl_host,
            ctrl_port,
            task_kind,
            user=user,
            timeout_s=timeout_s,
            speed=client_speed,
            endpoint_rewrite=rewrite,
        )
    finally:
        for proxy, _ in proxies:
            proxy.close()
        await coord.close()

    index = scan_dataset(storage_dir)
    stored = sum(1 for r in index.rows if r.success and r.user == user)
    dropped = sum(s.up_dropped + s.down_dropped for _, s in proxies)
    return E2EReport(
        profile=profile_name,
        success=report.success and stored >= 1,
        completion_time=report.completion_time,
        wall_seconds=time.time() - t0,
        measured_delay_ms=report.min_delay_ms,
        frames_received=report.frames_received,
        stale_frames_dropped=report.stale_frames_dropped,
        netem_dropped_bytes=dropped,
        demos_stored=stored,
        haptic_events=report.haptic_events,
        error=report.error,
    )
