"""Background health checking with a read-side cache.

The checker probes each system's subsystems on a jittered interval and
publishes results into a cache. Request handling NEVER probes: the gate and
the status endpoints only read the cache, applying staleness at read time,
so an entry older than ``staleness_factor * interval`` degrades to
``unknown`` (and therefore fails the gate) without any writer involvement.
"""

from __future__ import annotations

import asyncio
import logging
import random
import time
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional

from .config import SUBSYSTEM_KINDS, HealthParams, SystemConfig
from .errors import ErrorCode, GatewayError, system_unknown
from .pool import PoolKey, SSHConnectionPool

logger = logging.getLogger(__name__)

HEALTHY = "healthy"
UNHEALTHY = "unhealthy"
UNKNOWN = "unknown"

PROBE_COMMANDS: dict[str, Callable[[SystemConfig], list[str]]] = {
    "ssh": lambda cfg: ["true"],
    "filesystem": lambda cfg: ["test", "-r", cfg.probe_path],
    "scheduler": lambda cfg: ["fstat", "--ping"],
}


@dataclass(frozen=True)
class HealthStatus:
    system: str
    subsystem: str
    state: str
    last_checked: Optional[float] = None
    latency: Optional[float] = None
    detail: str = ""


class HealthCache:
    """Concurrent-read cache; writers replace whole entries atomically."""

    def __init__(self, clock: Callable[[], float] = time.time):
        self._entries: dict[tuple[str, str], HealthStatus] = {}
        self._clock = clock

    def put(self, status: HealthStatus) -> None:
        self._entries[(status.system, status.subsystem)] = status

    def effective(
        self, system_cfg: SystemConfig, subsystem: str, now: Optional[float] = None
    ) -> HealthStatus:
        """Entry with the staleness and disabled rules applied."""
        if not system_cfg.health.is_enabled(subsystem):
            return HealthStatus(
                system=system_cfg.name,
                subsystem=subsystem,
                state=HEALTHY,
                detail="check disabled",
            )
        entry = self._entries.get((system_cfg.name, subsystem))
        if entry is None or entry.last_checked is None:
            return HealthStatus(
                system=system_cfg.name,
                subsystem=subsystem,
                state=UNKNOWN,
                detail="never checked",
            )
        ts = self._clock() if now is None else now
        if ts - entry.last_checked > system_cfg.health.staleness_horizon:
            return replace(entry, state=UNKNOWN, detail="health data stale")
        return entry


def read_status(
    cache: HealthCache,
    systems: Mapping[str, SystemConfig],
    system: str,
    subsystem: Optional[str] = None,
    now: Optional[float] = None,
) -> list[HealthStatus]:
    """Pure cache read; never triggers a probe."""
    if system not in systems:
        raise system_unknown(system)
    cfg = systems[system]
    kinds = [subsystem] if subsystem else list(SUBSYSTEM_KINDS)
    for kind in kinds:
        if kind not in SUBSYSTEM_KINDS:
            raise GatewayError(
                ErrorCode.BAD_REQUEST, f"unknown subsystem {kind!r}", system=system
            )
    return [cache.effective(cfg, kind, now) for kind in kinds]


def gate_on_health(
    cache: HealthCache,
    system_cfg: SystemConfig,
    subsystem: str,
    now: Optional[float] = None,
) -> None:
    """Raise unless the cached state is fresh and healthy. No I/O here."""
    status = cache.effective(system_cfg, subsystem, now)
    if status.state != HEALTHY:
        raise GatewayError(
            ErrorCode.SUBSYSTEM_UNAVAILABLE,
            f"subsystem {subsystem!r} on {system_cfg.name!r} is {status.state}"
            + (f" ({status.detail})" if status.detail else ""),
            system=system_cfg.name,
            subsystem=subsystem,
        )


async def run_check(
    system_cfg: SystemConfig,
    subsystem: str,
    pool: SSHConnectionPool,
    params: Optional[HealthParams] = None,
    clock: Callable[[], float] = time.time,
) -> HealthStatus:
    """Probe one subsystem once. Failures become unhealthy, never exceptions."""
    params = params or system_cfg.health
    command = PROBE_COMMANDS[subsystem](system_cfg)
    key = PoolKey(system_cfg.name, system_cfg.probe_username)
    started = clock()
    perf_start = time.perf_counter()

    async def _probe() -> tuple[int, str]:
        lease = await pool.acquire(key)
        try:
            result = await pool.exec_on_lease(lease, command, timeout=params.timeout)
            return result.exit_code, result.stderr.decode(errors="replace").strip()
        finally:
            await pool.release(lease)

    try:
        exit_code, stderr = await asyncio.wait_for(_probe(), params.timeout)
        latency = time.perf_counter() - perf_start
        if exit_code == 0:
            return HealthStatus(
                system_cfg.name, subsystem, HEALTHY, started, latency, "ok"
            )
        detail = stderr or f"probe exited {exit_code}"
        return HealthStatus(
            system_cfg.name, subsystem, UNHEALTHY, started, latency, detail
        )
    except asyncio.TimeoutError:
        latency = time.perf_counter() - perf_start
        return HealthStatus(
            system_cfg.name, subsystem, UNHEALTHY, started, latency, "timeout"
        )
    except GatewayError as exc:
        latency = time.perf_counter() - perf_start
        return HealthStatus(
            system_cfg.name, subsystem, UNHEALTHY, started, latency, exc.message
        )


class HealthChecker:
    """One background task probing every enabled (system, subsystem) pair
    on its interval (with +-10% jitter to avoid synchronized bursts)."""

    def __init__(
        self,
        systems: Mapping[str, SystemConfig],
        pool: SSHConnectionPool,
        cache: HealthCache,
        clock: Callable[[], float] = time.time,
        rng: Optional[random.Random] = None,
    ):
        self._systems = systems
        self._pool = pool
        self._cache = cache
        self._clock = clock
        self._rng = rng or random.Random()
        self._task: Optional[asyncio.Task] = None
        self.cycles = 0

    def _jittered(self, interval: float) -> float:
        return interval * self._rng.uniform(0.9, 1.1)

    async def check_system(self, cfg: SystemConfig) -> None:
        # Sequential per system: at most one probe lease at a time.
        for subsystem in SUBSYSTEM_KINDS:
            if not cfg.health.is_enabled(subsystem):
                continue
            status = await run_check(cfg, subsystem, self._pool, clock=self._clock)
            self._cache.put(status)
            if status.state != HEALTHY:
                logger.warning(
                    "health: %s/%s %s (%s)",
                    cfg.name,
                    subsystem,
                    status.state,
                    status.detail,
                )

    async def run_forever(self) -> None:
        due = {name: 0.0 for name in self._systems}
        while True:
            now = time.monotonic()
            next_due = None
            for name, cfg in self._systems.items():
                if due[name] <= now:
                    try:
                        await self.check_system(cfg)
                    except Exception:  # a failing check never crashes the loop
                        logger.exception("health check cycle failed for %s", name)
                    due[name] = time.monotonic() + self._jittered(cfg.health.interval)
                    self.cycles += 1
                if next_due is None or due[name] < next_due:
                    next_due = due[name]
            sleep_for = max((next_due or 0) - time.monotonic(), 0.02)
            await asyncio.sleep(sleep_for)

    def start(self) -> None:
        self._task = asyncio.create_task(self.run_forever())

    async def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None
