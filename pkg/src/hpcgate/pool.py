"""SSH connection pool: persistent connections keyed by (system, user),
leasing multiplexed channels to requests.

Capacity rules per key: at most ``max_connections_per_identity`` live
connections, each carrying at most ``max_channels_per_connection``
concurrent leases. When capacity is exhausted, acquirers queue FIFO and are
woken by direct handoff, so a release cannot be stolen by a late arrival.
The internal lock is never held across network I/O; dials happen outside it
against a reserved slot.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import shlex
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Optional

from .config import PoolParams
from .errors import ErrorCode, GatewayError, backend_failure
from .ssh import SSHClientConnection, SSHError
from .ssh.client import ExecResult

logger = logging.getLogger(__name__)

STATE_LIVE = "live"
STATE_BROKEN = "broken"

_conn_counter = itertools.count(1)
_lease_counter = itertools.count(1)


@dataclass(frozen=True)
class PoolKey:
    system: str
    username: str

    def __post_init__(self) -> None:
        if not self.system or not self.username:
            raise ValueError("pool key requires non-empty system and username")


class PooledConnection:
    def __init__(self, key: PoolKey, conn: SSHClientConnection, now: float):
        self.id = f"conn-{next(_conn_counter)}"
        self.key = key
        self.conn = conn
        self.open_channels = 0
        self.last_used = now
        self.state = STATE_LIVE

    @property
    def is_live(self) -> bool:
        return self.state == STATE_LIVE


@dataclass
class ChannelLease:
    connection_id: str
    lease_id: str
    acquired_at: float
    key: PoolKey
    _pooled: PooledConnection = field(repr=False)
    released: bool = False


class _Waiter:
    __slots__ = ("future",)

    def __init__(self) -> None:
        self.future: asyncio.Future = asyncio.get_running_loop().create_future()


_DIAL_PERMIT = object()

Dialer = Callable[[PoolKey], Awaitable[SSHClientConnection]]


class SSHConnectionPool:
    def __init__(
        self,
        dialer: Dialer,
        params_for_system: Callable[[str], PoolParams],
        clock: Callable[[], float] = time.monotonic,
    ):
        self._dialer = dialer
        self._params_for = params_for_system
        self._clock = clock
        self._lock = asyncio.Lock()
        self._conns: dict[PoolKey, list[PooledConnection]] = {}
        self._pending_dials: dict[PoolKey, int] = {}
        self._waiters: dict[PoolKey, deque[_Waiter]] = {}
        self._outstanding = 0
        self._closed = False

    # --- introspection (used heavily by tests) ---------------------------------

    @property
    def outstanding_leases(self) -> int:
        return self._outstanding

    def connection_count(self, key: PoolKey) -> int:
        return len(self._conns.get(key, []))

    def snapshot(self) -> dict:
        return {
            "outstanding_leases": self._outstanding,
            "connections": {
                f"{key.system}/{key.username}": [
                    {
                        "id": pc.id,
                        "open_channels": pc.open_channels,
                        "state": pc.state,
                        "last_used": pc.last_used,
                    }
                    for pc in conns
                ]
                for key, conns in self._conns.items()
                if conns
            },
        }

    # --- acquire / release ------------------------------------------------------

    async def acquire(
        self, key: PoolKey, params: Optional[PoolParams] = None, now: Optional[float] = None
    ) -> ChannelLease:
        """Lease a channel slot, dialing or queueing as capacity allows."""
        if self._closed:
            raise backend_failure("pool is shut down", system=key.system)
        params = params or self._params_for(key.system)
        start = self._clock() if now is None else now
        deadline = start + params.acquire_timeout

        while True:
            waiter: Optional[_Waiter] = None
            dial = False
            async with self._lock:
                queue = self._waiters.setdefault(key, deque())
                if not queue:
                    pc = self._find_spare(key, params)
                    if pc is not None:
                        return self._grant(pc, now)
                    if self._slot_free(key, params):
                        self._pending_dials[key] = self._pending_dials.get(key, 0) + 1
                        dial = True
                if not dial:
                    waiter = _Waiter()
                    queue.append(waiter)

            if dial:
                return await self._dial_and_grant(key, params, deadline, now)

            assert waiter is not None
            remaining = deadline - self._clock()
            granted = await self._await_waiter(key, waiter, remaining)
            if granted is _DIAL_PERMIT:
                return await self._dial_and_grant(key, params, deadline, now)
            if granted is not None:
                return self._grant_handoff(granted, now)
            # spurious wake (connection vanished before handoff) -> retry

    def _find_spare(self, key: PoolKey, params: PoolParams) -> Optional[PooledConnection]:
        for pc in list(self._conns.get(key, [])):
            if pc.is_live and pc.conn.is_closed:
                # transport died underneath us (e.g. backend restart)
                pc.state = STATE_BROKEN
            if not pc.is_live:
                if pc.open_channels == 0:
                    self._remove(pc)
                    asyncio.ensure_future(self._close_conn(pc))
                continue
            if pc.open_channels < params.max_channels_per_connection:
                return pc
        return None

    def _slot_free(self, key: PoolKey, params: PoolParams) -> bool:
        used = len(self._conns.get(key, [])) + self._pending_dials.get(key, 0)
        return used < params.max_connections_per_identity

    def _grant(self, pc: PooledConnection, now: Optional[float]) -> ChannelLease:
        pc.open_channels += 1
        pc.last_used = self._clock() if now is None else now
        self._outstanding += 1
        return ChannelLease(
            connection_id=pc.id,
            lease_id=f"lease-{next(_lease_counter)}",
            acquired_at=pc.last_used,
            key=pc.key,
            _pooled=pc,
        )

    def _grant_handoff(self, pc: PooledConnection, now: Optional[float]) -> ChannelLease:
        # open_channels AND the outstanding count were already bumped by the
        # committer under the lock; this only materializes the lease object.
        ts = self._clock() if now is None else now
        pc.last_used = ts
        return ChannelLease(
            connection_id=pc.id,
            lease_id=f"lease-{next(_lease_counter)}",
            acquired_at=ts,
            key=pc.key,
            _pooled=pc,
        )

    async def _await_waiter(self, key: PoolKey, waiter: _Waiter, remaining: float):
        try:
            if remaining <= 0:
                raise asyncio.TimeoutError
            return await asyncio.wait_for(asyncio.shield(waiter.future), remaining)
        except asyncio.TimeoutError:
            async with self._lock:
                if waiter.future.done():
                    # Handoff raced the timeout; accept it rather than leak.
                    granted = waiter.future.result()
                    if granted is not _DIAL_PERMIT:
                        return granted
                    self._release_dial_permit(key)
                else:
                    self._discard_waiter(key, waiter)
            raise GatewayError(
                ErrorCode.POOL_EXHAUSTED,
                f"no channel available within acquire_timeout for {key.username}@{key.system}",
                system=key.system,
            ) from None
        except asyncio.CancelledError:
            # The acquirer itself was cancelled (e.g. client disconnect):
            # anything already committed to us must flow back to the pool.
            stray: Optional[ChannelLease] = None
            async with self._lock:
                if waiter.future.done():
                    granted = waiter.future.result()
                    if granted is _DIAL_PERMIT:
                        self._release_dial_permit(key)
                    else:
                        stray = self._grant_handoff(granted, None)
                else:
                    self._discard_waiter(key, waiter)
            if stray is not None:
                await self.release(stray)
            raise

    def _discard_waiter(self, key: PoolKey, waiter: _Waiter) -> None:
        try:
            self._waiters.get(key, deque()).remove(waiter)
        except ValueError:
            pass
        waiter.future.cancel()

    async def _dial_and_grant(
        self,
        key: PoolKey,
        params: PoolParams,
        deadline: float,
        now: Optional[float],
    ) -> ChannelLease:
        try:
            remaining = max(deadline - self._clock(), 0.01)
            conn = await asyncio.wait_for(self._dialer(key), remaining)
        except Exception as exc:
            async with self._lock:
                self._release_dial_permit(key)
            if isinstance(exc, asyncio.TimeoutError):
                raise backend_failure(
                    f"SSH dial timed out for {key.username}@{key.system}",
                    system=key.system,
                ) from None
            raise backend_failure(
                f"SSH dial failed for {key.username}@{key.system}: {exc}",
                system=key.system,
            ) from exc

        async with self._lock:
            self._pending_dials[key] = self._pending_dials.get(key, 0) - 1
            ts = self._clock() if now is None else now
            pc = PooledConnection(key, conn, ts)
            self._conns.setdefault(key, []).append(pc)
            lease = self._grant(pc, now)
            # Extra capacity on the fresh connection serves queued waiters.
            queue = self._waiters.get(key, deque())
            while queue and pc.open_channels < params.max_channels_per_connection:
                w = self._pop_waiter(queue)
                if w is None:
                    break
                self._commit_handoff(pc, w)
            return lease

    def _commit_handoff(self, pc: PooledConnection, w: _Waiter) -> None:
        """Under lock: irrevocably assign a channel slot to a waiter. The
        slot counts as leased from this moment, keeping conservation exact."""
        pc.open_channels += 1
        self._outstanding += 1
        w.future.set_result(pc)

    def _release_dial_permit(self, key: PoolKey) -> None:
        """Called under lock after a failed dial: free the slot or pass it on."""
        self._pending_dials[key] = self._pending_dials.get(key, 0) - 1
        queue = self._waiters.get(key, deque())
        w = self._pop_waiter(queue)
        if w is not None:
            self._pending_dials[key] += 1
            w.future.set_result(_DIAL_PERMIT)

    @staticmethod
    def _pop_waiter(queue: deque) -> Optional[_Waiter]:
        while queue:
            w = queue.popleft()
            if not w.future.done():
                return w
        return None

    async def release(self, lease: ChannelLease, now: Optional[float] = None) -> None:
        """Return a leased channel slot; wakes the longest waiter, if any."""
        if lease.released:
            raise RuntimeError(f"lease {lease.lease_id} released twice")
        lease.released = True
        to_close: Optional[PooledConnection] = None
        async with self._lock:
            pc = lease._pooled
            key = pc.key
            params = self._params_for(key.system)
            ts = self._clock() if now is None else now
            pc.open_channels -= 1
            pc.last_used = ts
            self._outstanding -= 1
            queue = self._waiters.get(key, deque())
            if pc.is_live and not (params.idle_ttl <= 0 and pc.open_channels == 0):
                w = self._pop_waiter(queue)
                if w is not None:
                    self._commit_handoff(pc, w)
            else:
                # Connection-per-request (ttl 0) or broken: tear down once
                # drained, and pass the freed slot to a waiter as a dial.
                if pc.open_channels == 0:
                    self._remove(pc)
                    to_close = pc
                if queue and self._slot_free(key, params):
                    w = self._pop_waiter(queue)
                    if w is not None:
                        self._pending_dials[key] = self._pending_dials.get(key, 0) + 1
                        w.future.set_result(_DIAL_PERMIT)
        if to_close is not None:
            await self._close_conn(to_close)

    def _remove(self, pc: PooledConnection) -> None:
        conns = self._conns.get(pc.key, [])
        if pc in conns:
            conns.remove(pc)

    async def _close_conn(self, pc: PooledConnection) -> None:
        try:
            await pc.conn.close()
        except (SSHError, ConnectionError, OSError) as exc:
            logger.warning("closing %s failed: %s", pc.id, exc)

    def mark_broken(self, lease: ChannelLease) -> None:
        """Flag the lease's connection unusable; it drains and is torn down."""
        pc = lease._pooled
        if pc.state != STATE_BROKEN:
            pc.state = STATE_BROKEN
            # Fail fast for everything sharing the transport.
            asyncio.ensure_future(self._close_conn(pc))

    # --- exec -------------------------------------------------------------------

    async def exec_on_lease(
        self,
        lease: ChannelLease,
        command: list[str],
        stdin: Optional[bytes] = None,
        timeout: float = 30.0,
    ) -> ExecResult:
        """Run one remote command on the leased channel, argv quoted shell-safe."""
        if lease.released:
            raise RuntimeError(f"lease {lease.lease_id} already released")
        pc = lease._pooled
        if not pc.is_live:
            raise backend_failure(
                "connection is broken", system=lease.key.system
            )
        cmdline = shlex.join(command)
        try:
            result = await asyncio.wait_for(
                pc.conn.exec(cmdline, stdin or b""), timeout
            )
        except asyncio.TimeoutError:
            self.mark_broken(lease)
            raise backend_failure(
                f"remote command timed out after {timeout}s",
                system=lease.key.system,
            ) from None
        except SSHError as exc:
            self.mark_broken(lease)
            raise backend_failure(
                f"transport failure: {exc}", system=lease.key.system
            ) from exc
        pc.last_used = self._clock()
        return result

    # --- eviction ----------------------------------------------------------------

    async def evict_idle(
        self, now: Optional[float] = None, params: Optional[PoolParams] = None
    ) -> int:
        """Close idle connections past their ttl; returns how many closed."""
        ts = self._clock() if now is None else now
        victims: list[PooledConnection] = []
        async with self._lock:
            for key, conns in self._conns.items():
                p = params or self._params_for(key.system)
                for pc in list(conns):
                    idle = ts - pc.last_used
                    if pc.open_channels == 0 and (
                        not pc.is_live or idle > p.idle_ttl
                    ):
                        conns.remove(pc)
                        victims.append(pc)
        for pc in victims:
            await self._close_conn(pc)
        return len(victims)

    async def reaper(self, period: Optional[float] = None) -> None:
        """Background eviction loop; cancelled at shutdown."""
        if period is None:
            ttls = [p for p in self._all_ttls() if p > 0]
            period = min(ttls) / 6 if ttls else 10.0
        period = max(period, 0.25)
        while True:
            await asyncio.sleep(period)
            try:
                await self.evict_idle()
            except Exception:  # pragma: no cover - reaper must not die
                logger.exception("idle eviction failed")

    def _all_ttls(self) -> list[float]:
        ttls = []
        for key in list(self._conns) or []:
            ttls.append(self._params_for(key.system).idle_ttl)
        return ttls or [60.0]

    async def close(self) -> None:
        self._closed = True
        async with self._lock:
            victims = [pc for conns in self._conns.values() for pc in conns]
            self._conns.clear()
            for queue in self._waiters.values():
                while queue:
                    w = queue.popleft()
                    if not w.future.done():
                        w.future.cancel()
        for pc in victims:
            await self._close_conn(pc)
