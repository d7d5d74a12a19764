"""Embedded SSH server with emulated sshd limits and exact counters.

Reproduces the two daemon behaviours that matter for connection pooling
without needing a real sshd: connections arriving while too many
handshakes are in flight are dropped outright (MaxStartups), and channel
opens beyond the per-connection session cap are rejected (MaxSessions).
An optional per-connection accept delay stands in for real key-exchange
and authentication cost, making pooling effects visible at desk scale.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric import ed25519

from ..ssh import keys as sshkeys
from ..ssh.server import ServerHooks, SSHServerConnection
from .commands import CommandContext, run_command
from .scheduler_sim import SimScheduler

logger = logging.getLogger(__name__)


@dataclass
class SSHCounters:
    connections_opened: int = 0  # completed authentication
    connections_dropped: int = 0  # refused under the unauth-startup cap
    channels_opened: int = 0
    channels_rejected: int = 0
    commands_executed: int = 0
    auth_failures: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FabricSSHServer:
    backing_dir: str
    users: tuple[str, ...]
    scheduler: SimScheduler
    accept_delay: float = 0.1
    max_unauth_startups: int = 10
    max_sessions: int = 10
    host_key: ed25519.Ed25519PrivateKey = field(default_factory=sshkeys.generate_private_key)
    client_key: ed25519.Ed25519PrivateKey = field(default_factory=sshkeys.generate_private_key)

    def __post_init__(self) -> None:
        self.counters = SSHCounters()
        self._authorized_blob = sshkeys.public_key_blob(self.client_key)
        self._unauth_inflight = 0
        self._server: asyncio.base_events.Server | None = None
        self._conn_tasks: set[asyncio.Task] = set()
        self.host = "127.0.0.1"
        self.port = 0

    # --- lifecycle -----------------------------------------------------------

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> None:
        self._server = await asyncio.start_server(self._handle, host, port)
        sock = self._server.sockets[0]
        self.host, self.port = sock.getsockname()[:2]

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        for task in list(self._conn_tasks):
            task.cancel()
        await asyncio.gather(*self._conn_tasks, return_exceptions=True)

    @property
    def endpoint(self) -> tuple[str, int]:
        return self.host, self.port

    def host_key_blob(self) -> bytes:
        return sshkeys.public_key_blob(self.host_key)

    def known_hosts_line(self) -> str:
        import base64

        blob = base64.b64encode(self.host_key_blob()).decode()
        return f"[{self.host}]:{self.port} {sshkeys.KEY_ALG} {blob}"

    # --- connection handling ----------------------------------------------------

    def _check_auth(self, username: str, blob: bytes) -> bool:
        ok = username in self.users and blob == self._authorized_blob
        if not ok:
            self.counters.auth_failures += 1
        return ok

    async def _exec_handler(
        self, username: str, command: str, stdin: bytes
    ) -> tuple[int, bytes, bytes]:
        self.counters.commands_executed += 1
        ctx = CommandContext(
            root=Path(self.backing_dir), scheduler=self.scheduler, username=username
        )
        return await run_command(ctx, command, stdin)

    async def _handle(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        task = asyncio.current_task()
        if task is not None:
            self._conn_tasks.add(task)
            task.add_done_callback(self._conn_tasks.discard)

        if self._unauth_inflight >= self.max_unauth_startups:
            # sshd drops excess unauthenticated connections on the floor
            self.counters.connections_dropped += 1
            writer.close()
            return

        self._unauth_inflight += 1
        authenticated = False

        def on_authenticated(username: str) -> None:
            nonlocal authenticated
            authenticated = True
            self._unauth_inflight -= 1
            self.counters.connections_opened += 1

        hooks = ServerHooks(
            on_authenticated=on_authenticated,
            on_channel_open=lambda: setattr(
                self.counters,
                "channels_opened",
                self.counters.channels_opened + 1,
            ),
            on_channel_rejected=lambda: setattr(
                self.counters,
                "channels_rejected",
                self.counters.channels_rejected + 1,
            ),
        )
        try:
            if self.accept_delay > 0:
                await asyncio.sleep(self.accept_delay)
            conn = SSHServerConnection(
                reader,
                writer,
                self.host_key,
                self._check_auth,
                self._exec_handler,
                max_sessions=self.max_sessions,
                hooks=hooks,
            )
            await conn.run()
        except asyncio.CancelledError:
            raise
        except Exception as exc:  # pragma: no cover - connection teardown races
            logger.debug("connection handler ended: %s", exc)
        finally:
            if not authenticated:
                self._unauth_inflight -= 1
            writer.close()
