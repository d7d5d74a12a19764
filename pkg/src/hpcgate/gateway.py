"""Gateway assembly: wires config, authn, pool, health, and forwarding
into one object with an explicit start/stop lifecycle.

Instances are independent: two gateways built from the same settings share
nothing but the backends they talk to, which is what makes horizontal
scaling (and the statelessness tests) work.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Optional

import httpx

from .authn import Authenticator
from .config import Settings
from .forwarding import Forwarder
from .health import HealthCache, HealthChecker
from .pool import PoolKey, SSHConnectionPool
from .ssh import client as ssh_client
from .ssh import load_private_key
from .ssh.known_hosts import load_known_hosts

logger = logging.getLogger(__name__)


class Gateway:
    def __init__(self, settings: Settings, http_client: Optional[httpx.AsyncClient] = None):
        self.settings = settings
        self._owns_http = http_client is None
        self.http = http_client or httpx.AsyncClient()
        self._client_key = load_private_key(settings.ssh.client_key)
        self._known_hosts = load_known_hosts(settings.ssh.known_hosts)
        self.authenticator = Authenticator(settings.authn, self.http)
        self.pool = SSHConnectionPool(
            dialer=self._dial,
            params_for_system=lambda name: settings.system(name).pool,
        )
        self.health_cache = HealthCache()
        self.checker = HealthChecker(settings.systems, self.pool, self.health_cache)
        self.forwarder = Forwarder(settings, self.pool, self.health_cache)
        self._reaper_task: Optional[asyncio.Task] = None
        self._started = False

        from .http.app import build_app  # deferred: http imports this module's types

        self.app = build_app(self)

    async def _dial(self, key: PoolKey) -> ssh_client.SSHClientConnection:
        cfg = self.settings.system(key.system)
        expected = self._known_hosts.get((cfg.ssh_host, cfg.ssh_port))

        def verify(blob: bytes) -> bool:
            return expected is not None and blob == expected

        return await ssh_client.connect(
            cfg.ssh_host,
            cfg.ssh_port,
            key.username,
            self._client_key,
            verify,
            connect_timeout=cfg.pool.acquire_timeout,
        )

    async def start(self) -> None:
        """Fetch keys (fail fast), start the health checker and pool reaper."""
        if self._started:
            return
        await self.authenticator.start()
        self.checker.start()
        self._reaper_task = asyncio.create_task(self.pool.reaper())
        self._started = True
        logger.info(
            "gateway ready: %d system(s), authn=%s, authz=%s",
            len(self.settings.systems),
            self.settings.authn.mode,
            self.settings.authz.mode,
        )

    async def stop(self) -> None:
        if not self._started:
            return
        self._started = False
        await self.checker.stop()
        if self._reaper_task is not None:
            self._reaper_task.cancel()
            try:
                await self._reaper_task
            except asyncio.CancelledError:
                pass
        await self.pool.close()
        if self._owns_http:
            await self.http.aclose()
