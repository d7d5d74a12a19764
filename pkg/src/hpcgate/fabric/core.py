"""Fabric assembly: one object owning every emulated backend.

``Fabric.start()`` brings up the embedded SSH server and prepares key
material on disk (client key, known-hosts line), so a gateway can be
pointed at it with nothing but a config file. The HTTP mocks (identity
provider, relationship store, counters endpoint) are plain ASGI apps;
callers either serve them on sockets or mount them in-process.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI

from ..ssh import keys as sshkeys
from .idp import MockIdP
from .relations import StubRelationStore
from .scheduler_sim import SimScheduler
from .ssh_server import FabricSSHServer


@dataclass(frozen=True)
class FabricConfig:
    backing_dir: str
    users: tuple[str, ...] = ("alice", "bob", "probe")
    accept_delay: float = 0.1
    max_unauth_startups: int = 10
    max_sessions: int = 10
    idp_introspection_delay: float = 0.0
    authz_delay: float = 0.0
    dispatch_delay: float = 0.2
    tuples: tuple[tuple[str, str, str], ...] = ()

    def validate(self) -> None:
        if self.max_unauth_startups < 1 or self.max_sessions < 1:
            raise ValueError("fabric caps must be >= 1")
        backing = Path(self.backing_dir)
        if not backing.is_dir() or not os.access(backing, os.W_OK):
            raise ValueError(f"backing_dir {self.backing_dir!r} must exist and be writable")
        if not self.users:
            raise ValueError("at least one test user required")


@dataclass
class Fabric:
    config: FabricConfig
    idp: MockIdP = field(init=False)
    relations: StubRelationStore = field(init=False)
    scheduler: SimScheduler = field(init=False)
    ssh: FabricSSHServer = field(init=False)

    def __post_init__(self) -> None:
        self.config.validate()
        self.idp = MockIdP(introspection_delay=self.config.idp_introspection_delay)
        self.relations = StubRelationStore(
            tuples=self.config.tuples, delay=self.config.authz_delay
        )
        self.scheduler = SimScheduler(
            self.config.backing_dir, dispatch_delay=self.config.dispatch_delay
        )
        self.ssh = FabricSSHServer(
            backing_dir=self.config.backing_dir,
            users=self.config.users,
            scheduler=self.scheduler,
            accept_delay=self.config.accept_delay,
            max_unauth_startups=self.config.max_unauth_startups,
            max_sessions=self.config.max_sessions,
        )
        self._fabric_dir = Path(self.config.backing_dir) / ".fabric"
        self._fabric_dir.mkdir(parents=True, exist_ok=True)
        self._started = False

    # --- lifecycle ---------------------------------------------------------------

    async def start(self, ssh_host: str = "127.0.0.1", ssh_port: int = 0) -> None:
        await self.ssh.start(ssh_host, ssh_port)
        self._write_material()
        self._started = True

    async def stop(self) -> None:
        await self.ssh.stop()
        await self.scheduler.shutdown()
        self._started = False

    async def restart_ssh(self) -> None:
        """Bring the SSH server back on the same port (fault-injection helper)."""
        await self.ssh.start(self.ssh.host, self.ssh.port)
        self._started = True

    def _write_material(self) -> None:
        self.client_key_path = self._fabric_dir / "client_key.pem"
        self.client_key_path.write_bytes(sshkeys.private_key_to_pem(self.ssh.client_key))
        self.known_hosts_path = self._fabric_dir / "known_hosts"
        self.known_hosts_path.write_text(self.ssh.known_hosts_line() + "\n")
        self.probe_path = self._fabric_dir / "probe"
        self.probe_path.write_text("ok\n")

    # --- observability ---------------------------------------------------------------

    def counters(self) -> dict:
        return {
            "ssh": self.ssh.counters.as_dict(),
            "idp": dict(self.idp.counters),
            "authz": dict(self.relations.counters),
        }

    def build_admin_app(self) -> FastAPI:
        app = FastAPI(title="fabric-admin", docs_url=None, redoc_url=None)

        @app.get("/counters")
        async def counters() -> dict:
            return self.counters()

        return app

    # --- convenience ------------------------------------------------------------------

    def mint_token(self, **kwargs) -> str:
        return self.idp.mint(**kwargs)

    def gateway_config_dict(
        self,
        *,
        system_name: str = "cluster-a",
        pooled: bool = True,
        authn_mode: str = "offline",
        authz_mode: str = "claims",
        jwks_url: str = "http://idp.fabric.invalid/jwks",
        introspection_url: Optional[str] = None,
        authz_url: Optional[str] = None,
        health: Optional[dict] = None,
        pool_overrides: Optional[dict] = None,
        max_inflight_requests: Optional[int] = None,
    ) -> dict:
        """A ready-to-parse gateway config pointing at this fabric.

        ``pooled=False`` flips the pool into connection-per-request mode
        (single channel per connection, zero idle ttl).
        """
        if not self._started:
            raise RuntimeError("fabric must be started first (port unknown)")
        pool: dict = {"max_connections_per_identity": 2, "max_channels_per_connection": 8}
        if not pooled:
            pool.update({"max_channels_per_connection": 1, "idle_ttl": 0})
        if pool_overrides:
            pool.update(pool_overrides)
        authn: dict = {"mode": authn_mode, "jwks_urls": [jwks_url]}
        if authn_mode == "introspection":
            authn["introspection_url"] = (
                introspection_url or "http://idp.fabric.invalid/introspect"
            )
            authn["introspection_client_id"] = "gateway"
            authn["introspection_client_secret"] = "fabric-secret"
        authz: dict = {"mode": authz_mode}
        if authz_mode == "external":
            authz["external_url"] = authz_url or "http://authz.fabric.invalid"
        config = {
            "authn": authn,
            "authz": authz,
            "ssh": {
                "client_key": str(self.client_key_path),
                "known_hosts": str(self.known_hosts_path),
            },
            "systems": [
                {
                    "name": system_name,
                    "ssh_host": self.ssh.host,
                    "ssh_port": self.ssh.port,
                    "scheduler_kind": "simulated",
                    "probe_path": str(self.probe_path),
                    "probe_username": "probe",
                    "pool": pool,
                    **({"health": health} if health else {}),
                }
            ],
        }
        if max_inflight_requests is not None:
            config["max_inflight_requests"] = max_inflight_requests
        return config
