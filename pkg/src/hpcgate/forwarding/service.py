"""Forwarding layer: translate gateway operations into remote commands.

Every operation is health-gated (cached state only, no probing), acquires
exactly one channel lease, runs its command(s), and releases. Clients are
stateless; nothing here survives a request.
"""

from __future__ import annotations

import secrets
from typing import Optional

from .. import remote_protocol as rp
from ..config import Settings, SystemConfig
from ..errors import (
    ErrorCode,
    GatewayError,
    backend_failure,
    bad_request,
)
from ..health import HealthCache, gate_on_health
from ..identity import PosixIdentity
from ..pool import ChannelLease, PoolKey, SSHConnectionPool
from ..ssh.client import ExecResult
from .models import DirEntry, JobInfo, JobRequest
from .schedulers import SCHEDULER_CLIENTS, SchedulerClient

EXEC_TIMEOUT = 60.0

_EXIT_TO_ERROR = {
    rp.EXIT_NOENT: ErrorCode.BAD_REQUEST,
    rp.EXIT_PERM: ErrorCode.FORBIDDEN,
    rp.EXIT_KIND: ErrorCode.BAD_REQUEST,
    rp.EXIT_TOO_LARGE: ErrorCode.PAYLOAD_TOO_LARGE,
    rp.EXIT_EXISTS: ErrorCode.BAD_REQUEST,
}


def _raise_for_exit(result: ExecResult, system: str, subsystem: str) -> None:
    if result.exit_code == rp.EXIT_OK:
        return
    detail = result.stderr.decode(errors="replace").strip() or (
        f"remote command failed with exit {result.exit_code}"
    )
    code = _EXIT_TO_ERROR.get(result.exit_code, ErrorCode.BACKEND_FAILURE)
    raise GatewayError(code, detail, system=system, subsystem=subsystem)


def _require_absolute(path: str) -> str:
    if not path or not path.startswith("/"):
        raise bad_request(f"path must be absolute, got {path!r}")
    return path


class Forwarder:
    def __init__(self, settings: Settings, pool: SSHConnectionPool, health: HealthCache):
        self._settings = settings
        self._pool = pool
        self._health = health
        self._schedulers: dict[str, SchedulerClient] = {}

    def _system(self, name: str) -> SystemConfig:
        return self._settings.system(name)

    def _scheduler(self, cfg: SystemConfig) -> SchedulerClient:
        client = self._schedulers.get(cfg.name)
        if client is None:
            client = SCHEDULER_CLIENTS[cfg.scheduler_kind]()
            self._schedulers[cfg.name] = client
        return client

    def gate(self, system: str, subsystem: str) -> SystemConfig:
        """Cached-health admission check; raises subsystem_unavailable."""
        cfg = self._system(system)
        gate_on_health(self._health, cfg, subsystem)
        return cfg

    async def _lease(self, cfg: SystemConfig, identity: PosixIdentity) -> ChannelLease:
        return await self._pool.acquire(
            PoolKey(cfg.name, identity.username), cfg.pool
        )

    async def _exec(
        self,
        cfg: SystemConfig,
        identity: PosixIdentity,
        argv: list[str],
        stdin: Optional[bytes] = None,
        timeout: float = EXEC_TIMEOUT,
    ) -> ExecResult:
        lease = await self._lease(cfg, identity)
        try:
            return await self._pool.exec_on_lease(lease, argv, stdin, timeout=timeout)
        finally:
            await self._pool.release(lease)

    # --- filesystem ------------------------------------------------------------

    async def list_dir(
        self, system: str, identity: PosixIdentity, path: str, show_hidden: bool = False
    ) -> list[DirEntry]:
        cfg = self.gate(system, "filesystem")
        _require_absolute(path)
        result = await self._exec(cfg, identity, ["fls", path])
        _raise_for_exit(result, system, "filesystem")
        entries = []
        for line in result.stdout.decode().splitlines():
            if not line:
                continue
            name, kind, size, mode, mtime = line.split(rp.FIELD_SEP)
            if not show_hidden and name.startswith("."):
                continue
            entries.append(
                DirEntry(
                    name=name,
                    kind=kind,
                    size_bytes=int(size),
                    mode=int(mode, 8),
                    modified=float(mtime),
                )
            )
        return sorted(entries, key=lambda e: e.name)

    async def download(self, system: str, identity: PosixIdentity, path: str) -> bytes:
        cfg = self.gate(system, "filesystem")
        _require_absolute(path)
        # One exec: the backend checks the cap and emits a size header before
        # any content, so an oversize file costs no transfer.
        result = await self._exec(
            cfg,
            identity,
            ["fget", "--max-bytes", str(cfg.max_file_transfer_bytes), path],
        )
        _raise_for_exit(result, system, "filesystem")
        header, _, body = result.stdout.partition(b"\n")
        if not header.startswith(rp.SIZE_HEADER):
            raise backend_failure(
                "malformed download stream (missing size header)", system=system
            )
        expected = int(header[len(rp.SIZE_HEADER) :])
        if len(body) != expected:
            raise backend_failure(
                f"download truncated: expected {expected} bytes, got {len(body)}",
                system=system,
            )
        return bytes(body)

    async def upload(
        self,
        system: str,
        identity: PosixIdentity,
        path: str,
        body: bytes,
        overwrite: bool = False,
    ) -> None:
        cfg = self.gate(system, "filesystem")
        _require_absolute(path)
        if len(body) > cfg.max_file_transfer_bytes:
            raise GatewayError(
                ErrorCode.PAYLOAD_TOO_LARGE,
                f"body of {len(body)} bytes exceeds the "
                f"{cfg.max_file_transfer_bytes} byte transfer cap",
                system=system,
            )
        argv = ["fput"]
        if overwrite:
            argv.append("--overwrite")
        argv += [path, str(len(body))]
        result = await self._exec(cfg, identity, argv, stdin=body)
        _raise_for_exit(result, system, "filesystem")

    async def mkdir(self, system: str, identity: PosixIdentity, path: str) -> None:
        cfg = self.gate(system, "filesystem")
        _require_absolute(path)
        result = await self._exec(cfg, identity, ["mkdir", path])
        _raise_for_exit(result, system, "filesystem")

    async def remove_path(self, system: str, identity: PosixIdentity, path: str) -> None:
        cfg = self.gate(system, "filesystem")
        _require_absolute(path)
        result = await self._exec(cfg, identity, ["rm", "-r", path])
        _raise_for_exit(result, system, "filesystem")

    async def checksum(self, system: str, identity: PosixIdentity, path: str) -> str:
        cfg = self.gate(system, "filesystem")
        _require_absolute(path)
        result = await self._exec(cfg, identity, ["sha256sum", path])
        _raise_for_exit(result, system, "filesystem")
        out = result.stdout.decode().strip()
        digest = out.split()[0] if out else ""
        if len(digest) != 64:
            raise backend_failure(f"checksum output unparseable: {out!r}", system=system)
        return digest

    # --- scheduler -------------------------------------------------------------

    async def submit_job(
        self, system: str, identity: PosixIdentity, req: JobRequest
    ) -> JobInfo:
        cfg = self.gate(system, "scheduler")
        if not req.script:
            raise bad_request("job script must be non-empty", system=system)
        _require_absolute(req.working_directory)
        scheduler = self._scheduler(cfg)
        spool_name = f"{req.name or 'job'}-{secrets.token_hex(4)}.sh"
        spool_path = f"{req.working_directory.rstrip('/')}/{spool_name}"
        script = req.script.encode()

        # Spool write, submit and the initial status read share one lease.
        lease = await self._lease(cfg, identity)
        try:
            put = await self._pool.exec_on_lease(
                lease, ["fput", "--overwrite", spool_path, str(len(script))], script
            )
            if put.exit_code != rp.EXIT_OK:
                raise backend_failure(
                    "cannot spool job script: "
                    + put.stderr.decode(errors="replace").strip(),
                    system=system,
                    subsystem="scheduler",
                )
            sub = await self._pool.exec_on_lease(
                lease,
                scheduler.submit_command(spool_path, dict(req.environment), req.name),
            )
            if sub.exit_code != rp.EXIT_OK:
                raise backend_failure(
                    "job submission failed: "
                    + sub.stderr.decode(errors="replace").strip(),
                    system=system,
                    subsystem="scheduler",
                )
            job_id = scheduler.parse_submit(sub.stdout.decode())
            stat = await self._pool.exec_on_lease(
                lease, scheduler.status_command(job_id)
            )
        finally:
            await self._pool.release(lease)
        _raise_for_exit(stat, system, "scheduler")
        return scheduler.parse_status(stat.stdout.decode())

    async def get_job(
        self, system: str, identity: PosixIdentity, job_id: str
    ) -> JobInfo:
        cfg = self.gate(system, "scheduler")
        scheduler = self._scheduler(cfg)
        if not scheduler.is_job_id(job_id):
            raise bad_request(f"malformed job id {job_id!r}", system=system)
        result = await self._exec(cfg, identity, scheduler.status_command(job_id))
        if result.exit_code == rp.EXIT_NOENT:
            raise bad_request(f"unknown job id {job_id}", system=system)
        _raise_for_exit(result, system, "scheduler")
        return scheduler.parse_status(result.stdout.decode())

    async def cancel_job(
        self, system: str, identity: PosixIdentity, job_id: str
    ) -> None:
        cfg = self.gate(system, "scheduler")
        scheduler = self._scheduler(cfg)
        if not scheduler.is_job_id(job_id):
            raise bad_request(f"malformed job id {job_id!r}", system=system)
        result = await self._exec(cfg, identity, scheduler.cancel_command(job_id))
        if result.exit_code == rp.EXIT_NOENT:
            raise bad_request(f"unknown job id {job_id}", system=system)
        _raise_for_exit(result, system, "scheduler")
