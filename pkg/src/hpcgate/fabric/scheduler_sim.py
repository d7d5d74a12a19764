"""Simulated scheduler: jobs are real subprocesses of the fabric host.

A submitted script waits out a short queue dwell (observable PENDING),
then runs under ``sh`` with stdout/stderr captured next to the job's
working directory. State transitions are driven purely by process
lifetime and validated against the normalized lifecycle graph.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .. import remote_protocol as rp
from ..forwarding.models import ALLOWED_TRANSITIONS
from ..forwarding.schedulers import normalize_state

logger = logging.getLogger(__name__)


@dataclass
class JobRecord:
    job_id: int
    name: str
    state: str  # vendor code
    submit_epoch: float
    script_path: str
    workdir: str
    stdout_path: str
    stderr_path: str
    exit_code: Optional[int] = None
    environment: dict = field(default_factory=dict)
    cancelled: bool = False
    proc: Optional[asyncio.subprocess.Process] = None
    dispatch_task: Optional[asyncio.Task] = None

    def record_line(self) -> str:
        return rp.job_record(
            str(self.job_id),
            self.state,
            self.exit_code,
            self.submit_epoch,
            self.name,
            self.stdout_path,
            self.stderr_path,
        )


class SimScheduler:
    def __init__(self, backing_dir: str, dispatch_delay: float = 0.2):
        self._jobs: dict[int, JobRecord] = {}
        self._next_id = 1
        self._dispatch_delay = dispatch_delay
        self._spool_dir = Path(backing_dir) / ".fabric" / "jobs"
        self._spool_dir.mkdir(parents=True, exist_ok=True)

    def _set_state(self, rec: JobRecord, new_code: str) -> None:
        old = normalize_state(rec.state)
        new = normalize_state(new_code)
        if new not in ALLOWED_TRANSITIONS[old]:
            raise AssertionError(f"illegal job transition {old} -> {new}")
        rec.state = new_code
        self._persist(rec)

    def _persist(self, rec: JobRecord) -> None:
        path = self._spool_dir / f"{rec.job_id}.json"
        path.write_text(
            json.dumps(
                {
                    "job_id": rec.job_id,
                    "name": rec.name,
                    "state": rec.state,
                    "exit_code": rec.exit_code,
                    "submit_epoch": rec.submit_epoch,
                    "script": rec.script_path,
                    "workdir": rec.workdir,
                }
            )
        )

    async def submit(
        self, script_path: str, environment: dict, now: float, name: "str | None" = None
    ) -> int:
        job_id = self._next_id
        self._next_id += 1
        workdir = os.path.dirname(script_path)
        name = name or Path(script_path).stem
        rec = JobRecord(
            job_id=job_id,
            name=name,
            state=rp.VENDOR_PENDING,
            submit_epoch=now,
            script_path=script_path,
            workdir=workdir,
            stdout_path=os.path.join(workdir, f"job-{job_id}.out"),
            stderr_path=os.path.join(workdir, f"job-{job_id}.err"),
            environment=environment,
        )
        self._jobs[job_id] = rec
        self._persist(rec)
        rec.dispatch_task = asyncio.create_task(self._dispatch(rec))
        return job_id

    async def _dispatch(self, rec: JobRecord) -> None:
        try:
            await asyncio.sleep(self._dispatch_delay)  # queue dwell
        except asyncio.CancelledError:
            return
        if rec.cancelled:
            return
        env = dict(os.environ)
        env.update(rec.environment)
        try:
            with open(rec.stdout_path, "wb") as out, open(rec.stderr_path, "wb") as err:
                rec.proc = await asyncio.create_subprocess_exec(
                    "/bin/sh",
                    rec.script_path,
                    cwd=rec.workdir,
                    stdout=out,
                    stderr=err,
                    env=env,
                )
        except OSError as exc:
            logger.warning("job %s failed to start: %s", rec.job_id, exc)
            rec.exit_code = 127
            self._set_state(rec, rp.VENDOR_FAILED)
            return
        self._set_state(rec, rp.VENDOR_RUNNING)
        rc = await rec.proc.wait()
        rec.exit_code = rc
        if rec.cancelled:
            self._set_state(rec, rp.VENDOR_CANCELLED)
        elif rc == 0:
            self._set_state(rec, rp.VENDOR_COMPLETED)
        else:
            self._set_state(rec, rp.VENDOR_FAILED)

    def status_line(self, job_id: int) -> Optional[str]:
        rec = self._jobs.get(job_id)
        return rec.record_line() if rec else None

    async def cancel(self, job_id: int) -> bool:
        """True if the job exists; cancelling a terminal job is a no-op."""
        rec = self._jobs.get(job_id)
        if rec is None:
            return False
        state = rec.state
        if state == rp.VENDOR_PENDING:
            rec.cancelled = True
            if rec.dispatch_task is not None:
                rec.dispatch_task.cancel()
            self._set_state(rec, rp.VENDOR_CANCELLED)
        elif state == rp.VENDOR_RUNNING and rec.proc is not None:
            rec.cancelled = True
            try:
                rec.proc.terminate()
            except ProcessLookupError:
                pass
            # the dispatch task observes the exit and records CANCELLED
        return True

    async def shutdown(self) -> None:
        for rec in self._jobs.values():
            if rec.dispatch_task is not None and not rec.dispatch_task.done():
                rec.dispatch_task.cancel()
            if rec.proc is not None and rec.proc.returncode is None:
                try:
                    rec.proc.kill()
                except ProcessLookupError:
                    pass
        await asyncio.gather(
            *[r.dispatch_task for r in self._jobs.values() if r.dispatch_task],
            return_exceptions=True,
        )
