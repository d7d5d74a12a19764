"""Scheduler clients: build vendor commands, parse vendor output.

Every scheduler speaks through this one interface, so supporting another
vendor means adding a client class here and nothing else. The simulated
backend is the production path in this repo; the echo client exists to
prove the abstraction holds for a second implementation.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Mapping, Optional

from .. import remote_protocol as rp
from ..errors import backend_failure
from .models import JobInfo, JobState

logger = logging.getLogger(__name__)

# Vendor state code -> normalized state. Config-free by design.
STATE_NORMALIZATION: dict[str, JobState] = {
    rp.VENDOR_PENDING: JobState.PENDING,
    rp.VENDOR_RUNNING: JobState.RUNNING,
    rp.VENDOR_COMPLETED: JobState.COMPLETED,
    rp.VENDOR_FAILED: JobState.FAILED,
    rp.VENDOR_CANCELLED: JobState.CANCELLED,
}


def normalize_state(vendor_code: str) -> JobState:
    state = STATE_NORMALIZATION.get(vendor_code)
    if state is None:
        logger.warning("unknown backend job state %r, treating as FAILED", vendor_code)
        return JobState.FAILED
    return state


class SchedulerClient(ABC):
    """Command/parse pairs for one scheduler vendor."""

    @abstractmethod
    def submit_command(
        self,
        script_path: str,
        environment: Mapping[str, str],
        name: Optional[str] = None,
    ) -> list[str]: ...

    @abstractmethod
    def parse_submit(self, stdout: str) -> str:
        """Extract the job id from submit output."""

    @abstractmethod
    def status_command(self, job_id: str) -> list[str]: ...

    @abstractmethod
    def parse_status(self, stdout: str) -> JobInfo: ...

    @abstractmethod
    def cancel_command(self, job_id: str) -> list[str]: ...

    @abstractmethod
    def is_job_id(self, job_id: str) -> bool: ...


class SimulatedSchedulerClient(SchedulerClient):
    def submit_command(
        self,
        script_path: str,
        environment: Mapping[str, str],
        name: Optional[str] = None,
    ) -> list[str]:
        argv = ["fsub"]
        for key, value in environment.items():
            argv += ["--env", f"{key}={value}"]
        if name:
            argv += ["--name", name]
        argv.append(script_path)
        return argv

    def parse_submit(self, stdout: str) -> str:
        for line in stdout.splitlines():
            if line.startswith("JOBID "):
                return line.split(None, 1)[1].strip()
        raise backend_failure(f"submit output unparseable: {stdout!r}")

    def status_command(self, job_id: str) -> list[str]:
        return ["fstat", job_id]

    def parse_status(self, stdout: str) -> JobInfo:
        line = stdout.strip().splitlines()[0] if stdout.strip() else ""
        fields = line.split(rp.FIELD_SEP)
        if len(fields) != 7:
            raise backend_failure(f"job record unparseable: {line!r}")
        job_id, state_code, exit_text, submit_epoch, name, out_path, err_path = fields
        return JobInfo(
            job_id=job_id,
            state=normalize_state(state_code),
            submit_time=float(submit_epoch),
            name=name,
            stdout_path=out_path,
            stderr_path=err_path,
            exit_code=int(exit_text) if exit_text else None,
        )

    def cancel_command(self, job_id: str) -> list[str]:
        return ["fcancel", job_id]

    def is_job_id(self, job_id: str) -> bool:
        return job_id.isdigit()


class EchoSchedulerClient(SchedulerClient):
    """Minimal second implementation; proves the interface is vendor-neutral."""

    def submit_command(
        self,
        script_path: str,
        environment: Mapping[str, str],
        name: Optional[str] = None,
    ) -> list[str]:
        return ["echo", "JOBID", "1"]

    def parse_submit(self, stdout: str) -> str:
        parts = stdout.split()
        return parts[1] if len(parts) >= 2 else "1"

    def status_command(self, job_id: str) -> list[str]:
        return ["echo", rp.job_record(job_id, rp.VENDOR_COMPLETED, 0, 0.0, "echo", "", "")]

    def parse_status(self, stdout: str) -> JobInfo:
        return SimulatedSchedulerClient().parse_status(stdout)

    def cancel_command(self, job_id: str) -> list[str]:
        return ["true"]

    def is_job_id(self, job_id: str) -> bool:
        return job_id.isdigit()


SCHEDULER_CLIENTS: dict[str, type[SchedulerClient]] = {
    "simulated": SimulatedSchedulerClient,
    "echo": EchoSchedulerClient,
}
