"""Pydantic request/response models for the REST surface."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..forwarding.models import DirEntry, JobInfo
from ..health import HealthStatus


class ErrorBody(BaseModel):
    error_code: str
    message: str
    system: Optional[str] = None
    subsystem: Optional[str] = None
    trace_id: str


class HealthStatusOut(BaseModel):
    system: str
    subsystem: str
    state: str
    last_checked: Optional[float] = None
    latency: Optional[float] = None
    detail: str = ""

    @classmethod
    def from_status(cls, status: HealthStatus) -> "HealthStatusOut":
        return cls(**status.__dict__)


class DirEntryOut(BaseModel):
    name: str
    kind: str
    size_bytes: int
    mode: str  # octal text, e.g. "644"
    modified: float

    @classmethod
    def from_entry(cls, entry: DirEntry) -> "DirEntryOut":
        return cls(
            name=entry.name,
            kind=entry.kind,
            size_bytes=entry.size_bytes,
            mode=f"{entry.mode:o}",
            modified=entry.modified,
        )


class ChecksumOut(BaseModel):
    path: str
    algorithm: str = "sha256"
    checksum: str


class MkdirIn(BaseModel):
    path: str


class JobSubmitIn(BaseModel):
    script: str
    working_directory: str
    name: Optional[str] = None
    environment: dict[str, str] = Field(default_factory=dict)


class JobInfoOut(BaseModel):
    job_id: str
    state: str
    submit_time: float
    name: str
    stdout_path: str
    stderr_path: str
    exit_code: Optional[int] = None

    @classmethod
    def from_info(cls, info: JobInfo) -> "JobInfoOut":
        return cls(
            job_id=info.job_id,
            state=info.state.value,
            submit_time=info.submit_time,
            name=info.name,
            stdout_path=info.stdout_path,
            stderr_path=info.stderr_path,
            exit_code=info.exit_code,
        )
