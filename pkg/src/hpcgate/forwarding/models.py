"""Normalized records returned by the forwarding clients, vendor-agnostic."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional


class JobState(str, Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    CANCELLED = "CANCELLED"

    @property
    def terminal(self) -> bool:
        return self in (JobState.COMPLETED, JobState.FAILED, JobState.CANCELLED)


# Legal lifecycle edges; anything else indicates a backend bug.
ALLOWED_TRANSITIONS: dict[JobState, tuple[JobState, ...]] = {
    JobState.PENDING: (
        JobState.RUNNING,
        JobState.CANCELLED,
    ),
    JobState.RUNNING: (JobState.COMPLETED, JobState.FAILED, JobState.CANCELLED),
    JobState.COMPLETED: (),
    JobState.FAILED: (),
    JobState.CANCELLED: (),
}


@dataclass(frozen=True)
class JobInfo:
    job_id: str
    state: JobState
    submit_time: float
    name: str
    stdout_path: str
    stderr_path: str
    exit_code: Optional[int] = None


@dataclass(frozen=True)
class JobRequest:
    script: str
    working_directory: str
    name: Optional[str] = None
    environment: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class DirEntry:
    name: str
    kind: str  # file | dir | link | other
    size_bytes: int
    mode: int
    modified: float

    def __post_init__(self) -> None:
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be >= 0")
