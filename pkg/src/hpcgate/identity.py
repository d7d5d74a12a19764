"""POSIX identity carried through the request pipeline.

Usernames extracted from token claims are validated against the POSIX
username grammar before they are ever interpolated into anything, which
closes the door on shell injection through identity claims.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

POSIX_USERNAME_RE = re.compile(r"[a-z_][a-z0-9_-]{0,31}\Z")


class ClaimSource(str, Enum):
    PREFERRED_USERNAME = "preferred_username"
    USERNAME = "username"
    SERVICE_ACCOUNT_MAP = "service_account_map"


def is_valid_posix_username(name: str) -> bool:
    return bool(POSIX_USERNAME_RE.match(name))


@dataclass(frozen=True)
class PosixIdentity:
    username: str
    source_claim: ClaimSource

    def __post_init__(self) -> None:
        if not is_valid_posix_username(self.username):
            raise ValueError(f"not a valid POSIX username: {self.username!r}")
