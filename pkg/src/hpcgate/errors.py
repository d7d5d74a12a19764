"""Gateway-wide error taxonomy and its HTTP status mapping."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional


class ErrorCode(str, Enum):
    UNAUTHENTICATED = "unauthenticated"
    FORBIDDEN = "forbidden"
    SYSTEM_UNKNOWN = "system_unknown"
    SUBSYSTEM_UNAVAILABLE = "subsystem_unavailable"
    BACKEND_FAILURE = "backend_failure"
    PAYLOAD_TOO_LARGE = "payload_too_large"
    HEADERS_TOO_LARGE = "headers_too_large"
    POOL_EXHAUSTED = "pool_exhausted"
    BAD_REQUEST = "bad_request"


@dataclass
class StatusMapping:
    status: int
    # pool_exhausted and subsystem_unavailable share 503; the Retry-After
    # header disambiguates them, keeping code -> (status, retry_after) injective.
    retry_after: Optional[int] = None


HTTP_STATUS: dict[ErrorCode, StatusMapping] = {
    ErrorCode.UNAUTHENTICATED: StatusMapping(401),
    ErrorCode.FORBIDDEN: StatusMapping(403),
    ErrorCode.SYSTEM_UNKNOWN: StatusMapping(404),
    ErrorCode.SUBSYSTEM_UNAVAILABLE: StatusMapping(503),
    ErrorCode.BACKEND_FAILURE: StatusMapping(502),
    ErrorCode.PAYLOAD_TOO_LARGE: StatusMapping(413),
    ErrorCode.HEADERS_TOO_LARGE: StatusMapping(431),
    ErrorCode.POOL_EXHAUSTED: StatusMapping(503, retry_after=1),
    ErrorCode.BAD_REQUEST: StatusMapping(400),
}


class GatewayError(Exception):
    """An error with a well-defined HTTP mapping.

    Raised anywhere in the request pipeline; the HTTP layer turns it into
    the canonical error body. ``system`` / ``subsystem`` give the caller
    enough context to tell which backend was involved.
    """

    def __init__(
        self,
        code: ErrorCode,
        message: str,
        *,
        system: Optional[str] = None,
        subsystem: Optional[str] = None,
    ):
        super().__init__(message)
        self.code = code
        self.message = message
        self.system = system
        self.subsystem = subsystem

    @property
    def http_status(self) -> int:
        return HTTP_STATUS[self.code].status

    @property
    def retry_after(self) -> Optional[int]:
        return HTTP_STATUS[self.code].retry_after

    def __repr__(self) -> str:  # pragma: no cover
        return f"GatewayError({self.code.value!r}, {self.message!r})"


def unauthenticated(message: str = "authentication failed") -> GatewayError:
    # Never include token material in the message.
    return GatewayError(ErrorCode.UNAUTHENTICATED, message)


def forbidden(message: str, *, system: Optional[str] = None) -> GatewayError:
    return GatewayError(ErrorCode.FORBIDDEN, message, system=system)


def system_unknown(name: str) -> GatewayError:
    return GatewayError(
        ErrorCode.SYSTEM_UNKNOWN, f"unknown system {name!r}", system=name
    )


def bad_request(message: str, *, system: Optional[str] = None) -> GatewayError:
    return GatewayError(ErrorCode.BAD_REQUEST, message, system=system)


def backend_failure(
    message: str, *, system: Optional[str] = None, subsystem: Optional[str] = None
) -> GatewayError:
    return GatewayError(
        ErrorCode.BACKEND_FAILURE, message, system=system, subsystem=subsystem
    )
