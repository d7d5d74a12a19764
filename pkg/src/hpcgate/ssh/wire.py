"""SSH-2 message numbers and primitive wire encodings (RFC 4251 types)."""

from __future__ import annotations

import struct

from .errors import SSHProtocolError

# Transport layer
MSG_DISCONNECT = 1
MSG_IGNORE = 2
MSG_UNIMPLEMENTED = 3
MSG_DEBUG = 4
MSG_SERVICE_REQUEST = 5
MSG_SERVICE_ACCEPT = 6
MSG_KEXINIT = 20
MSG_NEWKEYS = 21
MSG_KEX_ECDH_INIT = 30
MSG_KEX_ECDH_REPLY = 31

# Authentication
MSG_USERAUTH_REQUEST = 50
MSG_USERAUTH_FAILURE = 51
MSG_USERAUTH_SUCCESS = 52
MSG_USERAUTH_BANNER = 53

# Connection protocol
MSG_GLOBAL_REQUEST = 80
MSG_REQUEST_SUCCESS = 81
MSG_REQUEST_FAILURE = 82
MSG_CHANNEL_OPEN = 90
MSG_CHANNEL_OPEN_CONFIRMATION = 91
MSG_CHANNEL_OPEN_FAILURE = 92
MSG_CHANNEL_WINDOW_ADJUST = 93
MSG_CHANNEL_DATA = 94
MSG_CHANNEL_EXTENDED_DATA = 95
MSG_CHANNEL_EOF = 96
MSG_CHANNEL_CLOSE = 97
MSG_CHANNEL_REQUEST = 98
MSG_CHANNEL_SUCCESS = 99
MSG_CHANNEL_FAILURE = 100

# CHANNEL_OPEN_FAILURE reason codes
OPEN_ADMINISTRATIVELY_PROHIBITED = 1
OPEN_CONNECT_FAILED = 2
OPEN_UNKNOWN_CHANNEL_TYPE = 3
OPEN_RESOURCE_SHORTAGE = 4

EXTENDED_DATA_STDERR = 1

DISC_PROTOCOL_ERROR = 2
DISC_BY_APPLICATION = 11


class Writer:
    """Incremental encoder for the RFC 4251 primitive types."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def byte(self, value: int) -> "Writer":
        self._parts.append(bytes([value]))
        return self

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(data)
        return self

    def boolean(self, value: bool) -> "Writer":
        return self.byte(1 if value else 0)

    def uint32(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">I", value))
        return self

    def string(self, data: bytes | str) -> "Writer":
        if isinstance(data, str):
            data = data.encode()
        self._parts.append(struct.pack(">I", len(data)) + data)
        return self

    def namelist(self, names: list[str]) -> "Writer":
        return self.string(",".join(names))

    def mpint(self, value: int) -> "Writer":
        if value == 0:
            return self.string(b"")
        if value < 0:
            raise ValueError("negative mpint not supported")
        data = value.to_bytes((value.bit_length() + 8) // 8, "big")
        # to_bytes with the +8 rounding always leaves a leading 0x00 only
        # when required to keep the number positive.
        if len(data) > 1 and data[0] == 0 and not data[1] & 0x80:
            data = data.lstrip(b"\x00") or b"\x00"
            if data[0] & 0x80:
                data = b"\x00" + data
        return self.string(data)

    def bytes(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    """Incremental decoder; raises SSHProtocolError on truncation."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise SSHProtocolError("truncated packet")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def byte(self) -> int:
        return self._take(1)[0]

    def boolean(self) -> bool:
        return self.byte() != 0

    def uint32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def string(self) -> bytes:
        length = self.uint32()
        return self._take(length)

    def text(self) -> str:
        return self.string().decode("utf-8", errors="replace")

    def namelist(self) -> list[str]:
        raw = self.text()
        return raw.split(",") if raw else []

    def mpint(self) -> int:
        data = self.string()
        return int.from_bytes(data, "big") if data else 0

    def remainder(self) -> bytes:
        chunk = self._data[self._pos :]
        self._pos = len(self._data)
        return chunk

    @property
    def consumed(self) -> int:
        return self._pos
