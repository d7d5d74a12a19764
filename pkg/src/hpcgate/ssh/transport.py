"""Packet transport: version exchange, key exchange framing, send/recv."""

from __future__ import annotations

import asyncio
import os
import struct
from typing import Optional

from cryptography.hazmat.primitives.asymmetric import ed25519

from . import kex, keys
from .errors import SSHConnectionClosed, SSHHostKeyError, SSHProtocolError
from .wire import (
    MSG_DEBUG,
    MSG_DISCONNECT,
    MSG_IGNORE,
    MSG_KEX_ECDH_INIT,
    MSG_KEX_ECDH_REPLY,
    MSG_KEXINIT,
    MSG_NEWKEYS,
    MSG_UNIMPLEMENTED,
    Reader,
    Writer,
)

VERSION_STRING = "SSH-2.0-hpcgate_0.1"

_PLAIN_BLOCK = 8
_MAX_VERSION_LINE = 255
_MAX_PLAIN_PACKET = 64 * 1024


def _kexinit_payload() -> bytes:
    w = Writer().byte(MSG_KEXINIT).raw(os.urandom(16))
    w.namelist([kex.KEX_ALG])
    w.namelist([keys.KEY_ALG])
    for _ in range(2):  # encryption c2s, s2c
        w.namelist([kex.CIPHER_ALG])
    for _ in range(2):  # mac c2s, s2c
        w.namelist([kex.MAC_ALG])
    for _ in range(2):  # compression c2s, s2c
        w.namelist(["none"])
    for _ in range(2):  # languages
        w.namelist([])
    w.boolean(False)  # first_kex_packet_follows
    w.uint32(0)
    return w.bytes()


def _check_peer_kexinit(payload: bytes) -> None:
    r = Reader(payload)
    if r.byte() != MSG_KEXINIT:
        raise SSHProtocolError("expected KEXINIT")
    for _ in range(16):  # cookie: 16 raw bytes
        r.byte()
    wanted = [
        [kex.KEX_ALG],
        [keys.KEY_ALG],
        [kex.CIPHER_ALG],
        [kex.CIPHER_ALG],
        [kex.MAC_ALG],
        [kex.MAC_ALG],
        ["none"],
        ["none"],
    ]
    for required in wanted:
        offered = r.namelist()
        if required[0] not in offered:
            raise SSHProtocolError(
                f"no common algorithm: need {required[0]!r}, peer offers {offered!r}"
            )
    r.namelist()
    r.namelist()
    r.boolean()
    r.uint32()


class Transport:
    """Framed packet stream over a TCP connection; not thread-safe, one
    reader task and lock-serialized writers."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self._reader = reader
        self._writer = writer
        self._send_lock = asyncio.Lock()
        self._send_seq = 0
        self._recv_seq = 0
        self._send_cipher: Optional[kex.PacketCipher] = None
        self._recv_cipher: Optional[kex.PacketCipher] = None
        self.local_version = VERSION_STRING
        self.remote_version = ""
        self.session_id = b""

    # --- version exchange ---------------------------------------------------

    async def exchange_versions(self) -> None:
        self._writer.write((self.local_version + "\r\n").encode())
        await self._writer.drain()
        # RFC 4253 allows banner lines before the version string.
        for _ in range(32):
            line = await self._reader.readline()
            if not line:
                raise SSHConnectionClosed("connection closed during version exchange")
            if len(line) > _MAX_VERSION_LINE:
                raise SSHProtocolError("version line too long")
            text = line.rstrip(b"\r\n").decode("ascii", errors="replace")
            if text.startswith("SSH-"):
                if not text.startswith("SSH-2.0-"):
                    raise SSHProtocolError(f"unsupported protocol version: {text}")
                self.remote_version = text
                return
        raise SSHProtocolError("no SSH version line received")

    # --- packet I/O -----------------------------------------------------------

    async def send_packet(self, payload: bytes) -> None:
        async with self._send_lock:
            if self._send_cipher is not None:
                wire_bytes = self._send_cipher.seal(self._send_seq, payload)
            else:
                pad = _PLAIN_BLOCK - (5 + len(payload)) % _PLAIN_BLOCK
                if pad < 4:
                    pad += _PLAIN_BLOCK
                body = bytes([pad]) + payload + os.urandom(pad)
                wire_bytes = struct.pack(">I", len(body)) + body
            self._send_seq = (self._send_seq + 1) & 0xFFFFFFFF
            self._writer.write(wire_bytes)
            await self._writer.drain()

    async def _read_exactly(self, n: int) -> bytes:
        try:
            return await self._reader.readexactly(n)
        except (asyncio.IncompleteReadError, ConnectionError, OSError) as exc:
            raise SSHConnectionClosed(f"connection lost: {exc}") from None

    async def recv_packet(self) -> bytes:
        """Read the next meaningful payload; transparently drops keepalive noise."""
        while True:
            length_field = await self._read_exactly(4)
            if self._recv_cipher is not None:
                length = self._recv_cipher.packet_length(length_field)
                ciphertext = await self._read_exactly(length)
                mac = await self._read_exactly(kex.MAC_SIZE)
                payload = self._recv_cipher.open(
                    self._recv_seq, length_field, ciphertext, mac
                )
            else:
                length = struct.unpack(">I", length_field)[0]
                if not 5 <= length <= _MAX_PLAIN_PACKET:
                    raise SSHProtocolError(f"implausible packet length {length}")
                body = await self._read_exactly(length)
                pad = body[0]
                if pad < 4 or pad >= length:
                    raise SSHProtocolError("invalid packet padding")
                payload = body[1 : length - pad]
            self._recv_seq = (self._recv_seq + 1) & 0xFFFFFFFF
            if not payload:
                raise SSHProtocolError("empty packet payload")
            msg = payload[0]
            if msg in (MSG_IGNORE, MSG_DEBUG, MSG_UNIMPLEMENTED):
                continue
            if msg == MSG_DISCONNECT:
                r = Reader(payload)
                r.byte()
                code = r.uint32()
                desc = r.text()
                raise SSHConnectionClosed(f"peer disconnected ({code}): {desc}")
            return payload

    async def send_disconnect(self, code: int, description: str) -> None:
        try:
            payload = (
                Writer()
                .byte(MSG_DISCONNECT)
                .uint32(code)
                .string(description)
                .string("")
                .bytes()
            )
            await self.send_packet(payload)
        except (ConnectionError, OSError):
            pass

    def close(self) -> None:
        try:
            self._writer.close()
        except (ConnectionError, OSError):  # pragma: no cover
            pass

    # --- key exchange ---------------------------------------------------------

    async def client_kex(self, verify_host_key) -> None:
        """Run the client side of curve25519-sha256 and switch on encryption.

        ``verify_host_key(blob) -> bool`` decides whether the presented host
        key is trusted for this endpoint.
        """
        local_kexinit = _kexinit_payload()
        await self.send_packet(local_kexinit)
        remote_kexinit = await self.recv_packet()
        _check_peer_kexinit(remote_kexinit)

        eph_key, eph_pub = kex.generate_ephemeral()
        await self.send_packet(
            Writer().byte(MSG_KEX_ECDH_INIT).string(eph_pub).bytes()
        )
        reply = await self.recv_packet()
        r = Reader(reply)
        if r.byte() != MSG_KEX_ECDH_REPLY:
            raise SSHProtocolError("expected KEX_ECDH_REPLY")
        host_blob = r.string()
        server_eph = r.string()
        signature = r.string()

        if not verify_host_key(host_blob):
            raise SSHHostKeyError("server host key rejected")
        secret = kex.shared_secret(eph_key, server_eph)
        h = kex.exchange_hash(
            self.local_version,
            self.remote_version,
            local_kexinit,
            remote_kexinit,
            host_blob,
            eph_pub,
            server_eph,
            secret,
        )
        if not keys.verify_blob(host_blob, signature, h):
            raise SSHHostKeyError("host key signature invalid")
        self.session_id = h

        await self.send_packet(Writer().byte(MSG_NEWKEYS).bytes())
        newkeys = await self.recv_packet()
        if newkeys[0] != MSG_NEWKEYS:
            raise SSHProtocolError("expected NEWKEYS")
        self._send_cipher, self._recv_cipher = kex.derive_ciphers(
            secret, h, self.session_id, client_side=True
        )

    async def server_kex(self, host_key: ed25519.Ed25519PrivateKey) -> None:
        local_kexinit = _kexinit_payload()
        await self.send_packet(local_kexinit)
        remote_kexinit = await self.recv_packet()
        _check_peer_kexinit(remote_kexinit)

        init = await self.recv_packet()
        r = Reader(init)
        if r.byte() != MSG_KEX_ECDH_INIT:
            raise SSHProtocolError("expected KEX_ECDH_INIT")
        client_eph = r.string()

        eph_key, eph_pub = kex.generate_ephemeral()
        secret = kex.shared_secret(eph_key, client_eph)
        host_blob = keys.public_key_blob(host_key)
        h = kex.exchange_hash(
            self.remote_version,
            self.local_version,
            remote_kexinit,
            local_kexinit,
            host_blob,
            client_eph,
            eph_pub,
            secret,
        )
        self.session_id = h
        signature = keys.sign_blob(host_key, h)
        await self.send_packet(
            Writer()
            .byte(MSG_KEX_ECDH_REPLY)
            .string(host_blob)
            .string(eph_pub)
            .string(signature)
            .bytes()
        )
        await self.send_packet(Writer().byte(MSG_NEWKEYS).bytes())
        newkeys = await self.recv_packet()
        if newkeys[0] != MSG_NEWKEYS:
            raise SSHProtocolError("expected NEWKEYS")
        self._send_cipher, self._recv_cipher = kex.derive_ciphers(
            secret, h, self.session_id, client_side=False
        )
