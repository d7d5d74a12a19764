"""SSH client connection: public-key auth and multiplexed exec channels.

A connection supports any number of sequential or concurrent ``exec``
calls, each on its own session channel. A background pump task dispatches
incoming packets to the owning channel.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
from typing import Callable, Optional

from cryptography.hazmat.primitives.asymmetric import ed25519

from . import keys
from .errors import (
    SSHAuthError,
    SSHChannelOpenRejected,
    SSHConnectionClosed,
    SSHError,
    SSHProtocolError,
)
from .transport import Transport
from .wire import (
    DISC_BY_APPLICATION,
    EXTENDED_DATA_STDERR,
    MSG_CHANNEL_CLOSE,
    MSG_CHANNEL_DATA,
    MSG_CHANNEL_EOF,
    MSG_CHANNEL_EXTENDED_DATA,
    MSG_CHANNEL_FAILURE,
    MSG_CHANNEL_OPEN,
    MSG_CHANNEL_OPEN_CONFIRMATION,
    MSG_CHANNEL_OPEN_FAILURE,
    MSG_CHANNEL_REQUEST,
    MSG_CHANNEL_SUCCESS,
    MSG_CHANNEL_WINDOW_ADJUST,
    MSG_GLOBAL_REQUEST,
    MSG_REQUEST_FAILURE,
    MSG_SERVICE_ACCEPT,
    MSG_SERVICE_REQUEST,
    MSG_USERAUTH_FAILURE,
    MSG_USERAUTH_REQUEST,
    MSG_USERAUTH_SUCCESS,
    Reader,
    Writer,
)

DEFAULT_WINDOW = 1 << 24  # 16 MiB: comfortably above the transfer cap
MAX_PACKET = 32768


@dataclass
class ExecResult:
    exit_code: int
    stdout: bytes
    stderr: bytes


class _Channel:
    def __init__(self, local_id: int):
        loop = asyncio.get_running_loop()
        self.local_id = local_id
        self.remote_id = -1
        self.send_window = 0
        self.send_max_packet = MAX_PACKET
        self.stdout = bytearray()
        self.stderr = bytearray()
        self.exit_code: Optional[int] = None
        self.open_reply: asyncio.Future = loop.create_future()
        self.request_reply: asyncio.Future = loop.create_future()
        self.closed = asyncio.Event()
        self.window_available = asyncio.Event()

    def fail(self, exc: Exception) -> None:
        for fut in (self.open_reply, self.request_reply):
            if not fut.done():
                fut.set_exception(exc)
            elif not fut.cancelled():
                fut.exception()  # mark retrieved so asyncio does not warn
        self.closed.set()
        self.window_available.set()


class SSHClientConnection:
    def __init__(self, transport: Transport, username: str):
        self._transport = transport
        self.username = username
        self._channels: dict[int, _Channel] = {}
        self._next_id = 0
        self._pump_task: Optional[asyncio.Task] = None
        self._closed = False
        self._close_reason: Optional[Exception] = None

    # --- lifecycle ------------------------------------------------------------

    @property
    def is_closed(self) -> bool:
        return self._closed

    def _start_pump(self) -> None:
        self._pump_task = asyncio.create_task(self._pump())

    async def _pump(self) -> None:
        try:
            while True:
                payload = await self._transport.recv_packet()
                self._dispatch(payload)
        except SSHError as exc:
            self._shutdown(exc)
        except asyncio.CancelledError:
            self._shutdown(SSHConnectionClosed("connection closed"))
            raise
        except Exception as exc:  # pragma: no cover - defensive
            self._shutdown(SSHProtocolError(f"pump failed: {exc}"))

    def _shutdown(self, exc: Exception) -> None:
        if self._closed:
            return
        self._closed = True
        self._close_reason = exc
        for channel in list(self._channels.values()):
            channel.fail(exc)
        self._transport.close()

    async def close(self) -> None:
        if not self._closed:
            await self._transport.send_disconnect(DISC_BY_APPLICATION, "bye")
            self._shutdown(SSHConnectionClosed("locally closed"))
        if self._pump_task is not None and not self._pump_task.done():
            self._pump_task.cancel()
            try:
                await self._pump_task
            except asyncio.CancelledError:
                pass

    # --- packet dispatch --------------------------------------------------------

    def _send_quiet(self, payload: bytes) -> None:
        """Fire-and-forget send; connection loss surfaces via the pump."""

        async def _send() -> None:
            try:
                await self._transport.send_packet(payload)
            except (SSHError, ConnectionError, OSError):
                pass

        asyncio.ensure_future(_send())

    def _dispatch(self, payload: bytes) -> None:
        msg = payload[0]
        r = Reader(payload)
        r.byte()
        if msg == MSG_GLOBAL_REQUEST:
            r.string()
            want_reply = r.boolean()
            if want_reply:
                self._send_quiet(Writer().byte(MSG_REQUEST_FAILURE).bytes())
            return
        if msg not in (
            MSG_CHANNEL_OPEN_CONFIRMATION,
            MSG_CHANNEL_OPEN_FAILURE,
            MSG_CHANNEL_WINDOW_ADJUST,
            MSG_CHANNEL_DATA,
            MSG_CHANNEL_EXTENDED_DATA,
            MSG_CHANNEL_EOF,
            MSG_CHANNEL_CLOSE,
            MSG_CHANNEL_REQUEST,
            MSG_CHANNEL_SUCCESS,
            MSG_CHANNEL_FAILURE,
        ):
            raise SSHProtocolError(f"unexpected message {msg}")
        local_id = r.uint32()
        channel = self._channels.get(local_id)
        if channel is None:
            return  # late traffic for an abandoned channel

        if msg == MSG_CHANNEL_OPEN_CONFIRMATION:
            channel.remote_id = r.uint32()
            channel.send_window = r.uint32()
            channel.send_max_packet = min(r.uint32(), MAX_PACKET)
            if channel.send_window > 0:
                channel.window_available.set()
            if not channel.open_reply.done():
                channel.open_reply.set_result(True)
        elif msg == MSG_CHANNEL_OPEN_FAILURE:
            code = r.uint32()
            desc = r.text()
            if not channel.open_reply.done():
                channel.open_reply.set_exception(SSHChannelOpenRejected(code, desc))
        elif msg == MSG_CHANNEL_WINDOW_ADJUST:
            channel.send_window += r.uint32()
            channel.window_available.set()
        elif msg == MSG_CHANNEL_DATA:
            data = r.string()
            channel.stdout.extend(data)
            self._credit_window(channel, len(data))
        elif msg == MSG_CHANNEL_EXTENDED_DATA:
            kind = r.uint32()
            data = r.string()
            if kind == EXTENDED_DATA_STDERR:
                channel.stderr.extend(data)
            self._credit_window(channel, len(data))
        elif msg == MSG_CHANNEL_REQUEST:
            request = r.text()
            r.boolean()  # want_reply; exit-status never wants one
            if request == "exit-status":
                channel.exit_code = r.uint32()
        elif msg == MSG_CHANNEL_SUCCESS:
            if not channel.request_reply.done():
                channel.request_reply.set_result(True)
        elif msg == MSG_CHANNEL_FAILURE:
            if not channel.request_reply.done():
                channel.request_reply.set_exception(
                    SSHProtocolError("channel request refused")
                )
        elif msg == MSG_CHANNEL_EOF:
            pass
        elif msg == MSG_CHANNEL_CLOSE:
            self._send_quiet(
                Writer().byte(MSG_CHANNEL_CLOSE).uint32(channel.remote_id).bytes()
            )
            channel.closed.set()

    def _credit_window(self, channel: _Channel, amount: int) -> None:
        # Keep the receive window topped up; both peers buffer whole results.
        self._send_quiet(
            Writer()
            .byte(MSG_CHANNEL_WINDOW_ADJUST)
            .uint32(channel.remote_id)
            .uint32(amount)
            .bytes()
        )

    # --- exec -------------------------------------------------------------------

    async def exec(self, command: str, stdin: bytes = b"") -> ExecResult:
        """Run one remote command on a fresh session channel."""
        if self._closed:
            raise SSHConnectionClosed("connection is closed")
        channel = _Channel(self._next_id)
        self._next_id += 1
        self._channels[channel.local_id] = channel
        try:
            await self._transport.send_packet(
                Writer()
                .byte(MSG_CHANNEL_OPEN)
                .string("session")
                .uint32(channel.local_id)
                .uint32(DEFAULT_WINDOW)
                .uint32(MAX_PACKET)
                .bytes()
            )
            await channel.open_reply
            await self._transport.send_packet(
                Writer()
                .byte(MSG_CHANNEL_REQUEST)
                .uint32(channel.remote_id)
                .string("exec")
                .boolean(True)
                .string(command)
                .bytes()
            )
            await channel.request_reply
            await self._send_stdin(channel, stdin)
            await channel.closed.wait()
            if self._close_reason is not None:
                raise self._close_reason
            exit_code = channel.exit_code if channel.exit_code is not None else -1
            return ExecResult(
                exit_code=exit_code,
                stdout=bytes(channel.stdout),
                stderr=bytes(channel.stderr),
            )
        finally:
            self._channels.pop(channel.local_id, None)

    async def _send_stdin(self, channel: _Channel, stdin: bytes) -> None:
        offset = 0
        while offset < len(stdin):
            if channel.closed.is_set():
                raise SSHConnectionClosed("channel closed while sending stdin")
            if channel.send_window <= 0:
                channel.window_available.clear()
                await channel.window_available.wait()
                continue
            chunk = stdin[
                offset : offset + min(channel.send_window, channel.send_max_packet)
            ]
            await self._transport.send_packet(
                Writer()
                .byte(MSG_CHANNEL_DATA)
                .uint32(channel.remote_id)
                .string(chunk)
                .bytes()
            )
            channel.send_window -= len(chunk)
            offset += len(chunk)
        await self._transport.send_packet(
            Writer().byte(MSG_CHANNEL_EOF).uint32(channel.remote_id).bytes()
        )


async def _authenticate(
    transport: Transport, username: str, key: ed25519.Ed25519PrivateKey
) -> None:
    await transport.send_packet(
        Writer().byte(MSG_SERVICE_REQUEST).string("ssh-userauth").bytes()
    )
    reply = await transport.recv_packet()
    if reply[0] != MSG_SERVICE_ACCEPT:
        raise SSHProtocolError("userauth service not accepted")

    blob = keys.public_key_blob(key)
    to_sign = (
        Writer()
        .string(transport.session_id)
        .byte(MSG_USERAUTH_REQUEST)
        .string(username)
        .string("ssh-connection")
        .string("publickey")
        .boolean(True)
        .string(keys.KEY_ALG)
        .string(blob)
        .bytes()
    )
    signature = keys.sign_blob(key, to_sign)
    await transport.send_packet(
        Writer()
        .byte(MSG_USERAUTH_REQUEST)
        .string(username)
        .string("ssh-connection")
        .string("publickey")
        .boolean(True)
        .string(keys.KEY_ALG)
        .string(blob)
        .string(signature)
        .bytes()
    )
    reply = await transport.recv_packet()
    if reply[0] == MSG_USERAUTH_SUCCESS:
        return
    if reply[0] == MSG_USERAUTH_FAILURE:
        raise SSHAuthError(f"server rejected public key for user {username!r}")
    raise SSHProtocolError(f"unexpected userauth reply {reply[0]}")


async def connect(
    host: str,
    port: int,
    username: str,
    private_key: ed25519.Ed25519PrivateKey,
    verify_host_key: Callable[[bytes], bool],
    connect_timeout: float = 30.0,
) -> SSHClientConnection:
    """Dial, key-exchange, authenticate; returns a ready connection."""

    async def _dial() -> Transport:
        reader, writer = await asyncio.open_connection(host, port)
        transport = Transport(reader, writer)
        try:
            await transport.exchange_versions()
            await transport.client_kex(verify_host_key)
            await _authenticate(transport, username, private_key)
        except BaseException:
            transport.close()
            raise
        return transport

    transport = await asyncio.wait_for(_dial(), connect_timeout)
    conn = SSHClientConnection(transport, username)
    conn._start_pump()
    return conn
