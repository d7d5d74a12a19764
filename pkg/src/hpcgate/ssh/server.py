"""Server side of the SSH subset: auth, session channels, exec dispatch.

The server is deliberately small: it accepts public-key authentication via
a caller-supplied callback, enforces a per-connection session cap, and runs
each exec request through a handler coroutine once the client signals EOF
on stdin. Stdout/stderr are buffered by the handler and streamed back.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
from typing import Awaitable, Callable, Optional

from cryptography.hazmat.primitives.asymmetric import ed25519

from . import keys
from .errors import SSHConnectionClosed, SSHError, SSHProtocolError
from .transport import Transport
from .wire import (
    DISC_PROTOCOL_ERROR,
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
    OPEN_RESOURCE_SHORTAGE,
    OPEN_UNKNOWN_CHANNEL_TYPE,
    Reader,
    Writer,
)

DEFAULT_WINDOW = 1 << 24
MAX_PACKET = 32768

# (username, command, stdin) -> (exit_code, stdout, stderr)
ExecHandler = Callable[[str, str, bytes], Awaitable[tuple[int, bytes, bytes]]]
# (username, public key blob) -> accepted
AuthCallback = Callable[[str, bytes], bool]


@dataclass
class ServerHooks:
    """Observation points for the embedding test fabric."""

    on_authenticated: Callable[[str], None] = lambda username: None
    on_channel_open: Callable[[], None] = lambda: None
    on_channel_rejected: Callable[[], None] = lambda: None
    on_command: Callable[[str], None] = lambda command: None


class _ServerChannel:
    def __init__(self, local_id: int, remote_id: int, window: int, max_packet: int):
        self.local_id = local_id
        self.remote_id = remote_id
        self.send_window = window
        self.send_max_packet = min(max_packet, MAX_PACKET)
        self.stdin = bytearray()
        self.eof = asyncio.Event()
        self.window_available = asyncio.Event()
        self.command: Optional[str] = None
        self.task: Optional[asyncio.Task] = None
        self.closed = False


class SSHServerConnection:
    def __init__(
        self,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        host_key: ed25519.Ed25519PrivateKey,
        auth_callback: AuthCallback,
        exec_handler: ExecHandler,
        max_sessions: int = 10,
        hooks: ServerHooks | None = None,
        handshake_timeout: float = 30.0,
    ):
        self._transport = Transport(reader, writer)
        self._host_key = host_key
        self._auth_callback = auth_callback
        self._exec_handler = exec_handler
        self._max_sessions = max_sessions
        self._hooks = hooks or ServerHooks()
        self._handshake_timeout = handshake_timeout
        self._channels: dict[int, _ServerChannel] = {}
        self._next_id = 0
        self._open_sessions = 0
        self.username: Optional[str] = None

    async def run(self) -> None:
        """Serve the connection to completion; never raises to the caller."""
        tasks: list[asyncio.Task] = []
        try:
            await asyncio.wait_for(self._handshake(), self._handshake_timeout)
            await self._serve_channels()
        except (SSHError, ConnectionError, OSError, asyncio.TimeoutError):
            pass
        finally:
            for channel in self._channels.values():
                if channel.task is not None and not channel.task.done():
                    channel.task.cancel()
                    tasks.append(channel.task)
            for task in tasks:
                try:
                    await task
                except (asyncio.CancelledError, Exception):
                    pass
            self._transport.close()

    # --- handshake -------------------------------------------------------------

    async def _handshake(self) -> None:
        await self._transport.exchange_versions()
        await self._transport.server_kex(self._host_key)

        payload = await self._transport.recv_packet()
        r = Reader(payload)
        if r.byte() != MSG_SERVICE_REQUEST or r.text() != "ssh-userauth":
            raise SSHProtocolError("expected ssh-userauth service request")
        await self._transport.send_packet(
            Writer().byte(MSG_SERVICE_ACCEPT).string("ssh-userauth").bytes()
        )

        for _ in range(8):  # a few attempts, then give up
            payload = await self._transport.recv_packet()
            r = Reader(payload)
            if r.byte() != MSG_USERAUTH_REQUEST:
                raise SSHProtocolError("expected userauth request")
            username = r.text()
            service = r.text()
            method = r.text()
            if service != "ssh-connection":
                raise SSHProtocolError(f"unsupported service {service!r}")
            if method == "publickey" and self._try_publickey(username, r, payload):
                self.username = username
                self._hooks.on_authenticated(username)
                await self._transport.send_packet(
                    Writer().byte(MSG_USERAUTH_SUCCESS).bytes()
                )
                return
            await self._transport.send_packet(
                Writer()
                .byte(MSG_USERAUTH_FAILURE)
                .namelist(["publickey"])
                .boolean(False)
                .bytes()
            )
        raise SSHProtocolError("too many failed authentication attempts")

    def _try_publickey(self, username: str, r: Reader, payload: bytes) -> bool:
        has_signature = r.boolean()
        algorithm = r.text()
        blob = r.string()
        if not has_signature or algorithm != keys.KEY_ALG:
            return False
        signature = r.string()
        if not self._auth_callback(username, blob):
            return False
        signed = (
            Writer()
            .string(self._transport.session_id)
            .byte(MSG_USERAUTH_REQUEST)
            .string(username)
            .string("ssh-connection")
            .string("publickey")
            .boolean(True)
            .string(keys.KEY_ALG)
            .string(blob)
            .bytes()
        )
        return keys.verify_blob(blob, signature, signed)

    # --- connection phase --------------------------------------------------------

    async def _serve_channels(self) -> None:
        while True:
            try:
                payload = await self._transport.recv_packet()
            except SSHConnectionClosed:
                return
            msg = payload[0]
            r = Reader(payload)
            r.byte()
            if msg == MSG_CHANNEL_OPEN:
                await self._handle_open(r)
            elif msg == MSG_GLOBAL_REQUEST:
                r.string()
                if r.boolean():
                    await self._transport.send_packet(
                        Writer().byte(MSG_REQUEST_FAILURE).bytes()
                    )
            elif msg in (
                MSG_CHANNEL_REQUEST,
                MSG_CHANNEL_DATA,
                MSG_CHANNEL_EOF,
                MSG_CHANNEL_CLOSE,
                MSG_CHANNEL_WINDOW_ADJUST,
                MSG_CHANNEL_EXTENDED_DATA,
            ):
                await self._handle_channel_msg(msg, r)
            else:
                await self._transport.send_disconnect(
                    DISC_PROTOCOL_ERROR, f"unexpected message {msg}"
                )
                return

    async def _handle_open(self, r: Reader) -> None:
        channel_type = r.text()
        remote_id = r.uint32()
        window = r.uint32()
        max_packet = r.uint32()
        if channel_type != "session":
            await self._transport.send_packet(
                Writer()
                .byte(MSG_CHANNEL_OPEN_FAILURE)
                .uint32(remote_id)
                .uint32(OPEN_UNKNOWN_CHANNEL_TYPE)
                .string(f"unsupported channel type {channel_type!r}")
                .string("")
                .bytes()
            )
            return
        if self._open_sessions >= self._max_sessions:
            self._hooks.on_channel_rejected()
            await self._transport.send_packet(
                Writer()
                .byte(MSG_CHANNEL_OPEN_FAILURE)
                .uint32(remote_id)
                .uint32(OPEN_RESOURCE_SHORTAGE)
                .string("session limit reached")
                .string("")
                .bytes()
            )
            return
        local_id = self._next_id
        self._next_id += 1
        channel = _ServerChannel(local_id, remote_id, window, max_packet)
        self._channels[local_id] = channel
        self._open_sessions += 1
        self._hooks.on_channel_open()
        await self._transport.send_packet(
            Writer()
            .byte(MSG_CHANNEL_OPEN_CONFIRMATION)
            .uint32(remote_id)
            .uint32(local_id)
            .uint32(DEFAULT_WINDOW)
            .uint32(MAX_PACKET)
            .bytes()
        )

    async def _handle_channel_msg(self, msg: int, r: Reader) -> None:
        local_id = r.uint32()
        channel = self._channels.get(local_id)
        if channel is None:
            return
        if msg == MSG_CHANNEL_REQUEST:
            request = r.text()
            want_reply = r.boolean()
            if request == "exec" and channel.command is None:
                channel.command = r.text()
                if want_reply:
                    await self._transport.send_packet(
                        Writer()
                        .byte(MSG_CHANNEL_SUCCESS)
                        .uint32(channel.remote_id)
                        .bytes()
                    )
                channel.task = asyncio.create_task(self._run_exec(channel))
            elif want_reply:
                await self._transport.send_packet(
                    Writer().byte(MSG_CHANNEL_FAILURE).uint32(channel.remote_id).bytes()
                )
        elif msg == MSG_CHANNEL_DATA:
            data = r.string()
            channel.stdin.extend(data)
            await self._transport.send_packet(
                Writer()
                .byte(MSG_CHANNEL_WINDOW_ADJUST)
                .uint32(channel.remote_id)
                .uint32(len(data))
                .bytes()
            )
        elif msg == MSG_CHANNEL_EXTENDED_DATA:
            r.uint32()
            r.string()
        elif msg == MSG_CHANNEL_EOF:
            channel.eof.set()
        elif msg == MSG_CHANNEL_WINDOW_ADJUST:
            channel.send_window += r.uint32()
            channel.window_available.set()
        elif msg == MSG_CHANNEL_CLOSE:
            if channel.task is not None and not channel.task.done():
                channel.task.cancel()
            await self._finish_channel(channel, send_close=not channel.closed)

    async def _run_exec(self, channel: _ServerChannel) -> None:
        try:
            await channel.eof.wait()
            self._hooks.on_command(channel.command or "")
            exit_code, stdout, stderr = await self._exec_handler(
                self.username or "", channel.command or "", bytes(channel.stdin)
            )
            await self._send_stream(channel, stdout, stderr=False)
            await self._send_stream(channel, stderr, stderr=True)
            await self._transport.send_packet(
                Writer()
                .byte(MSG_CHANNEL_REQUEST)
                .uint32(channel.remote_id)
                .string("exit-status")
                .boolean(False)
                .uint32(exit_code & 0xFFFFFFFF)
                .bytes()
            )
            await self._transport.send_packet(
                Writer().byte(MSG_CHANNEL_EOF).uint32(channel.remote_id).bytes()
            )
            await self._finish_channel(channel, send_close=True)
        except asyncio.CancelledError:
            raise
        except (SSHError, ConnectionError, OSError):
            await self._finish_channel(channel, send_close=False)

    async def _send_stream(
        self, channel: _ServerChannel, data: bytes, stderr: bool
    ) -> None:
        offset = 0
        while offset < len(data):
            if channel.send_window <= 0:
                channel.window_available.clear()
                await channel.window_available.wait()
                continue
            size = min(len(data) - offset, channel.send_window, channel.send_max_packet)
            chunk = data[offset : offset + size]
            w = Writer()
            if stderr:
                w.byte(MSG_CHANNEL_EXTENDED_DATA).uint32(channel.remote_id).uint32(
                    EXTENDED_DATA_STDERR
                )
            else:
                w.byte(MSG_CHANNEL_DATA).uint32(channel.remote_id)
            await self._transport.send_packet(w.string(chunk).bytes())
            channel.send_window -= size
            offset += size

    async def _finish_channel(self, channel: _ServerChannel, send_close: bool) -> None:
        if channel.closed:
            return
        channel.closed = True
        self._open_sessions -= 1
        self._channels.pop(channel.local_id, None)
        if send_close:
            try:
                await self._transport.send_packet(
                    Writer().byte(MSG_CHANNEL_CLOSE).uint32(channel.remote_id).bytes()
                )
            except (SSHError, ConnectionError, OSError):
                pass
