"""Run ASGI apps on ephemeral ports inside the current event loop.

Used by the CLI, the benchmark self-hosting mode, and socket-level tests;
uvicorn does the serving so the production path and the test path are the
same code.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass

import uvicorn


@dataclass
class ServerHandle:
    server: uvicorn.Server
    task: asyncio.Task
    host: str
    port: int

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    async def stop(self) -> None:
        self.server.should_exit = True
        try:
            await asyncio.wait_for(self.task, 10.0)
        except asyncio.TimeoutError:  # pragma: no cover
            self.task.cancel()


async def start_server(
    app, host: str = "127.0.0.1", port: int = 0, log_level: str = "warning"
) -> ServerHandle:
    config = uvicorn.Config(
        app, host=host, port=port, log_level=log_level, lifespan="on", access_log=False
    )
    server = uvicorn.Server(config)
    task = asyncio.create_task(server.serve())
    while not server.started:
        if task.done():
            task.result()  # surface startup errors
            raise RuntimeError("server exited before startup completed")
        await asyncio.sleep(0.01)
    sock = server.servers[0].sockets[0]
    bound_host, bound_port = sock.getsockname()[:2]
    return ServerHandle(server=server, task=task, host=bound_host, port=bound_port)


def parse_listen(listen: str) -> tuple[str, int]:
    host, _, port_text = listen.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValueError(f"listen address must be host:port, got {listen!r}")
    return host, int(port_text)
