"""Benchmark dataset seeding through the gateway's own upload endpoint."""

from __future__ import annotations

import hashlib

import httpx


def file_name(index: int) -> str:
    return f"file_{index:04d}.bin"


def file_content(index: int, size: int) -> bytes:
    """Deterministic, distinct content of exactly ``size`` bytes."""
    if size == 0:
        return b""
    stamp = f"{index:08d};".encode()
    return (stamp * (size // len(stamp) + 1))[:size]


async def seed_dataset(
    client: httpx.AsyncClient,
    token: str,
    system: str,
    directory: str,
    n_files: int,
    size: int = 1024,
    verify: bool = False,
    concurrency: int = 10,
) -> None:
    """Create ``n_files`` files of exactly ``size`` bytes under ``directory``.

    Any failure aborts seeding. With ``verify`` the checksum endpoint is
    consulted for every file and compared to a locally computed digest.
    """
    headers = {"Authorization": f"Bearer {token}"}
    if n_files == 0:
        return
    response = await client.post(
        f"/filesystem/{system}/ops/mkdir", headers=headers, json={"path": directory}
    )
    if response.status_code not in (201, 400):  # 400: already exists
        raise RuntimeError(f"mkdir {directory} failed: {response.status_code} {response.text}")

    import asyncio

    sem = asyncio.Semaphore(concurrency)

    async def _upload(i: int) -> None:
        body = file_content(i, size)
        path = f"{directory.rstrip('/')}/{file_name(i)}"
        async with sem:
            r = await client.post(
                f"/filesystem/{system}/ops/upload",
                headers=headers,
                params={"path": path, "overwrite": "true"},
                content=body,
            )
            if r.status_code != 204:
                detail = r.json().get("message", r.text) if r.content else r.text
                raise RuntimeError(f"seeding aborted at {path}: {r.status_code} {detail}")
            if verify:
                r = await client.get(
                    f"/filesystem/{system}/ops/checksum",
                    headers=headers,
                    params={"path": path},
                )
                if r.status_code != 200:
                    raise RuntimeError(f"checksum of {path} failed: {r.status_code}")
                expected = hashlib.sha256(body).hexdigest()
                actual = r.json()["checksum"]
                if actual != expected:
                    raise RuntimeError(
                        f"checksum mismatch for {path}: {actual} != {expected}"
                    )

    await asyncio.gather(*[_upload(i) for i in range(n_files)])
