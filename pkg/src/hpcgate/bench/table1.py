"""Total-retrieval-time comparison: N concurrent 1 KB downloads, pooled vs
connection-per-request gateways, reported as mean +- stddev over repetitions
plus the speedup ratio.

With no gateway URLs given, the harness self-hosts the whole stack (fabric
plus one gateway per mode) on ephemeral ports, which is also how the
acceptance run works.
"""

from __future__ import annotations

import asyncio
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import httpx

from .dataset import file_name, seed_dataset

MAX_REP_RETRIES = 3


@dataclass
class ModeResult:
    times: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.times) if self.times else math.nan

    @property
    def stddev(self) -> float:
        return statistics.stdev(self.times) if len(self.times) >= 2 else 0.0


@dataclass
class Table1Report:
    n_values: list[int]
    modes: list[str]
    workers: int
    repetitions: int
    results: dict[int, dict[str, ModeResult]]
    config: dict = field(default_factory=dict)

    def speedup(self, n: int, fast: str = "pooled", slow: str = "nonpooled") -> Optional[float]:
        row = self.results.get(n, {})
        if fast in row and slow in row and row[fast].mean > 0:
            return row[slow].mean / row[fast].mean
        return None

    def render_text(self) -> str:
        lines = []
        header = f"{'N files':>8}"
        for mode in self.modes:
            header += f"  {mode:>22}"
        if {"pooled", "nonpooled"} <= set(self.modes):
            header += f"  {'speedup':>9}"
        lines.append(header)
        for n in self.n_values:
            row = f"{n:>8}"
            for mode in self.modes:
                res = self.results[n][mode]
                row += f"  {res.mean:>11.3f} ± {res.stddev:>6.3f} s"
            ratio = self.speedup(n)
            if ratio is not None:
                row += f"  {ratio:>8.1f}x"
            lines.append(row)
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {
            "n_values": self.n_values,
            "modes": self.modes,
            "workers": self.workers,
            "repetitions": self.repetitions,
            "results": {
                str(n): {
                    mode: {
                        "times": res.times,
                        "mean": res.mean,
                        "stddev": res.stddev,
                    }
                    for mode, res in row.items()
                }
                for n, row in self.results.items()
            },
            "speedups": {
                str(n): self.speedup(n) for n in self.n_values if self.speedup(n)
            },
            "config": self.config,
        }

    def write(self, path: str) -> None:
        import json

        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")


async def timed_download_batch(
    client: httpx.AsyncClient,
    token: str,
    system: str,
    directory: str,
    n: int,
    workers: int,
) -> tuple[float, list[int]]:
    """Wall-clock for N concurrent downloads of distinct files."""
    headers = {"Authorization": f"Bearer {token}"}
    sem = asyncio.Semaphore(workers)

    async def fetch(i: int) -> int:
        path = f"{directory.rstrip('/')}/{file_name(i)}"
        async with sem:
            r = await client.get(
                f"/filesystem/{system}/ops/download",
                headers=headers,
                params={"path": path},
            )
            return r.status_code

    start = time.perf_counter()
    statuses = await asyncio.gather(*[fetch(i) for i in range(n)])
    return time.perf_counter() - start, list(statuses)


async def run_table1(
    gateways: dict[str, httpx.AsyncClient],
    token: str,
    system: str,
    directory: str,
    n_values: list[int],
    workers: int = 10,
    repetitions: int = 5,
    seed: bool = True,
    seed_size: int = 1024,
    config_echo: Optional[dict] = None,
) -> Table1Report:
    """For each N and mode: ``repetitions`` timed batches of N downloads.

    A repetition containing any non-200 response is invalid and re-run, up
    to MAX_REP_RETRIES attempts; persistent failure aborts with diagnostics.
    """
    if seed:
        seeder = next(iter(gateways.values()))
        await seed_dataset(
            seeder, token, system, directory, max(n_values), size=seed_size
        )
    results: dict[int, dict[str, ModeResult]] = {}
    for n in n_values:
        results[n] = {}
        for mode, client in gateways.items():
            res = ModeResult()
            for _ in range(repetitions):
                for attempt in range(MAX_REP_RETRIES):
                    wall, statuses = await timed_download_batch(
                        client, token, system, directory, n, workers
                    )
                    bad = [s for s in statuses if s != 200]
                    if not bad:
                        res.times.append(wall)
                        break
                    if attempt == MAX_REP_RETRIES - 1:
                        raise RuntimeError(
                            f"table1 {mode} N={n}: repetition kept failing, "
                            f"{len(bad)} non-200 responses (sample {bad[:5]})"
                        )
            results[n][mode] = res
    return Table1Report(
        n_values=list(n_values),
        modes=list(gateways),
        workers=workers,
        repetitions=repetitions,
        results=results,
        config=config_echo or {},
    )


# --- self-hosted stack ------------------------------------------------------------


@dataclass
class SelfHostedStack:
    """Fabric plus one gateway per mode, all on ephemeral localhost ports."""

    fabric: object
    gateways: dict[str, str]  # mode -> base url
    token: str
    system: str
    bench_dir: str
    counters_url: str
    _handles: list = field(default_factory=list)
    _gateway_objs: list = field(default_factory=list)

    async def stop(self) -> None:
        for handle in self._handles:
            await handle.stop()
        await self.fabric.stop()  # type: ignore[attr-defined]


async def start_self_hosted(
    backing_dir: str,
    accept_delay: float = 0.1,
    max_unauth_startups: int = 10,
    max_sessions: int = 10,
    modes: tuple[str, ...] = ("pooled", "nonpooled"),
    health_interval: float = 5.0,
) -> SelfHostedStack:
    from ..config import parse_config
    from ..fabric import Fabric, FabricConfig
    from ..gateway import Gateway
    from ..serving import start_server

    fabric = Fabric(
        FabricConfig(
            backing_dir=backing_dir,
            accept_delay=accept_delay,
            max_unauth_startups=max_unauth_startups,
            max_sessions=max_sessions,
        )
    )
    await fabric.start()
    handles = []
    idp_handle = await start_server(fabric.idp.build_app())
    handles.append(idp_handle)
    admin_handle = await start_server(fabric.build_admin_app())
    handles.append(admin_handle)

    system = "cluster-a"
    gateways: dict[str, str] = {}
    gateway_objs = []
    for mode in modes:
        cfg = parse_config(
            fabric.gateway_config_dict(
                system_name=system,
                pooled=(mode == "pooled"),
                jwks_url=f"{idp_handle.base_url}/jwks",
                health={"interval": health_interval, "timeout": min(2.0, health_interval / 2)},
            ),
            environ={},
        )
        gw = Gateway(cfg)
        handle = await start_server(gw.app)
        handles.append(handle)
        gateways[mode] = handle.base_url
        gateway_objs.append(gw)

    token = fabric.mint_token(
        claims={"preferred_username": "alice", "firecrest-systems": [system]},
        ttl=3600,
    )
    return SelfHostedStack(
        fabric=fabric,
        gateways=gateways,
        token=token,
        system=system,
        bench_dir=str(Path(backing_dir) / "bench"),
        counters_url=f"{admin_handle.base_url}/counters",
        _handles=handles,
        _gateway_objs=gateway_objs,
    )
