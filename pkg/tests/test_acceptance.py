"""Acceptance suite: every release-gating criterion at its stated tolerance.

Timing-sensitive criteria run against the self-contained fabric with a
100 ms handshake delay and 10/10 daemon caps; ratios and counter audits
substitute for machine-specific absolute latencies. Health-timing
criteria run at a scaled-down check interval and assert the same
interval+timeout formula the defaults satisfy (15 s at 10 s/5 s).
"""

import asyncio
import hashlib
import json
import os
import random
import time

import httpx
import pytest

from hpcgate.bench.dataset import file_name, seed_dataset
from hpcgate.bench.table1 import timed_download_batch
from hpcgate.bench.workload import WorkloadRunner, parse_workload
from hpcgate.cli import main as cli_main
from hpcgate.fabric import Fabric, FabricConfig
from hpcgate.fabric.idp import MockIdP, corrupt_signature
from hpcgate.serving import start_server

from conftest import (
    SYSTEM,
    asgi_client,
    bearer,
    make_gateway,
    mint_for,
    wait_for,
    wait_healthy,
)

pytestmark = pytest.mark.anyio

LIFECYCLE_STEPS = [
    {
        "name": "mkdir",
        "method": "POST",
        "endpoint": "/filesystem/{system}/ops/mkdir",
        "json": {"path": "{base}/c{client}"},
        "assert": {"status": 201},
    },
    {
        "name": "upload-input",
        "method": "POST",
        "endpoint": "/filesystem/{system}/ops/upload?path={base}/c{client}/in.txt",
        "content": "payload for client {client}",
        "assert": {"status": 204},
    },
    {
        "name": "submit",
        "method": "POST",
        "endpoint": "/compute/{system}/jobs",
        "json": {
            "script": "cat in.txt > out.txt\n",
            "working_directory": "{base}/c{client}",
        },
        "assert": {"status": 201},
        "save": {"job_id": "job_id"},
    },
    {
        "name": "poll",
        "method": "GET",
        "endpoint": "/compute/{system}/jobs/{job_id}",
        "assert": {"status": 200, "json_equals": {"state": "COMPLETED"}},
        "until": {
            "field": "state",
            "in": ["COMPLETED", "FAILED", "CANCELLED"],
            "interval": 0.1,
            "timeout": 30,
        },
    },
    {
        "name": "download-output",
        "method": "GET",
        "endpoint": "/filesystem/{system}/ops/download?path={base}/c{client}/out.txt",
        "assert": {"status": 200, "body_contains": "payload for client"},
    },
    {
        "name": "checksum-output",
        "method": "GET",
        "endpoint": "/filesystem/{system}/ops/checksum?path={base}/c{client}/out.txt",
        "assert": {"status": 200},
    },
]


# --- 1. pooling speedup (table-style comparison) -----------------------------------------


@pytest.mark.slow
def test_c01_pooling_speedup(tmp_path):
    """bench table1 --n 100 --workers 10: pooled mean <= 1/5 of non-pooled
    over 5 repetitions, fabric at accept_delay=100ms and caps 10/10."""
    out = tmp_path / "table1.json"
    started = time.monotonic()
    rc = cli_main(
        [
            "bench",
            "table1",
            "--n",
            "100",
            "--workers",
            "10",
            "--reps",
            "5",
            "--accept-delay",
            "0.1",
            "--max-startups",
            "10",
            "--max-sessions",
            "10",
            "--backing-dir",
            str(tmp_path / "backing1"),
            "--out",
            str(out),
        ]
    )
    elapsed = time.monotonic() - started
    assert rc == 0
    report = json.loads(out.read_text())
    pooled = report["results"]["100"]["pooled"]["mean"]
    nonpooled = report["results"]["100"]["nonpooled"]["mean"]
    assert len(report["results"]["100"]["pooled"]["times"]) == 5
    assert pooled <= nonpooled / 5, (
        f"pooled {pooled:.3f}s vs non-pooled {nonpooled:.3f}s "
        f"(ratio {nonpooled / pooled:.1f}x, need >= 5x)"
    )
    assert elapsed < 180, f"criterion must finish in < 3 min, took {elapsed:.0f}s"


# --- 2. pooled scaling N=100 -> N=1000 --------------------------------------------------------


@pytest.mark.slow
def test_c02_pooled_scaling(tmp_path):
    """Pooled N=1000 mean total <= 15 x pooled N=100 mean total."""
    out = tmp_path / "scaling.json"
    started = time.monotonic()
    rc = cli_main(
        [
            "bench",
            "table1",
            "--n",
            "100,1000",
            "--modes",
            "pooled",
            "--workers",
            "10",
            "--reps",
            "5",
            "--accept-delay",
            "0.1",
            "--backing-dir",
            str(tmp_path / "backing2"),
            "--out",
            str(out),
        ]
    )
    elapsed = time.monotonic() - started
    assert rc == 0
    report = json.loads(out.read_text())
    n100 = report["results"]["100"]["pooled"]["mean"]
    n1000 = report["results"]["1000"]["pooled"]["mean"]
    assert n1000 <= 15 * n100, (
        f"N=1000 {n1000:.3f}s vs N=100 {n100:.3f}s "
        f"(factor {n1000 / n100:.1f}, tolerance 15x)"
    )
    assert elapsed < 300, f"criterion must finish in < 5 min, took {elapsed:.0f}s"


# --- 3. connection economy under a warm pool --------------------------------------------------


async def test_c03_connection_economy(tmp_path):
    fabric = Fabric(FabricConfig(backing_dir=str(tmp_path), accept_delay=0.05))
    await fabric.start()
    gw = await make_gateway(fabric)
    try:
        async with asgi_client(gw) as client:
            token = mint_for(fabric)
            await wait_healthy(client, bearer(token))
            directory = f"{tmp_path}/bench"
            await seed_dataset(client, token, SYSTEM, directory, 100, size=1024)
            # warm run: pool dials whatever it needs
            wall, statuses = await timed_download_batch(
                client, token, SYSTEM, directory, 100, workers=10
            )
            assert statuses == [200] * 100
            before = fabric.ssh.counters.as_dict()
            wall, statuses = await timed_download_batch(
                client, token, SYSTEM, directory, 100, workers=10
            )
            assert statuses == [200] * 100
            after = fabric.ssh.counters.as_dict()
            new_connections = after["connections_opened"] - before["connections_opened"]
            new_channels = after["channels_opened"] - before["channels_opened"]
            assert new_connections <= 2, f"warm run dialed {new_connections} connections"
            assert new_channels >= 100, f"only {new_channels} channels for 100 downloads"
    finally:
        await gw.stop()
        await fabric.stop()


# --- 4. offline vs introspection -------------------------------------------------------------


async def test_c04_offline_vs_introspection(tmp_path):
    fabric = Fabric(
        FabricConfig(
            backing_dir=str(tmp_path), accept_delay=0.0, idp_introspection_delay=0.05
        )
    )
    await fabric.start()
    offline_gw = await make_gateway(fabric, authn_mode="offline")
    intro_gw = await make_gateway(fabric, authn_mode="introspection")
    try:
        token = mint_for(fabric, ttl=3600)
        headers = bearer(token)
        async with asgi_client(offline_gw) as off_client, asgi_client(
            intro_gw
        ) as intro_client:
            await wait_healthy(off_client, headers)
            await wait_healthy(intro_client, headers)
            directory = f"{tmp_path}/bench"
            await seed_dataset(off_client, token, SYSTEM, directory, 1, size=1024)

            spec = parse_workload(
                {
                    "system": SYSTEM,
                    "clients": 5,
                    "iterations": 20,
                    "vars": {"dir": directory},
                    "steps": [
                        {
                            "name": "download",
                            "endpoint": "/filesystem/{system}/ops/download"
                            f"?path={directory}/{file_name(0)}",
                        }
                    ],
                }
            )
            off_report = await WorkloadRunner(spec, [off_client], token).run()
            intro_report = await WorkloadRunner(spec, [intro_client], token).run()
            off_mean = off_report.steps["download"].mean
            intro_mean = intro_report.steps["download"].mean
            assert off_report.steps["download"].errors == 0
            assert intro_report.steps["download"].errors == 0
            assert intro_mean - off_mean >= 0.040, (
                f"introspection {intro_mean * 1000:.1f}ms vs offline "
                f"{off_mean * 1000:.1f}ms: delta below 40ms"
            )

            # offline mode: zero IdP traffic across 1000 requests
            before = dict(fabric.idp.counters)
            sem = asyncio.Semaphore(25)

            async def one():
                async with sem:
                    r = await off_client.get(
                        f"/status/systems/{SYSTEM}", headers=headers
                    )
                    assert r.status_code == 200

            await asyncio.gather(*[one() for _ in range(1000)])
            after = dict(fabric.idp.counters)
            assert after == before, f"IdP hit in offline mode: {before} -> {after}"
    finally:
        await offline_gw.stop()
        await intro_gw.stop()
        await fabric.stop()


# --- 5. auth property suite -------------------------------------------------------------------


async def test_c05_auth_property_suite(tmp_path):
    rng = random.Random(0xF1CE)
    rogue = MockIdP()  # its kids are unknown to the gateway

    def random_user():
        return "u" + "".join(rng.choice("abcdefghij") for _ in range(6))

    # the backend must know the identities that are supposed to succeed
    known_users = tuple({random_user() for _ in range(40)} | {"probe"})
    fabric = Fabric(
        FabricConfig(backing_dir=str(tmp_path), accept_delay=0.0, users=known_users)
    )
    await fabric.start()
    gateway = await make_gateway(fabric)
    work = tmp_path / "authcheck"
    work.mkdir()

    try:
        await _run_auth_cases(fabric, gateway, rng, rogue, known_users, work)
    finally:
        await gateway.stop()
        await fabric.stop()


async def _run_auth_cases(fabric, gateway, rng, rogue, known_users, work):
    valid_users = [u for u in known_users if u != "probe"]

    def random_user():
        return rng.choice(valid_users)

    async with asgi_client(gateway) as client:
        await wait_healthy(client, bearer(mint_for(fabric, username=valid_users[0])))

        cases = []
        for _ in range(20):
            user = random_user()
            cases.append(
                ("valid", 200, mint_for(fabric, username=user, ttl=rng.uniform(60, 600)))
            )
        for _ in range(20):
            token = fabric.mint_token(
                claims={
                    "preferred_username": random_user(),
                    "firecrest-systems": [SYSTEM],
                },
                ttl=-rng.uniform(31, 300),  # expired beyond the 30 s skew
            )
            cases.append(("expired", 401, token))
        for _ in range(20):
            cases.append(
                ("flipped", 401, corrupt_signature(mint_for(fabric, username=random_user())))
            )
        for _ in range(20):
            token = rogue.mint(
                claims={
                    "preferred_username": random_user(),
                    "firecrest-systems": [SYSTEM],
                }
            )
            cases.append(("unknown-kid", 401, token))
        for _ in range(20):
            wrong = rng.choice([[], ["somewhere-else"], ["x", "y"]])
            cases.append(
                ("not-authorized", 403, mint_for(fabric, username=random_user(), systems=wrong))
            )
        rng.shuffle(cases)
        assert len(cases) == 100

        for kind, expected, token in cases:
            r = await client.get(
                f"/filesystem/{SYSTEM}/ops/ls",
                params={"path": str(work)},
                headers=bearer(token),
            )
            assert r.status_code == expected, (
                f"{kind}: expected {expected}, got {r.status_code}: {r.text}"
            )

        # determinism: the same tokens give the same answers again
        for kind, expected, token in cases[:20]:
            r = await client.get(
                f"/filesystem/{SYSTEM}/ops/ls",
                params={"path": str(work)},
                headers=bearer(token),
            )
            assert r.status_code == expected


# --- 6. health gating flip / block / recover ----------------------------------------------------


async def test_c06_health_gating(tmp_path):
    fabric = Fabric(FabricConfig(backing_dir=str(tmp_path), accept_delay=0.0))
    await fabric.start()
    interval, timeout = 1.2, 0.5
    gw = await make_gateway(fabric, health={"interval": interval, "timeout": timeout})
    flip_bound = 1.1 * interval + timeout + 0.8  # jitter + scheduling slack
    try:
        async with asgi_client(gw) as client:
            headers = bearer(mint_for(fabric))
            await wait_healthy(client, headers, timeout=20.0)
            work = tmp_path / "w"
            work.mkdir()

            await fabric.ssh.stop()
            stopped_at = time.monotonic()

            async def scheduler_unhealthy():
                r = await client.get(f"/status/systems/{SYSTEM}", headers=headers)
                states = {s["subsystem"]: s["state"] for s in r.json()}
                return states["scheduler"] != "healthy"

            await wait_for(scheduler_unhealthy, timeout=flip_bound + 3)
            flip_took = time.monotonic() - stopped_at
            assert flip_took <= flip_bound, (
                f"unhealthy after {flip_took:.2f}s, bound {flip_bound:.2f}s "
                f"(interval+timeout rule; 15s at the 10s/5s defaults)"
            )

            # backend returns, but the cache still says unhealthy: the gate
            # must refuse BEFORE any command reaches the fabric
            await fabric.restart_ssh()
            commands_before = fabric.ssh.counters.commands_executed
            r = await client.post(
                f"/compute/{SYSTEM}/jobs",
                headers=headers,
                json={"script": "true\n", "working_directory": str(work)},
            )
            assert r.status_code == 503
            assert r.json()["error_code"] == "subsystem_unavailable"
            assert fabric.ssh.counters.commands_executed == commands_before

            recovery_start = time.monotonic()

            async def submit_succeeds():
                rr = await client.post(
                    f"/compute/{SYSTEM}/jobs",
                    headers=headers,
                    json={"script": "true\n", "working_directory": str(work)},
                )
                return rr.status_code == 201

            await wait_for(submit_succeeds, timeout=flip_bound + 3)
            recovery_took = time.monotonic() - recovery_start
            assert recovery_took <= flip_bound, (
                f"recovery took {recovery_took:.2f}s, bound {flip_bound:.2f}s"
            )
    finally:
        await gw.stop()
        await fabric.stop()


# --- 7. statelessness across two instances ------------------------------------------------------


@pytest.mark.slow
async def test_c07_stateless_two_instances(tmp_path):
    fabric = Fabric(FabricConfig(backing_dir=str(tmp_path), accept_delay=0.0))
    await fabric.start()
    gw1 = await make_gateway(fabric)
    gw2 = await make_gateway(fabric)
    h1 = await start_server(gw1.app)
    h2 = await start_server(gw2.app)
    try:
        token = mint_for(fabric, ttl=3600)
        headers = bearer(token)

        def spec_for(base: str):
            return parse_workload(
                {
                    "system": SYSTEM,
                    "clients": 3,
                    "iterations": 1,
                    "vars": {"base": base},
                    "steps": LIFECYCLE_STEPS,
                }
            )

        (tmp_path / "dual").mkdir()
        (tmp_path / "single").mkdir()
        async with httpx.AsyncClient(
            base_url=h1.base_url, timeout=60.0
        ) as c1, httpx.AsyncClient(base_url=h2.base_url, timeout=60.0) as c2:
            await wait_healthy(c1, headers)
            await wait_healthy(c2, headers)

            # round-robin across both instances
            dual = WorkloadRunner(spec_for(f"{tmp_path}/dual"), [c1, c2], token)
            dual_report = await dual.run()
            assert dual_report.steps["total"].errors == 0
            for step in ("mkdir", "submit", "poll", "download-output"):
                assert dual_report.steps[step].count == 3

            # identical workload against a single instance
            single = WorkloadRunner(spec_for(f"{tmp_path}/single"), [c1], token)
            single_report = await single.run()
            assert single_report.steps["total"].errors == 0

            # final state identical: same outputs, same terminal job states
            for client_idx in range(3):
                expected = f"payload for client {client_idx}".encode()
                for base in ("dual", "single"):
                    r = await c1.get(
                        f"/filesystem/{SYSTEM}/ops/download",
                        params={"path": f"{tmp_path}/{base}/c{client_idx}/out.txt"},
                        headers=headers,
                    )
                    assert r.status_code == 200
                    assert r.content == expected
    finally:
        await h1.stop()
        await h2.stop()
        await gw1.stop()
        await gw2.stop()
        await fabric.stop()


# --- 8. pool invariants under stress ------------------------------------------------------------


async def test_c08_pool_invariant_stress():
    from test_pool import (
        test_randomized_stress_cap_safety_and_conservation,
        test_release_wakes_longest_waiter_fifo,
    )

    await test_randomized_stress_cap_safety_and_conservation()
    await test_release_wakes_longest_waiter_fifo()


# --- 9. oracle equivalence over random trees ------------------------------------------------------


async def test_c09_oracle_equivalence(fabric, gateway, tmp_path):
    rng = random.Random(9021)
    async with asgi_client(gateway) as client:
        headers = bearer(mint_for(fabric))
        await wait_healthy(client, headers)

        for tree_idx in range(50):
            root = tmp_path / f"tree{tree_idx}"
            root.mkdir()
            files = []
            for i in range(rng.randint(1, 6)):
                name = rng.choice(["", "."]) + f"f{i}-{rng.randint(0, 999)}"
                body = os.urandom(rng.randint(0, 2048))
                (root / name).write_bytes(body)
                files.append((name, body))
            for i in range(rng.randint(0, 2)):
                (root / f"d{i}").mkdir()

            # ls against direct local inspection
            r = await client.get(
                f"/filesystem/{SYSTEM}/ops/ls",
                params={"path": str(root), "showHidden": "true"},
                headers=headers,
            )
            assert r.status_code == 200
            listed = {e["name"]: e for e in r.json()}
            local = {entry.name: entry for entry in os.scandir(root)}
            assert set(listed) == set(local)
            for name, entry in listed.items():
                st = local[name].stat(follow_symlinks=False)
                assert entry["size_bytes"] == st.st_size
                assert entry["kind"] == ("dir" if local[name].is_dir() else "file")

            # checksum + download byte-match the backing files
            for name, body in files:
                path = f"{root}/{name}"
                r = await client.get(
                    f"/filesystem/{SYSTEM}/ops/checksum",
                    params={"path": path},
                    headers=headers,
                )
                assert r.json()["checksum"] == hashlib.sha256(body).hexdigest()
                r = await client.get(
                    f"/filesystem/{SYSTEM}/ops/download",
                    params={"path": path},
                    headers=headers,
                )
                assert r.content == body


# --- 10. header guard ------------------------------------------------------------------------------


async def test_c10_header_guard(fabric, gateway):
    handle = await start_server(gateway.app)
    try:
        token = mint_for(fabric)
        async with httpx.AsyncClient(base_url=handle.base_url) as client:
            await wait_healthy(client, bearer(token))

            headers = bearer(token)
            base_size = sum(len(k) + len(v) + 4 for k, v in headers.items())
            headers["X-Fill"] = "a" * max(0, 9000 - base_size - len("X-Fill") - 4)
            total = sum(len(k) + len(v) + 4 for k, v in headers.items())
            assert total >= 9000 - 8
            r = await client.get(f"/status/systems/{SYSTEM}", headers=headers)
            assert r.status_code == 431
            assert r.json()["error_code"] == "headers_too_large"

            headers = bearer(token)
            headers["X-Fill"] = "a" * max(0, 7000 - base_size - len("X-Fill") - 4)
            r = await client.get(f"/status/systems/{SYSTEM}", headers=headers)
            assert r.status_code == 200
    finally:
        await handle.stop()
