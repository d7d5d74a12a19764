"""Shared fixtures: a started fabric, gateways wired to it in-process, and
token helpers. Gateways talk to the fabric's HTTP mocks through mounted
ASGI transports (no sockets) unless a test explicitly serves them."""

from __future__ import annotations

import asyncio

import httpx
import pytest

from hpcgate.config import Settings, parse_config
from hpcgate.fabric import Fabric, FabricConfig
from hpcgate.gateway import Gateway

SYSTEM = "cluster-a"

# Snappy health cadence for tests; staleness horizon = 3 * 0.4 = 1.2 s.
FAST_HEALTH = {"interval": 0.4, "timeout": 0.3}


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture
async def fabric(tmp_path):
    fab = Fabric(
        FabricConfig(
            backing_dir=str(tmp_path),
            accept_delay=0.0,
            dispatch_delay=0.15,
            tuples=(("alice", "can_access", f"system:{SYSTEM}"),),
        )
    )
    await fab.start()
    yield fab
    await fab.stop()


def fabric_http_client(fabric: Fabric) -> httpx.AsyncClient:
    """Outbound client for a gateway: IdP and authz served in-process."""
    return httpx.AsyncClient(
        mounts={
            "http://idp.fabric.invalid": httpx.ASGITransport(app=fabric.idp.build_app()),
            "http://authz.fabric.invalid": httpx.ASGITransport(
                app=fabric.relations.build_app()
            ),
        }
    )


def make_settings(fabric: Fabric, **kwargs) -> Settings:
    kwargs.setdefault("health", dict(FAST_HEALTH))
    return parse_config(fabric.gateway_config_dict(**kwargs), environ={})


async def make_gateway(fabric: Fabric, **kwargs) -> Gateway:
    gw = Gateway(make_settings(fabric, **kwargs), http_client=fabric_http_client(fabric))
    await gw.start()
    return gw


@pytest.fixture
async def gateway(fabric):
    gw = await make_gateway(fabric)
    yield gw
    await gw.stop()


def asgi_client(gw: Gateway) -> httpx.AsyncClient:
    return httpx.AsyncClient(
        transport=httpx.ASGITransport(app=gw.app), base_url="http://gw.invalid"
    )


@pytest.fixture
async def client(gateway):
    async with asgi_client(gateway) as c:
        yield c


def mint_for(fabric: Fabric, username: str = "alice", systems=(SYSTEM,), **kwargs) -> str:
    claims = kwargs.pop("claims", {})
    claims.setdefault("preferred_username", username)
    if systems is not None:
        claims.setdefault("firecrest-systems", list(systems))
    return fabric.mint_token(claims=claims, **kwargs)


def bearer(token: str) -> dict:
    return {"Authorization": f"Bearer {token}"}


@pytest.fixture
def token(fabric):
    return mint_for(fabric)


@pytest.fixture
def auth(token):
    return bearer(token)


async def wait_healthy(client: httpx.AsyncClient, headers: dict, timeout: float = 10.0):
    deadline = asyncio.get_event_loop().time() + timeout
    while True:
        r = await client.get(f"/status/systems/{SYSTEM}", headers=headers)
        if r.status_code == 200 and all(s["state"] == "healthy" for s in r.json()):
            return
        if asyncio.get_event_loop().time() > deadline:
            raise AssertionError(f"system never became healthy: {r.text}")
        await asyncio.sleep(0.05)


@pytest.fixture
async def ready_client(client, auth):
    """HTTP client against a gateway whose health checks have all passed."""
    await wait_healthy(client, auth)
    return client


async def wait_for(predicate, timeout: float = 10.0, interval: float = 0.05):
    deadline = asyncio.get_event_loop().time() + timeout
    while True:
        result = predicate()
        if asyncio.iscoroutine(result):
            result = await result
        if result:
            return
        if asyncio.get_event_loop().time() > deadline:
            raise AssertionError("condition not reached in time")
        await asyncio.sleep(interval)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid:
                continue
            name = nodeid.split("::test_c", 1)[1]
            number, _, label = name.partition("_")
            rows.append((int(number), label, outcome.upper()))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, label, outcome in sorted(rows):
        status = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:2d} [{label.replace('_', ' ')}]: {status}"
        )
