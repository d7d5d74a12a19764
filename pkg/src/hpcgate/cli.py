"""Command-line entry points.

``hpcgate serve``    run the gateway from a config file
``hpcgate fabric``   run the self-contained test fabric standalone
``hpcgate bench``    load-generation client: seed | run | table1 | verify

The bench commands are thin HTTP clients of a running gateway; table1 can
alternatively self-host the entire stack for a one-command comparison.
"""

from __future__ import annotations

import argparse
import asyncio
import sys
import tempfile
from pathlib import Path

import httpx
import yaml


def _fail(message: str) -> "int":
    print(f"error: {message}", file=sys.stderr)
    return 2


# --- serve -------------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .config import ConfigError, load_config
    from .gateway import Gateway
    from .serving import parse_listen

    try:
        settings = load_config(args.config)
    except ConfigError as exc:
        return _fail(f"invalid config: {exc}")
    host, port = parse_listen(args.listen or settings.listen)
    gw = Gateway(settings)
    uvicorn.run(gw.app, host=host, port=port, log_level=args.log_level)
    return 0


# --- fabric -------------------------------------------------------------------------


async def _run_fabric(args: argparse.Namespace) -> int:
    from .fabric import Fabric, FabricConfig
    from .serving import start_server

    backing = args.backing_dir or tempfile.mkdtemp(prefix="fabric-")
    Path(backing).mkdir(parents=True, exist_ok=True)
    fabric = Fabric(
        FabricConfig(
            backing_dir=backing,
            users=tuple(args.users.split(",")),
            accept_delay=args.accept_delay,
            max_unauth_startups=args.max_startups,
            max_sessions=args.max_sessions,
            idp_introspection_delay=args.idp_delay,
        )
    )
    await fabric.start(ssh_port=args.ssh_port)
    idp = await start_server(fabric.idp.build_app(), port=args.idp_port)
    authz = await start_server(fabric.relations.build_app(), port=args.authz_port)
    admin = await start_server(fabric.build_admin_app(), port=args.admin_port)

    print(f"backing dir:   {backing}")
    print(f"ssh:           {fabric.ssh.host}:{fabric.ssh.port}")
    print(f"idp:           {idp.base_url}  (jwks: {idp.base_url}/jwks)")
    print(f"authz:         {authz.base_url}")
    print(f"counters:      {admin.base_url}/counters")

    if args.emit_gateway_config:
        out_dir = Path(args.emit_gateway_config)
        out_dir.mkdir(parents=True, exist_ok=True)
        for mode, pooled in (("pooled", True), ("nonpooled", False)):
            cfg = fabric.gateway_config_dict(
                pooled=pooled, jwks_url=f"{idp.base_url}/jwks"
            )
            path = out_dir / f"gateway-{mode}.yaml"
            path.write_text(yaml.safe_dump(cfg, sort_keys=False))
            print(f"gateway config ({mode}): {path}")

    print("fabric running; Ctrl-C to stop", flush=True)
    try:
        while True:
            await asyncio.sleep(3600)
    except (KeyboardInterrupt, asyncio.CancelledError):
        pass
    finally:
        for handle in (idp, authz, admin):
            await handle.stop()
        await fabric.stop()
    return 0


def cmd_fabric(args: argparse.Namespace) -> int:
    try:
        return asyncio.run(_run_fabric(args))
    except KeyboardInterrupt:
        return 0


# --- bench --------------------------------------------------------------------------


async def _resolve_token(args: argparse.Namespace) -> str:
    source = args.token_from
    if source.startswith("file:"):
        return Path(source[len("file:") :]).read_text().strip()
    if source == "mint":
        if not args.idp_url:
            raise RuntimeError("--token-from mint requires --idp-url")
        async with httpx.AsyncClient() as http:
            response = await http.post(
                args.idp_url.rstrip("/") + "/mint",
                json={
                    "claims": {
                        "preferred_username": args.user,
                        "firecrest-systems": [args.system],
                    },
                    "ttl": 3600,
                },
            )
            response.raise_for_status()
            return response.json()["access_token"]
    raise RuntimeError(f"unsupported --token-from {source!r} (use mint or file:PATH)")


async def _bench_seed(args: argparse.Namespace) -> int:
    from .bench.dataset import seed_dataset

    token = await _resolve_token(args)
    async with httpx.AsyncClient(base_url=args.gateway, timeout=60.0) as client:
        await seed_dataset(
            client,
            token,
            args.system,
            args.dir,
            args.n_files,
            size=args.size,
            verify=args.verify,
        )
    print(f"seeded {args.n_files} file(s) of {args.size} bytes under {args.dir}")
    return 0


async def _bench_run(args: argparse.Namespace) -> int:
    from .bench.stats import write_raw_log
    from .bench.workload import WorkloadRunner, load_workload

    spec = load_workload(args.spec)
    token = await _resolve_token(args)
    clients = [
        httpx.AsyncClient(base_url=url, timeout=120.0) for url in args.gateway
    ]
    try:
        runner = WorkloadRunner(spec, clients, token)
        report = await runner.run()
    finally:
        for client in clients:
            await client.aclose()
    raw_path = args.out.rsplit(".", 1)[0] + ".raw.jsonl"
    write_raw_log(runner.records, raw_path)
    report.raw_log = raw_path
    report.config["gateways"] = list(args.gateway)
    report.write(args.out)
    total = report.steps["total"]
    print(
        f"workload done: {total.count} requests, {total.errors} errors, "
        f"mean {total.mean * 1000:.1f} ms, p95 {total.p95 * 1000:.1f} ms "
        f"(wall {report.wall_clock_total:.2f} s)"
    )
    print(f"report: {args.out}\nraw log: {raw_path}")
    return 1 if total.errors else 0


async def wait_until_healthy(
    base_url: str, token: str, system: str, timeout: float = 30.0
) -> None:
    deadline = asyncio.get_event_loop().time() + timeout
    async with httpx.AsyncClient(base_url=base_url) as client:
        while True:
            try:
                r = await client.get(
                    f"/status/systems/{system}",
                    headers={"Authorization": f"Bearer {token}"},
                )
                if r.status_code == 200 and all(
                    s["state"] == "healthy" for s in r.json()
                ):
                    return
            except httpx.HTTPError:
                pass
            if asyncio.get_event_loop().time() > deadline:
                raise RuntimeError(f"{base_url} not healthy within {timeout}s")
            await asyncio.sleep(0.25)


async def _bench_table1(args: argparse.Namespace) -> int:
    from .bench.table1 import run_table1, start_self_hosted

    n_values = [int(n) for n in args.n.split(",")]
    modes = tuple(args.modes.split(","))
    stack = None
    if args.gateway:
        gateway_urls = {"pooled": args.gateway}
        if args.nonpooled_gateway:
            gateway_urls["nonpooled"] = args.nonpooled_gateway
        gateway_urls = {m: u for m, u in gateway_urls.items() if m in modes}
        token = await _resolve_token(args)
        system = args.system
        bench_dir = args.dir
        config_echo: dict = {"self_hosted": False}
    else:
        print("no --gateway given: self-hosting fabric + gateways", flush=True)
        backing = args.backing_dir or tempfile.mkdtemp(prefix="bench-")
        Path(backing).mkdir(parents=True, exist_ok=True)
        stack = await start_self_hosted(
            backing,
            accept_delay=args.accept_delay,
            max_unauth_startups=args.max_startups,
            max_sessions=args.max_sessions,
            modes=modes,
        )
        gateway_urls = dict(stack.gateways)
        token = stack.token
        system = stack.system
        bench_dir = stack.bench_dir
        config_echo = {
            "self_hosted": True,
            "accept_delay": args.accept_delay,
            "caps": [args.max_startups, args.max_sessions],
        }
    config_echo.update({"workers": args.workers, "repetitions": args.reps})

    clients = {
        mode: httpx.AsyncClient(base_url=url, timeout=300.0)
        for mode, url in gateway_urls.items()
    }
    try:
        for mode, url in gateway_urls.items():
            await wait_until_healthy(url, token, system)
        report = await run_table1(
            clients,
            token,
            system,
            bench_dir,
            n_values,
            workers=args.workers,
            repetitions=args.reps,
            config_echo=config_echo,
        )
    finally:
        for client in clients.values():
            await client.aclose()
        if stack is not None:
            await stack.stop()
    print(report.render_text())
    if args.out:
        report.write(args.out)
        print(f"report: {args.out}")
    return 0


def _bench_verify(args: argparse.Namespace) -> int:
    from .bench.stats import BenchReport, load_raw_log, verify_report

    report = BenchReport.load(args.report)
    raw_path = args.raw or report.raw_log
    if not raw_path:
        return _fail("no raw log recorded in the report; pass --raw")
    problems = verify_report(report, load_raw_log(raw_path))
    if problems:
        print("report arithmetic INVALID:")
        for p in problems:
            print(f"  - {p}")
        return 1
    print(f"report arithmetic verified against {raw_path}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.bench_command == "seed":
        return asyncio.run(_bench_seed(args))
    if args.bench_command == "run":
        return asyncio.run(_bench_run(args))
    if args.bench_command == "table1":
        return asyncio.run(_bench_table1(args))
    if args.bench_command == "verify":
        return _bench_verify(args)
    return _fail(f"unknown bench command {args.bench_command!r}")


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpcgate")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the gateway")
    serve.add_argument("--config", required=True, help="gateway config file (YAML)")
    serve.add_argument("--listen", help="addr:port (overrides the config)")
    serve.add_argument("--log-level", default="info")
    serve.set_defaults(func=cmd_serve)

    fabric = sub.add_parser("fabric", help="run the test fabric standalone")
    fabric.add_argument("--backing-dir", help="directory backing the emulated system")
    fabric.add_argument("--users", default="alice,bob,probe")
    fabric.add_argument("--ssh-port", type=int, default=0)
    fabric.add_argument("--idp-port", type=int, default=0)
    fabric.add_argument("--authz-port", type=int, default=0)
    fabric.add_argument("--admin-port", type=int, default=0)
    fabric.add_argument("--accept-delay", type=float, default=0.1)
    fabric.add_argument("--max-startups", type=int, default=10)
    fabric.add_argument("--max-sessions", type=int, default=10)
    fabric.add_argument("--idp-delay", type=float, default=0.0)
    fabric.add_argument(
        "--emit-gateway-config",
        metavar="DIR",
        help="write ready gateway-pooled.yaml / gateway-nonpooled.yaml here",
    )
    fabric.set_defaults(func=cmd_fabric)

    bench = sub.add_parser("bench", help="load-generation client")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    def common_client_args(p: argparse.ArgumentParser, gateway_required: bool = True):
        p.add_argument("--gateway", required=gateway_required, help="gateway base URL")
        p.add_argument(
            "--token-from",
            default="mint",
            help="'mint' (needs --idp-url) or 'file:PATH'",
        )
        p.add_argument("--idp-url", help="mock IdP base URL for --token-from mint")
        p.add_argument("--system", default="cluster-a")
        p.add_argument("--user", default="alice")

    seed = bench_sub.add_parser("seed", help="create the benchmark dataset")
    common_client_args(seed)
    seed.add_argument("--dir", required=True, help="absolute dataset directory")
    seed.add_argument("--n-files", type=int, default=100)
    seed.add_argument("--size", type=int, default=1024)
    seed.add_argument("--verify", action="store_true", default=True)
    seed.add_argument("--no-verify", dest="verify", action="store_false")
    seed.set_defaults(func=cmd_bench)

    run = bench_sub.add_parser("run", help="run a staged workload")
    run.add_argument(
        "--gateway",
        action="append",
        required=True,
        help="gateway base URL (repeat to round-robin across instances)",
    )
    run.add_argument("--token-from", default="mint")
    run.add_argument("--idp-url")
    run.add_argument("--system", default="cluster-a")
    run.add_argument("--user", default="alice")
    run.add_argument("--spec", required=True, help="workload spec file (YAML)")
    run.add_argument("--out", default="report.json")
    run.set_defaults(func=cmd_bench)

    table1 = bench_sub.add_parser(
        "table1", help="pooled vs non-pooled download comparison"
    )
    common_client_args(table1, gateway_required=False)
    table1.add_argument("--nonpooled-gateway", help="second gateway in per-request mode")
    table1.add_argument("--n", default="1,10,100", help="comma-separated N values")
    table1.add_argument(
        "--modes", default="pooled,nonpooled", help="which gateway modes to measure"
    )
    table1.add_argument("--workers", type=int, default=10)
    table1.add_argument("--reps", type=int, default=5)
    table1.add_argument("--dir", default="", help="dataset dir (external gateways)")
    table1.add_argument("--out", help="write the JSON report here")
    table1.add_argument("--backing-dir", help="backing dir for self-hosted mode")
    table1.add_argument("--accept-delay", type=float, default=0.1)
    table1.add_argument("--max-startups", type=int, default=10)
    table1.add_argument("--max-sessions", type=int, default=10)
    table1.set_defaults(func=cmd_bench)

    verify = bench_sub.add_parser("verify", help="recheck report arithmetic")
    verify.add_argument("--report", required=True)
    verify.add_argument("--raw", help="raw log path (defaults to the one in the report)")
    verify.set_defaults(func=cmd_bench)

    return parser


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
