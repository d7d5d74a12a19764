"""CLI wiring, including one full-stack smoke test with real processes:
fabric -> emitted gateway config -> serve -> bench seed/run/verify."""

import json
import socket
import subprocess
import sys
import time
import urllib.request
from pathlib import Path

import pytest
import yaml

from hpcgate.cli import build_parser, main


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_parser_exposes_spec_surface():
    parser = build_parser()
    args = parser.parse_args(["serve", "--config", "gw.yaml", "--listen", "0.0.0.0:1"])
    assert args.config == "gw.yaml"
    for sub in (
        ["bench", "seed", "--gateway", "http://x", "--dir", "/d"],
        ["bench", "run", "--gateway", "http://x", "--spec", "w.yaml"],
        ["bench", "table1"],
        ["bench", "verify", "--report", "r.json"],
        ["fabric"],
    ):
        parser.parse_args(sub)


def test_bench_verify_cli(tmp_path):
    from hpcgate.bench.stats import BenchReport, RawRecord, aggregate_records, write_raw_log

    records = [
        RawRecord(0.0, 0, "ping", "GET", "/status/ping", 200, 0.01, "t", True)
        for _ in range(3)
    ]
    raw = tmp_path / "raw.jsonl"
    write_raw_log(records, str(raw))
    report = BenchReport(
        steps=aggregate_records(records), wall_clock_total=1.0, raw_log=str(raw)
    )
    report_path = tmp_path / "report.json"
    report.write(str(report_path))
    assert main(["bench", "verify", "--report", str(report_path)]) == 0

    # corrupt the report: verify must fail loudly
    data = json.loads(report_path.read_text())
    data["steps"]["ping"]["mean"] = 42.0
    report_path.write_text(json.dumps(data))
    assert main(["bench", "verify", "--report", str(report_path)]) == 1


def _wait_http(url: str, timeout: float = 30.0) -> None:
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            with urllib.request.urlopen(url, timeout=2):
                return
        except Exception:
            time.sleep(0.25)
    raise AssertionError(f"{url} never came up")


@pytest.mark.slow
def test_full_stack_over_real_processes(tmp_path):
    backing = tmp_path / "backing"
    backing.mkdir()
    cfg_dir = tmp_path / "cfg"
    ssh_port, idp_port, authz_port, admin_port, gw_port = (free_port() for _ in range(5))

    procs = []
    try:
        fabric_proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "hpcgate.cli",
                "fabric",
                "--backing-dir",
                str(backing),
                "--ssh-port",
                str(ssh_port),
                "--idp-port",
                str(idp_port),
                "--authz-port",
                str(authz_port),
                "--admin-port",
                str(admin_port),
                "--accept-delay",
                "0.01",
                "--emit-gateway-config",
                str(cfg_dir),
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        procs.append(fabric_proc)
        idp_url = f"http://127.0.0.1:{idp_port}"
        _wait_http(f"{idp_url}/counters")
        config_path = cfg_dir / "gateway-pooled.yaml"
        deadline = time.time() + 30
        while not config_path.exists() and time.time() < deadline:
            time.sleep(0.2)
        assert config_path.exists()
        # speed up health for the test
        raw = yaml.safe_load(config_path.read_text())
        raw["systems"][0]["health"] = {"interval": 0.5, "timeout": 0.4}
        config_path.write_text(yaml.safe_dump(raw))

        serve_proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "hpcgate.cli",
                "serve",
                "--config",
                str(config_path),
                "--listen",
                f"127.0.0.1:{gw_port}",
                "--log-level",
                "warning",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        procs.append(serve_proc)
        gateway = f"http://127.0.0.1:{gw_port}"
        _wait_http(f"{gateway}/status/ping")

        bench_dir = str(backing / "bench")
        rc = main(
            [
                "bench",
                "seed",
                "--gateway",
                gateway,
                "--idp-url",
                idp_url,
                "--dir",
                bench_dir,
                "--n-files",
                "3",
                "--size",
                "64",
            ]
        )
        assert rc == 0
        for i in range(3):
            assert (backing / "bench" / f"file_{i:04d}.bin").stat().st_size == 64

        spec_path = tmp_path / "workload.yaml"
        spec_path.write_text(
            yaml.safe_dump(
                {
                    "system": "cluster-a",
                    "clients": 2,
                    "iterations": 2,
                    "vars": {"dir": bench_dir},
                    "steps": [
                        {"name": "ping", "endpoint": "/status/ping"},
                        {
                            "name": "download",
                            "endpoint": "/filesystem/{system}/ops/download?path={dir}/file_0000.bin",
                        },
                    ],
                }
            )
        )
        report_path = tmp_path / "report.json"
        rc = main(
            [
                "bench",
                "run",
                "--gateway",
                gateway,
                "--idp-url",
                idp_url,
                "--spec",
                str(spec_path),
                "--out",
                str(report_path),
            ]
        )
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["steps"]["download"]["count"] == 4
        assert report["steps"]["total"]["errors"] == 0

        assert main(["bench", "verify", "--report", str(report_path)]) == 0
    finally:
        for proc in procs:
            proc.terminate()
        for proc in procs:
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
