"""Fabric internals: command interpreter, simulated scheduler lifecycle,
permission emulation, and counter exactness."""

import asyncio
from pathlib import Path

import pytest

from hpcgate import remote_protocol as rp
from hpcgate.fabric.commands import CommandContext, run_command
from hpcgate.fabric.scheduler_sim import SimScheduler

pytestmark = pytest.mark.anyio


@pytest.fixture
def scheduler(tmp_path):
    return SimScheduler(str(tmp_path), dispatch_delay=0.15)


@pytest.fixture
def ctx(tmp_path, scheduler):
    return CommandContext(root=Path(tmp_path), scheduler=scheduler, username="alice")


async def run(ctx, line, stdin=b""):
    return await run_command(ctx, line, stdin)


# --- basic commands ----------------------------------------------------------------


async def test_true_false_echo(ctx):
    assert (await run(ctx, "true"))[0] == 0
    assert (await run(ctx, "false"))[0] == 1
    code, out, _ = await run(ctx, "echo a b")
    assert (code, out) == (0, b"a b\n")


async def test_sh_dash_c_exit(ctx):
    assert (await run(ctx, "sh -c 'exit 3'"))[0] == 3
    assert (await run(ctx, "sh -c true"))[0] == 0


async def test_unknown_command(ctx):
    code, _, err = await run(ctx, "slurmctld --start")
    assert code == 127
    assert b"command not found" in err


async def test_path_containment(ctx):
    code, _, err = await run(ctx, "cat /etc/passwd")
    assert code == rp.EXIT_PERM
    assert b"permission denied" in err
    # traversal does not escape either
    code, _, _ = await run(ctx, f"cat {ctx.root}/../../../etc/passwd")
    assert code == rp.EXIT_PERM


async def test_fput_fget_roundtrip(ctx, tmp_path):
    body = b"\x00\x01\x02" * 100
    code, _, err = await run(ctx, f"fput {tmp_path}/f.bin {len(body)}", stdin=body)
    assert code == 0, err
    code, out, _ = await run(ctx, f"fget --max-bytes 1000000 {tmp_path}/f.bin")
    assert code == 0
    assert out == b"SIZE 300\n" + body


async def test_fput_refuses_existing_without_overwrite(ctx, tmp_path):
    (tmp_path / "f.bin").write_bytes(b"old")
    code, _, _ = await run(ctx, f"fput {tmp_path}/f.bin 3", stdin=b"new")
    assert code == rp.EXIT_EXISTS
    code, _, _ = await run(ctx, f"fput --overwrite {tmp_path}/f.bin 3", stdin=b"new")
    assert code == 0
    assert (tmp_path / "f.bin").read_bytes() == b"new"


async def test_fput_missing_parent(ctx, tmp_path):
    code, _, _ = await run(ctx, f"fput {tmp_path}/no/dir/f.bin 1", stdin=b"x")
    assert code == rp.EXIT_NOENT


async def test_fget_cap_refuses_before_content(ctx, tmp_path):
    (tmp_path / "big.bin").write_bytes(b"x" * 2048)
    code, out, err = await run(ctx, f"fget --max-bytes 1024 {tmp_path}/big.bin")
    assert code == rp.EXIT_TOO_LARGE
    assert out == b""  # no content escaped
    assert b"exceeds cap" in err


async def test_fls_record_format(ctx, tmp_path):
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "a.txt").write_bytes(b"abc")
    (tmp_path / "data" / "sub").mkdir()
    code, out, _ = await run(ctx, f"fls {tmp_path}/data")
    assert code == 0
    lines = out.decode().splitlines()
    names = {}
    for line in lines:
        name, kind, size, mode, mtime = line.split("|")
        names[name] = (kind, int(size), mode, float(mtime))
    assert names["a.txt"][0] == "file"
    assert names["a.txt"][1] == 3
    assert names["sub"][0] == "dir"


async def test_permission_emulation_via_mode_bits(ctx, tmp_path):
    secret = tmp_path / "secret.txt"
    secret.write_bytes(b"data")
    secret.chmod(0o000)
    code, _, err = await run(ctx, f"cat {tmp_path}/secret.txt")
    assert code == rp.EXIT_PERM
    assert b"permission denied" in err
    # test -r agrees
    assert (await run(ctx, f"test -r {tmp_path}/secret.txt"))[0] != 0
    secret.chmod(0o600)
    assert (await run(ctx, f"cat {tmp_path}/secret.txt"))[0] == 0


async def test_mkdir_rm_semantics(ctx, tmp_path):
    assert (await run(ctx, f"mkdir {tmp_path}/d"))[0] == 0
    assert (await run(ctx, f"mkdir {tmp_path}/d"))[0] == rp.EXIT_EXISTS
    assert (await run(ctx, f"mkdir {tmp_path}/no/parent"))[0] == rp.EXIT_NOENT
    (tmp_path / "d" / "f").write_bytes(b"x")
    assert (await run(ctx, f"rm {tmp_path}/d"))[0] == rp.EXIT_KIND  # dir needs -r
    assert (await run(ctx, f"rm -r {tmp_path}/d"))[0] == 0
    assert (await run(ctx, f"rm {tmp_path}/d"))[0] == rp.EXIT_NOENT


async def test_sha256sum_matches_hashlib(ctx, tmp_path):
    import hashlib

    body = b"checksum me"
    (tmp_path / "c.bin").write_bytes(body)
    code, out, _ = await run(ctx, f"sha256sum {tmp_path}/c.bin")
    assert code == 0
    assert out.decode().split()[0] == hashlib.sha256(body).hexdigest()


# --- simulated scheduler --------------------------------------------------------------


async def test_job_lifecycle_pending_running_completed(ctx, tmp_path):
    (tmp_path / "w").mkdir()
    script = tmp_path / "w" / "job.sh"
    script.write_text("sleep 0.4\necho done\n")
    code, out, _ = await run(ctx, f"fsub {script}")
    assert code == 0
    assert out.startswith(b"JOBID ")
    job_id = out.split()[1].decode()
    assert job_id == "1"  # ids start at 1

    async def state():
        _, out, _ = await run(ctx, f"fstat {job_id}")
        return out.decode().split("|")[1]

    assert await state() == rp.VENDOR_PENDING  # still in the queue dwell
    await asyncio.sleep(0.3)
    assert await state() == rp.VENDOR_RUNNING
    for _ in range(30):
        if await state() == rp.VENDOR_COMPLETED:
            break
        await asyncio.sleep(0.1)
    assert await state() == rp.VENDOR_COMPLETED
    record = (await run(ctx, f"fstat {job_id}"))[1].decode().strip()
    job_id_f, state_f, exit_f, _, name_f, out_f, err_f = record.split("|")
    assert (job_id_f, state_f, exit_f, name_f) == (job_id, "CD", "0", "job")
    assert Path(out_f).read_bytes() == b"done\n"


async def test_failing_script_becomes_failed(ctx, tmp_path):
    script = tmp_path / "bad.sh"
    script.write_text("exit 7\n")
    _, out, _ = await run(ctx, f"fsub {script}")
    job_id = out.split()[1].decode()
    for _ in range(30):
        _, out, _ = await run(ctx, f"fstat {job_id}")
        fields = out.decode().split("|")
        if fields[1] in (rp.VENDOR_FAILED, rp.VENDOR_COMPLETED):
            break
        await asyncio.sleep(0.1)
    assert fields[1] == rp.VENDOR_FAILED
    assert fields[2] == "7"


async def test_cancel_pending_job(ctx, tmp_path):
    script = tmp_path / "s.sh"
    script.write_text("sleep 5\n")
    _, out, _ = await run(ctx, f"fsub {script}")
    job_id = out.split()[1].decode()
    assert (await run(ctx, f"fcancel {job_id}"))[0] == 0  # still PENDING
    _, out, _ = await run(ctx, f"fstat {job_id}")
    assert out.decode().split("|")[1] == rp.VENDOR_CANCELLED


async def test_cancel_running_job(ctx, tmp_path):
    script = tmp_path / "s.sh"
    script.write_text("sleep 10\n")
    _, out, _ = await run(ctx, f"fsub {script}")
    job_id = out.split()[1].decode()
    await asyncio.sleep(0.3)  # past the dwell: RUNNING now
    assert (await run(ctx, f"fcancel {job_id}"))[0] == 0
    for _ in range(30):
        _, out, _ = await run(ctx, f"fstat {job_id}")
        if out.decode().split("|")[1] == rp.VENDOR_CANCELLED:
            break
        await asyncio.sleep(0.1)
    assert out.decode().split("|")[1] == rp.VENDOR_CANCELLED


async def test_cancel_terminal_job_is_noop(ctx, tmp_path):
    script = tmp_path / "s.sh"
    script.write_text("true\n")
    _, out, _ = await run(ctx, f"fsub {script}")
    job_id = out.split()[1].decode()
    for _ in range(30):
        _, out, _ = await run(ctx, f"fstat {job_id}")
        if out.decode().split("|")[1] == rp.VENDOR_COMPLETED:
            break
        await asyncio.sleep(0.1)
    assert (await run(ctx, f"fcancel {job_id}"))[0] == 0
    _, out, _ = await run(ctx, f"fstat {job_id}")
    assert out.decode().split("|")[1] == rp.VENDOR_COMPLETED


async def test_unknown_job_operations(ctx):
    assert (await run(ctx, "fstat 999999"))[0] == rp.EXIT_NOENT
    assert (await run(ctx, "fcancel 999999"))[0] == rp.EXIT_NOENT


async def test_fstat_ping(ctx):
    code, out, _ = await run(ctx, "fstat --ping")
    assert (code, out) == (0, b"PONG\n")


async def test_fsub_env_reaches_job(ctx, tmp_path):
    script = tmp_path / "env.sh"
    script.write_text('echo "$GREETING"\n')
    _, out, _ = await run(ctx, "fsub --env GREETING=hello " + str(script))
    job_id = out.split()[1].decode()
    for _ in range(30):
        _, out, _ = await run(ctx, f"fstat {job_id}")
        fields = out.decode().strip().split("|")
        if fields[1] == rp.VENDOR_COMPLETED:
            break
        await asyncio.sleep(0.1)
    assert Path(fields[5]).read_text() == "hello\n"


async def test_spool_records_written(ctx, scheduler, tmp_path):
    script = tmp_path / "s.sh"
    script.write_text("true\n")
    await run(ctx, f"fsub {script}")
    spool = tmp_path / ".fabric" / "jobs" / "1.json"
    assert spool.exists()
    import json

    record = json.loads(spool.read_text())
    assert record["job_id"] == 1
