"""Command interpreter behind the embedded SSH server's exec channels.

Implements the remote command contract against a backing directory. Two
fabric-specific twists, both because tests may run as root:

* paths are confined to the backing directory; anything escaping it is
  answered with permission denied
* read/write permission is emulated from mode bits (owner read 0o400,
  owner write 0o200) instead of trusting the OS, so chmod-based fault
  injection works regardless of the invoking uid
"""

from __future__ import annotations

import asyncio
import hashlib
import os
import shlex
import shutil
import stat as stat_mod
import time
from dataclasses import dataclass
from pathlib import Path

from .. import remote_protocol as rp
from .scheduler_sim import SimScheduler

Outcome = tuple[int, bytes, bytes]


@dataclass
class CommandContext:
    root: Path
    scheduler: SimScheduler
    username: str


def _ok(stdout: bytes = b"") -> Outcome:
    return rp.EXIT_OK, stdout, b""


def _fail(code: int, message: str) -> Outcome:
    return code, b"", message.encode() + b"\n"


def _resolve(ctx: CommandContext, raw: str) -> Path | Outcome:
    path = Path(raw)
    if not path.is_absolute():
        path = ctx.root / path
    resolved = Path(os.path.normpath(path))
    root = Path(os.path.normpath(ctx.root))
    if resolved != root and root not in resolved.parents:
        return _fail(rp.EXIT_PERM, f"{raw}: permission denied")
    return resolved


def _readable(path: Path) -> bool:
    return bool(path.stat().st_mode & 0o400)


def _writable_dir(path: Path) -> bool:
    return bool(path.stat().st_mode & 0o200)


async def run_command(ctx: CommandContext, command_line: str, stdin: bytes) -> Outcome:
    try:
        argv = shlex.split(command_line)
    except ValueError as exc:
        return _fail(rp.EXIT_ERROR, f"cannot parse command: {exc}")
    if not argv:
        return _fail(rp.EXIT_ERROR, "empty command")
    handler = _HANDLERS.get(argv[0])
    if handler is None:
        return _fail(127, f"{argv[0]}: command not found")
    try:
        return await handler(ctx, argv[1:], stdin)
    except OSError as exc:
        return _fail(rp.EXIT_ERROR, f"{argv[0]}: {exc}")


# --- plain utilities ------------------------------------------------------------


async def _cmd_true(ctx, args, stdin) -> Outcome:
    return _ok()


async def _cmd_false(ctx, args, stdin) -> Outcome:
    return rp.EXIT_ERROR, b"", b""


async def _cmd_echo(ctx, args, stdin) -> Outcome:
    return _ok((" ".join(args) + "\n").encode())


async def _cmd_sleep(ctx, args, stdin) -> Outcome:
    if not args:
        return _fail(rp.EXIT_ERROR, "sleep: missing operand")
    await asyncio.sleep(float(args[0]))
    return _ok()


async def _cmd_sh(ctx, args, stdin) -> Outcome:
    if len(args) != 2 or args[0] != "-c":
        return _fail(rp.EXIT_ERROR, "sh: only -c CMD is supported")
    inner = args[1].strip()
    if inner.startswith("exit"):
        parts = inner.split()
        return (int(parts[1]) if len(parts) > 1 else 0), b"", b""
    return await run_command(ctx, inner, stdin)


async def _cmd_test(ctx, args, stdin) -> Outcome:
    if len(args) != 2 or args[0] not in ("-r", "-e", "-d", "-f"):
        return _fail(rp.EXIT_ERROR, "test: expected -r|-e|-d|-f PATH")
    flag, raw = args
    path = _resolve(ctx, raw)
    if isinstance(path, tuple):
        return rp.EXIT_ERROR, b"", b""  # unreachable paths simply fail the test
    if not path.exists():
        return rp.EXIT_ERROR, b"", b""
    if flag == "-d" and not path.is_dir():
        return rp.EXIT_ERROR, b"", b""
    if flag == "-f" and not path.is_file():
        return rp.EXIT_ERROR, b"", b""
    if flag == "-r" and not _readable(path):
        return rp.EXIT_ERROR, b"", b""
    return _ok()


async def _cmd_cat(ctx, args, stdin) -> Outcome:
    if len(args) != 1:
        return _fail(rp.EXIT_ERROR, "cat: expected one path")
    path = _resolve(ctx, args[0])
    if isinstance(path, tuple):
        return path
    if not path.exists():
        return _fail(rp.EXIT_NOENT, f"cat: {args[0]}: no such file or directory")
    if path.is_dir():
        return _fail(rp.EXIT_KIND, f"cat: {args[0]}: is a directory")
    if not _readable(path):
        return _fail(rp.EXIT_PERM, f"cat: {args[0]}: permission denied")
    return _ok(path.read_bytes())


async def _cmd_mkdir(ctx, args, stdin) -> Outcome:
    if len(args) != 1:
        return _fail(rp.EXIT_ERROR, "mkdir: expected one path")
    path = _resolve(ctx, args[0])
    if isinstance(path, tuple):
        return path
    if path.exists():
        return _fail(rp.EXIT_EXISTS, f"mkdir: {args[0]}: file exists")
    parent = path.parent
    if not parent.is_dir():
        return _fail(rp.EXIT_NOENT, f"mkdir: {args[0]}: no such file or directory")
    if not _writable_dir(parent):
        return _fail(rp.EXIT_PERM, f"mkdir: {args[0]}: permission denied")
    path.mkdir()
    return _ok()


async def _cmd_rm(ctx, args, stdin) -> Outcome:
    recursive = False
    if args and args[0] == "-r":
        recursive = True
        args = args[1:]
    if len(args) != 1:
        return _fail(rp.EXIT_ERROR, "rm: expected [-r] PATH")
    path = _resolve(ctx, args[0])
    if isinstance(path, tuple):
        return path
    if not path.exists():
        return _fail(rp.EXIT_NOENT, f"rm: {args[0]}: no such file or directory")
    if not _writable_dir(path.parent):
        return _fail(rp.EXIT_PERM, f"rm: {args[0]}: permission denied")
    if path.is_dir():
        if not recursive:
            return _fail(rp.EXIT_KIND, f"rm: {args[0]}: is a directory")
        shutil.rmtree(path)
    else:
        path.unlink()
    return _ok()


async def _cmd_sha256sum(ctx, args, stdin) -> Outcome:
    if len(args) != 1:
        return _fail(rp.EXIT_ERROR, "sha256sum: expected one path")
    path = _resolve(ctx, args[0])
    if isinstance(path, tuple):
        return path
    if not path.exists():
        return _fail(rp.EXIT_NOENT, f"sha256sum: {args[0]}: no such file or directory")
    if path.is_dir():
        return _fail(rp.EXIT_KIND, f"sha256sum: {args[0]}: is a directory")
    if not _readable(path):
        return _fail(rp.EXIT_PERM, f"sha256sum: {args[0]}: permission denied")
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return _ok(f"{digest}  {args[0]}\n".encode())


# --- transfer / listing -----------------------------------------------------------


def _entry_kind(mode: int) -> str:
    if stat_mod.S_ISDIR(mode):
        return "dir"
    if stat_mod.S_ISREG(mode):
        return "file"
    if stat_mod.S_ISLNK(mode):
        return "link"
    return "other"


async def _cmd_fls(ctx, args, stdin) -> Outcome:
    if len(args) != 1:
        return _fail(rp.EXIT_ERROR, "fls: expected one path")
    path = _resolve(ctx, args[0])
    if isinstance(path, tuple):
        return path
    if not path.exists():
        return _fail(rp.EXIT_NOENT, f"fls: {args[0]}: no such file or directory")
    if not path.is_dir():
        return _fail(rp.EXIT_KIND, f"fls: {args[0]}: not a directory")
    if not _readable(path):
        return _fail(rp.EXIT_PERM, f"fls: {args[0]}: permission denied")
    lines = []
    for entry in sorted(path.iterdir(), key=lambda p: p.name):
        st = entry.lstat()
        lines.append(
            rp.dir_entry_record(
                entry.name,
                _entry_kind(st.st_mode),
                st.st_size,
                st.st_mode & 0o7777,
                st.st_mtime,
            )
        )
    payload = ("\n".join(lines) + "\n") if lines else ""
    return _ok(payload.encode())


async def _cmd_fget(ctx, args, stdin) -> Outcome:
    max_bytes = None
    if len(args) == 3 and args[0] == "--max-bytes":
        max_bytes = int(args[1])
        args = args[2:]
    if len(args) != 1:
        return _fail(rp.EXIT_ERROR, "fget: expected [--max-bytes N] PATH")
    path = _resolve(ctx, args[0])
    if isinstance(path, tuple):
        return path
    if not path.exists():
        return _fail(rp.EXIT_NOENT, f"fget: {args[0]}: no such file or directory")
    if path.is_dir():
        return _fail(rp.EXIT_KIND, f"fget: {args[0]}: is a directory")
    if not _readable(path):
        return _fail(rp.EXIT_PERM, f"fget: {args[0]}: permission denied")
    size = path.stat().st_size
    if max_bytes is not None and size > max_bytes:
        # size check precedes any content output
        return _fail(
            rp.EXIT_TOO_LARGE, f"fget: {args[0]}: {size} bytes exceeds cap {max_bytes}"
        )
    return _ok(rp.SIZE_HEADER + str(size).encode() + b"\n" + path.read_bytes())


async def _cmd_fput(ctx, args, stdin) -> Outcome:
    overwrite = False
    if args and args[0] == "--overwrite":
        overwrite = True
        args = args[1:]
    if len(args) != 2:
        return _fail(rp.EXIT_ERROR, "fput: expected [--overwrite] PATH NBYTES")
    raw, nbytes_text = args
    path = _resolve(ctx, raw)
    if isinstance(path, tuple):
        return path
    nbytes = int(nbytes_text)
    if len(stdin) != nbytes:
        return _fail(
            rp.EXIT_ERROR, f"fput: expected {nbytes} bytes on stdin, got {len(stdin)}"
        )
    if path.exists() and not overwrite:
        return _fail(rp.EXIT_EXISTS, f"fput: {raw}: file exists")
    parent = path.parent
    if not parent.exists():
        return _fail(rp.EXIT_NOENT, f"fput: {raw}: no such file or directory")
    if not parent.is_dir():
        return _fail(rp.EXIT_KIND, f"fput: {raw}: parent is not a directory")
    if not _writable_dir(parent):
        return _fail(rp.EXIT_PERM, f"fput: {raw}: permission denied")
    path.write_bytes(stdin)
    return _ok()


# --- scheduler front-end ------------------------------------------------------------


async def _cmd_fsub(ctx, args, stdin) -> Outcome:
    environment: dict[str, str] = {}
    name = None
    rest = list(args)
    while len(rest) >= 2 and rest[0] in ("--env", "--name"):
        if rest[0] == "--env":
            key, _, value = rest[1].partition("=")
            environment[key] = value
        else:
            name = rest[1]
        rest = rest[2:]
    if len(rest) != 1:
        return _fail(rp.EXIT_ERROR, "fsub: expected [--env K=V ...] [--name N] SCRIPT")
    path = _resolve(ctx, rest[0])
    if isinstance(path, tuple):
        return path
    if not path.is_file():
        return _fail(rp.EXIT_NOENT, f"fsub: {rest[0]}: no such file or directory")
    job_id = await ctx.scheduler.submit(
        str(path), environment, now=time.time(), name=name
    )
    return _ok(f"JOBID {job_id}\n".encode())


async def _cmd_fstat(ctx, args, stdin) -> Outcome:
    if args == ["--ping"]:
        return _ok(b"PONG\n")
    if len(args) != 1 or not args[0].isdigit():
        return _fail(rp.EXIT_ERROR, "fstat: expected --ping or JOBID")
    line = ctx.scheduler.status_line(int(args[0]))
    if line is None:
        return _fail(rp.EXIT_NOENT, f"fstat: unknown job {args[0]}")
    return _ok(line.encode() + b"\n")


async def _cmd_fcancel(ctx, args, stdin) -> Outcome:
    if len(args) != 1 or not args[0].isdigit():
        return _fail(rp.EXIT_ERROR, "fcancel: expected JOBID")
    if not await ctx.scheduler.cancel(int(args[0])):
        return _fail(rp.EXIT_NOENT, f"fcancel: unknown job {args[0]}")
    return _ok()


_HANDLERS = {
    "true": _cmd_true,
    "false": _cmd_false,
    "echo": _cmd_echo,
    "sleep": _cmd_sleep,
    "sh": _cmd_sh,
    "test": _cmd_test,
    "cat": _cmd_cat,
    "mkdir": _cmd_mkdir,
    "rm": _cmd_rm,
    "sha256sum": _cmd_sha256sum,
    "fls": _cmd_fls,
    "fget": _cmd_fget,
    "fput": _cmd_fput,
    "fsub": _cmd_fsub,
    "fstat": _cmd_fstat,
    "fcancel": _cmd_fcancel,
}
