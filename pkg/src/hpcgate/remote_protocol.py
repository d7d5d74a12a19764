"""The remote command contract between the gateway's clients and a backend.

Backends expose a small argv-style command set over SSH exec channels. The
embedded test backend implements exactly this contract; a real deployment
would install equivalent commands (or a vendor client would translate to
native tools). Pipe-separated single-line records keep parsing trivial.

Commands
--------
``fls PATH``
    One line per directory entry: ``name|kind|size|mode_octal|mtime_epoch``.
``fget --max-bytes N PATH``
    Prints ``SIZE <n>\\n`` followed by exactly n raw bytes. Refuses with
    exit 5 when the file exceeds N, before any content is produced.
``fput [--overwrite] PATH NBYTES``
    Reads exactly NBYTES from stdin into PATH. Exit 6 if PATH exists and
    --overwrite was not given.
``fsub [--env K=V ...] [--name N] SCRIPT``
    Submits SCRIPT to the scheduler; prints ``JOBID <id>``.
``fstat --ping`` / ``fstat ID``
    Scheduler liveness probe / one job record:
    ``id|state|exit|submit_epoch|name|stdout_path|stderr_path``
    (state is a vendor code, exit may be empty).
``fcancel ID``
    Cancels; succeeds on already-terminal jobs.
``mkdir PATH``, ``rm [-r] PATH``, ``sha256sum PATH``, ``cat PATH``,
``test -r|-e|-d|-f PATH``, ``true``, ``false``, ``echo``, ``sleep N``,
``sh -c CMD``
    POSIX-shaped utilities with the usual meanings.

Exit codes
----------
Uniform across commands so failures map cleanly onto gateway errors.
"""

EXIT_OK = 0
EXIT_ERROR = 1  # generic failure
EXIT_NOENT = 2  # no such file, directory, or job
EXIT_PERM = 3  # permission denied
EXIT_KIND = 4  # wrong node kind (file vs directory)
EXIT_TOO_LARGE = 5  # refused by a size cap
EXIT_EXISTS = 6  # target exists and overwrite not requested

FIELD_SEP = "|"
SIZE_HEADER = b"SIZE "

# Vendor job-state codes emitted by ``fstat`` (Slurm-ish short forms).
VENDOR_PENDING = "PD"
VENDOR_RUNNING = "R"
VENDOR_COMPLETED = "CD"
VENDOR_FAILED = "F"
VENDOR_CANCELLED = "CA"


def job_record(
    job_id: str,
    state: str,
    exit_code: "int | None",
    submit_epoch: float,
    name: str,
    stdout_path: str,
    stderr_path: str,
) -> str:
    exit_text = "" if exit_code is None else str(exit_code)
    return FIELD_SEP.join(
        [job_id, state, exit_text, f"{submit_epoch:.3f}", name, stdout_path, stderr_path]
    )


def dir_entry_record(
    name: str, kind: str, size: int, mode: int, mtime: float
) -> str:
    return FIELD_SEP.join([name, kind, str(size), f"{mode:o}", f"{mtime:.3f}"])
