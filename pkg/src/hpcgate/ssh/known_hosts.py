"""Pinned host keys, one per endpoint: ``[host]:port ssh-ed25519 <base64 blob>``."""

from __future__ import annotations

import base64
from pathlib import Path

from .keys import KEY_ALG


def parse_known_hosts(text: str) -> dict[tuple[str, int], bytes]:
    entries: dict[tuple[str, int], bytes] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[1] != KEY_ALG:
            raise ValueError(f"known_hosts line {line_no}: expected '[host]:port {KEY_ALG} <b64>'")
        endpoint = parts[0]
        if not (endpoint.startswith("[") and "]:" in endpoint):
            raise ValueError(f"known_hosts line {line_no}: endpoint must be [host]:port")
        host, _, port_text = endpoint[1:].partition("]:")
        entries[(host, int(port_text))] = base64.b64decode(parts[2])
    return entries


def load_known_hosts(path: str) -> dict[tuple[str, int], bytes]:
    return parse_known_hosts(Path(path).read_text())
