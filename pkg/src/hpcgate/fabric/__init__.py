"""Self-contained backends for desk-scale testing and benchmarking.

Everything a gateway needs to talk to, in one process: an embedded SSH
server with emulated daemon limits, a simulated job scheduler, a mock
OIDC identity provider, and a stub relationship-check store. All of them
expose counters so request paths can be audited end to end.

This is a test instrument, not a hardened service: the identity provider
mints arbitrary tokens on demand and must never face a real network.
"""

from .core import Fabric, FabricConfig

__all__ = ["Fabric", "FabricConfig"]
