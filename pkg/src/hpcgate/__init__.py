"""hpcgate: a stateless REST gateway proxying requests to remote compute
resources (job scheduler, filesystem) over pooled SSH connections.

The package also ships a self-contained test fabric (embedded SSH server,
simulated scheduler, mock identity provider, stub relationship store) and a
benchmark harness, so the whole stack can be exercised on a single machine.
"""

__version__ = "0.1.0"
