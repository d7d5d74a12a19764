"""Stub relationship-check store for the external authorization mode.

Holds (user, relation, object) tuples loaded from a text file or code and
answers the minimal check API: POST /check with a JSON triple, response
``{"allowed": bool}``. Optional delay injection lets tests exercise the
gateway's fail-closed timeout behaviour.
"""

from __future__ import annotations

import asyncio
from pathlib import Path

from fastapi import FastAPI
from pydantic import BaseModel


class CheckRequest(BaseModel):
    user: str
    relation: str
    object: str


class StubRelationStore:
    def __init__(
        self,
        tuples: "tuple[tuple[str, str, str], ...]" = (),
        delay: float = 0.0,
    ):
        self.tuples: set[tuple[str, str, str]] = set(tuples)
        self.delay = delay
        self.counters = {"check": 0}

    @classmethod
    def from_file(cls, path: str, delay: float = 0.0) -> "StubRelationStore":
        """Load newline-delimited ``user relation object`` tuples."""
        triples = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 'user relation object'")
            triples.append(tuple(parts))
        return cls(tuples=tuple(triples), delay=delay)

    def add(self, user: str, relation: str, obj: str) -> None:
        self.tuples.add((user, relation, obj))

    def build_app(self) -> FastAPI:
        app = FastAPI(title="stub-relations", docs_url=None, redoc_url=None)

        @app.post("/check")
        async def check(req: CheckRequest) -> dict:
            self.counters["check"] += 1
            if self.delay > 0:
                await asyncio.sleep(self.delay)
            allowed = (req.user, req.relation, req.object) in self.tuples
            return {"allowed": allowed}

        @app.get("/counters")
        async def counters() -> dict:
            return dict(self.counters)

        return app
