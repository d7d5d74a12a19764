"""Staged workload execution: N simulated clients each running a step
sequence with per-response assertions.

A client that fails an assertion halts its flow on the spot; the failure
is recorded and the remaining clients keep going. Client count can ramp
up over time to model traffic peaks. Steps may poll (``until``) for a
terminal condition, capture response fields into per-client variables,
and template them into later requests.
"""

from __future__ import annotations

import asyncio
import itertools
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import httpx
import yaml

from .stats import BenchReport, RawRecord, aggregate_records


@dataclass(frozen=True)
class Assertion:
    status: Optional[int] = None
    body_contains: Optional[str] = None
    json_equals: dict[str, Any] = field(default_factory=dict)

    def check(self, response: httpx.Response) -> Optional[str]:
        if self.status is not None and response.status_code != self.status:
            return f"expected status {self.status}, got {response.status_code}"
        if self.body_contains is not None and self.body_contains not in response.text:
            return f"body does not contain {self.body_contains!r}"
        if self.json_equals:
            try:
                payload = response.json()
            except ValueError:
                return "body is not JSON"
            for key, expected in self.json_equals.items():
                if payload.get(key) != expected:
                    return f"json[{key!r}] == {payload.get(key)!r}, expected {expected!r}"
        return None


@dataclass(frozen=True)
class UntilSpec:
    field_name: str
    values: tuple[str, ...]
    interval: float = 0.2
    timeout: float = 60.0


@dataclass(frozen=True)
class StepSpec:
    name: str
    method: str
    endpoint: str
    json_body: Optional[dict] = None
    content: Optional[str] = None  # templated text body (binary-free steps)
    assertion: Assertion = Assertion(status=200)
    save: dict[str, str] = field(default_factory=dict)
    until: Optional[UntilSpec] = None


@dataclass(frozen=True)
class RampSpec:
    start_clients: int
    step: int
    every: float


@dataclass(frozen=True)
class DatasetSpec:
    n_files: int = 0
    file_size_bytes: int = 1024


@dataclass(frozen=True)
class WorkloadSpec:
    steps: tuple[StepSpec, ...]
    clients: int = 1
    iterations: int = 1
    duration: Optional[float] = None
    ramp: Optional[RampSpec] = None
    dataset: DatasetSpec = DatasetSpec()
    system: str = ""
    variables: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.steps:
            raise ValueError("workload needs at least one step")
        if self.clients < 1:
            raise ValueError("clients must be >= 1")


def parse_workload(raw: dict) -> WorkloadSpec:
    steps = []
    for i, step_raw in enumerate(raw.get("steps", [])):
        assert_raw = step_raw.get("assert", {})
        assertion = Assertion(
            status=assert_raw.get("status", 200),
            body_contains=assert_raw.get("body_contains"),
            json_equals=assert_raw.get("json_equals", {}),
        )
        until = None
        if "until" in step_raw:
            u = step_raw["until"]
            until = UntilSpec(
                field_name=u["field"],
                values=tuple(u.get("in", [])),
                interval=float(u.get("interval", 0.2)),
                timeout=float(u.get("timeout", 60.0)),
            )
        steps.append(
            StepSpec(
                name=step_raw.get("name", f"step{i}"),
                method=step_raw.get("method", "GET").upper(),
                endpoint=step_raw["endpoint"],
                json_body=step_raw.get("json"),
                content=step_raw.get("content"),
                assertion=assertion,
                save={k: str(v) for k, v in step_raw.get("save", {}).items()},
                until=until,
            )
        )
    ramp = None
    if "ramp" in raw:
        r = raw["ramp"]
        ramp = RampSpec(
            start_clients=int(r.get("start_clients", 1)),
            step=int(r.get("step", 1)),
            every=float(r.get("every", 1.0)),
        )
    dataset_raw = raw.get("dataset", {})
    spec = WorkloadSpec(
        steps=tuple(steps),
        clients=int(raw.get("clients", 1)),
        iterations=int(raw.get("iterations", 1)),
        duration=float(raw["duration"]) if "duration" in raw else None,
        ramp=ramp,
        dataset=DatasetSpec(
            n_files=int(dataset_raw.get("n_files", 0)),
            file_size_bytes=int(dataset_raw.get("file_size_bytes", 1024)),
        ),
        system=str(raw.get("system", "")),
        variables={k: str(v) for k, v in raw.get("vars", {}).items()},
    )
    spec.validate()
    return spec


def load_workload(path: str) -> WorkloadSpec:
    return parse_workload(yaml.safe_load(Path(path).read_text()) or {})


def _render(template: str, context: dict) -> str:
    try:
        return template.format_map(context)
    except KeyError as exc:
        raise ValueError(f"unknown template variable {exc} in {template!r}") from None


def _render_tree(node: Any, context: dict) -> Any:
    if isinstance(node, str):
        return _render(node, context)
    if isinstance(node, dict):
        return {k: _render_tree(v, context) for k, v in node.items()}
    if isinstance(node, list):
        return [_render_tree(v, context) for v in node]
    return node


class WorkloadRunner:
    def __init__(
        self,
        spec: WorkloadSpec,
        clients: Sequence[httpx.AsyncClient],
        token: str,
        clock=time.perf_counter,
    ):
        self.spec = spec
        self._targets = itertools.cycle(clients)  # round-robin across gateways
        self._headers = {"Authorization": f"Bearer {token}"}
        self._clock = clock
        self.records: list[RawRecord] = []
        self._records_lock = asyncio.Lock()

    async def _issue(
        self, client_idx: int, step: StepSpec, context: dict
    ) -> httpx.Response:
        target = next(self._targets)
        path = _render(step.endpoint, context)
        kwargs: dict = {"headers": self._headers}
        if step.json_body is not None:
            kwargs["json"] = _render_tree(step.json_body, context)
        if step.content is not None:
            kwargs["content"] = _render(step.content, context).encode()
        start = self._clock()
        response = await target.request(step.method, path, **kwargs)
        latency = self._clock() - start
        rec = RawRecord(
            ts=time.time(),
            client=client_idx,
            step=step.name,
            method=step.method,
            path=path,
            status=response.status_code,
            latency_s=latency,
            trace_id=response.headers.get("x-trace-id", ""),
            ok=True,  # adjusted by the caller after assertions
        )
        async with self._records_lock:
            self.records.append(rec)
        response._bench_record = rec  # type: ignore[attr-defined]
        return response

    async def _run_step(self, client_idx: int, step: StepSpec, context: dict) -> bool:
        """Execute one step (with until-polling); False halts the client."""
        deadline = None
        if step.until is not None:
            deadline = self._clock() + step.until.timeout
        while True:
            is_final = True
            response = await self._issue(client_idx, step, context)
            if step.until is not None:
                try:
                    value = response.json().get(step.until.field_name)
                except ValueError:
                    value = None
                if (
                    response.status_code < 400
                    and value not in step.until.values
                    and self._clock() < (deadline or 0)
                ):
                    is_final = False
            if is_final:
                failure = step.assertion.check(response)
                rec = response._bench_record  # type: ignore[attr-defined]
                rec.ok = failure is None
                if failure is None and step.save:
                    try:
                        payload = response.json()
                    except ValueError:
                        payload = {}
                    for var, json_field in step.save.items():
                        context[var] = payload.get(json_field)
                return failure is None
            # keep polling: downgrade the record to a poll
            response._bench_record.poll = True  # type: ignore[attr-defined]
            await asyncio.sleep(step.until.interval)

    async def _client_flow(self, client_idx: int, start_delay: float, stop_at: Optional[float]) -> None:
        if start_delay > 0:
            await asyncio.sleep(start_delay)
        context: dict = {
            "client": client_idx,
            "system": self.spec.system,
            **self.spec.variables,
        }
        iteration = 0
        while True:
            if self.spec.duration is not None:
                if stop_at is not None and self._clock() >= stop_at:
                    return
            elif iteration >= self.spec.iterations:
                return
            context["iteration"] = iteration
            for step in self.spec.steps:
                ok = await self._run_step(client_idx, step, context)
                if not ok:
                    return  # assertion failure halts this client's flow
            iteration += 1

    async def run(self) -> BenchReport:
        start = self._clock()
        stop_at = start + self.spec.duration if self.spec.duration else None
        delays = self._start_delays()
        tasks = [
            asyncio.create_task(self._client_flow(i, delays[i], stop_at))
            for i in range(self.spec.clients)
        ]
        await asyncio.gather(*tasks)
        wall = self._clock() - start
        return BenchReport(
            steps=aggregate_records(self.records),
            wall_clock_total=wall,
            config={
                "clients": self.spec.clients,
                "iterations": self.spec.iterations,
                "duration": self.spec.duration,
                "system": self.spec.system,
            },
        )

    def _start_delays(self) -> list[float]:
        if self.spec.ramp is None:
            return [0.0] * self.spec.clients
        delays = []
        for i in range(self.spec.clients):
            if i < self.spec.ramp.start_clients:
                delays.append(0.0)
            else:
                wave = (i - self.spec.ramp.start_clients) // self.spec.ramp.step + 1
                delays.append(wave * self.spec.ramp.every)
        return delays
