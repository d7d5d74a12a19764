"""REST surface and the layered request pipeline.

Order is fixed: header-size guard, authentication, identity mapping,
authorization, system resolution, health gate, forward. The first failing
layer short-circuits with its mapped status, and nothing below it runs.
Per-request state lives in a RequestContext that is built after authn and
authz succeed and dropped with the response; no session survives.
"""

from __future__ import annotations

import asyncio
import secrets
from contextlib import asynccontextmanager
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from fastapi import Depends, FastAPI, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from .. import authz as authz_mod
from ..authn import TokenClaims
from ..errors import ErrorCode, GatewayError, forbidden, unauthenticated
from ..forwarding.models import JobRequest
from ..health import read_status
from ..identity import PosixIdentity
from .schemas import (
    ChecksumOut,
    DirEntryOut,
    ErrorBody,
    HealthStatusOut,
    JobInfoOut,
    JobSubmitIn,
    MkdirIn,
)

if TYPE_CHECKING:
    from ..gateway import Gateway


@dataclass(frozen=True)
class RequestContext:
    identity: PosixIdentity
    claims: TokenClaims
    system: str
    trace_id: str


def _trace_id(request: Request) -> str:
    return request.scope.get("state", {}).get("trace_id", "")


def _error_response(err: GatewayError, trace_id: str) -> JSONResponse:
    body = ErrorBody(
        error_code=err.code.value,
        message=err.message,
        system=err.system,
        subsystem=err.subsystem,
        trace_id=trace_id,
    )
    headers = {"X-Trace-Id": trace_id}
    if err.retry_after is not None:
        headers["Retry-After"] = str(err.retry_after)
    return JSONResponse(
        status_code=err.http_status, content=body.model_dump(), headers=headers
    )


class TraceMiddleware:
    """Tags every request with a random 128-bit trace id, echoed in a header."""

    def __init__(self, app):
        self.app = app

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        trace_id = secrets.token_hex(16)
        scope.setdefault("state", {})["trace_id"] = trace_id

        async def send_with_trace(message):
            if message["type"] == "http.response.start":
                headers = message.setdefault("headers", [])
                if not any(k.lower() == b"x-trace-id" for k, _ in headers):
                    headers.append((b"x-trace-id", trace_id.encode()))
            await send(message)

        await self.app(scope, receive, send_with_trace)


class HeaderLimitMiddleware:
    """Reject requests whose total header bytes exceed the configured limit."""

    def __init__(self, app, limit: int):
        self.app = app
        self.limit = limit

    async def __call__(self, scope, receive, send):
        if scope["type"] == "http":
            total = sum(len(k) + len(v) + 4 for k, v in scope.get("headers", []))
            if total > self.limit:
                err = GatewayError(
                    ErrorCode.HEADERS_TOO_LARGE,
                    f"request headers total {total} bytes, limit is {self.limit}",
                )
                response = _error_response(
                    err, scope.get("state", {}).get("trace_id", "")
                )
                await response(scope, receive, send)
                return
        await self.app(scope, receive, send)


class AdmissionMiddleware:
    """Optional inflight-request cap; used to emulate a serialized server."""

    def __init__(self, app, max_inflight: Optional[int]):
        self.app = app
        self._sem = asyncio.Semaphore(max_inflight) if max_inflight else None

    async def __call__(self, scope, receive, send):
        if self._sem is None or scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        async with self._sem:
            await self.app(scope, receive, send)


def build_app(gw: "Gateway") -> FastAPI:
    settings = gw.settings

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        await gw.start()
        try:
            yield
        finally:
            await gw.stop()

    app = FastAPI(title="hpcgate", version="0.1.0", lifespan=lifespan)

    @app.exception_handler(GatewayError)
    async def gateway_error_handler(request: Request, err: GatewayError):
        return _error_response(err, _trace_id(request))

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, err: RequestValidationError):
        message = "; ".join(
            f"{'.'.join(str(p) for p in item.get('loc', []))}: {item.get('msg', '')}"
            for item in err.errors()
        )
        return _error_response(
            GatewayError(ErrorCode.BAD_REQUEST, message or "invalid request"),
            _trace_id(request),
        )

    # --- auth layers ------------------------------------------------------------

    async def authenticated(request: Request) -> tuple[TokenClaims, PosixIdentity]:
        header = request.headers.get("authorization")
        if not header:
            raise unauthenticated("missing Authorization header")
        scheme, _, token = header.partition(" ")
        if scheme.lower() != "bearer" or not token.strip():
            raise unauthenticated("Authorization header must be 'Bearer {token}'")
        claims = await gw.authenticator.authenticate(token.strip())
        identity = gw.authenticator.map_identity(claims)
        return claims, identity

    async def system_context(request: Request, system: str) -> RequestContext:
        claims, identity = await authenticated(request)
        allowed = await authz_mod.authorize(
            claims, identity, system, settings.authz, gw.http
        )
        if not allowed:
            raise forbidden(
                f"identity {identity.username!r} may not access system {system!r}",
                system=system,
            )
        settings.system(system)  # 404 only surfaces after authz passed
        return RequestContext(
            identity=identity,
            claims=claims,
            system=system,
            trace_id=_trace_id(request),
        )

    SystemContext = Depends(system_context)

    # --- status -----------------------------------------------------------------

    @app.get("/status/ping", response_class=PlainTextResponse)
    async def ping() -> str:
        return "pong"

    @app.get("/status/systems", response_model=list[HealthStatusOut])
    async def all_systems(request: Request) -> list[HealthStatusOut]:
        await authenticated(request)
        out = []
        for name in settings.systems:
            for status in read_status(gw.health_cache, settings.systems, name):
                out.append(HealthStatusOut.from_status(status))
        return out

    @app.get("/status/systems/{system}", response_model=list[HealthStatusOut])
    async def one_system(request: Request, system: str) -> list[HealthStatusOut]:
        await authenticated(request)
        statuses = read_status(gw.health_cache, settings.systems, system)
        return [HealthStatusOut.from_status(s) for s in statuses]

    # --- filesystem -----------------------------------------------------------------

    @app.get("/filesystem/{system}/ops/ls", response_model=list[DirEntryOut])
    async def ls(
        ctx: RequestContext = SystemContext,
        path: str = Query(...),
        show_hidden: bool = Query(False, alias="showHidden"),
    ) -> list[DirEntryOut]:
        entries = await gw.forwarder.list_dir(ctx.system, ctx.identity, path, show_hidden)
        return [DirEntryOut.from_entry(e) for e in entries]

    @app.get("/filesystem/{system}/ops/download")
    async def download(
        ctx: RequestContext = SystemContext, path: str = Query(...)
    ) -> Response:
        body = await gw.forwarder.download(ctx.system, ctx.identity, path)
        return Response(content=body, media_type="application/octet-stream")

    @app.post("/filesystem/{system}/ops/upload", status_code=204)
    async def upload(
        request: Request,
        ctx: RequestContext = SystemContext,
        path: str = Query(...),
        overwrite: bool = Query(False),
    ) -> Response:
        cap = settings.system(ctx.system).max_file_transfer_bytes
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > cap:
            raise GatewayError(
                ErrorCode.PAYLOAD_TOO_LARGE,
                f"declared body of {declared} bytes exceeds the {cap} byte cap",
                system=ctx.system,
            )
        body = await request.body()
        await gw.forwarder.upload(ctx.system, ctx.identity, path, body, overwrite)
        return Response(status_code=204)

    @app.post("/filesystem/{system}/ops/mkdir", status_code=201)
    async def mkdir(
        payload: MkdirIn, ctx: RequestContext = SystemContext
    ) -> dict:
        await gw.forwarder.mkdir(ctx.system, ctx.identity, payload.path)
        return {"path": payload.path}

    @app.delete("/filesystem/{system}/ops/rm", status_code=204)
    async def rm(
        ctx: RequestContext = SystemContext, path: str = Query(...)
    ) -> Response:
        await gw.forwarder.remove_path(ctx.system, ctx.identity, path)
        return Response(status_code=204)

    @app.get("/filesystem/{system}/ops/checksum", response_model=ChecksumOut)
    async def checksum(
        ctx: RequestContext = SystemContext, path: str = Query(...)
    ) -> ChecksumOut:
        digest = await gw.forwarder.checksum(ctx.system, ctx.identity, path)
        return ChecksumOut(path=path, checksum=digest)

    # --- compute ------------------------------------------------------------------

    @app.post("/compute/{system}/jobs", response_model=JobInfoOut, status_code=201)
    async def submit_job(
        payload: JobSubmitIn, ctx: RequestContext = SystemContext
    ) -> JobInfoOut:
        req = JobRequest(
            script=payload.script,
            working_directory=payload.working_directory,
            name=payload.name,
            environment=payload.environment,
        )
        info = await gw.forwarder.submit_job(ctx.system, ctx.identity, req)
        return JobInfoOut.from_info(info)

    @app.get("/compute/{system}/jobs/{job_id}", response_model=JobInfoOut)
    async def get_job(
        job_id: str, ctx: RequestContext = SystemContext
    ) -> JobInfoOut:
        info = await gw.forwarder.get_job(ctx.system, ctx.identity, job_id)
        return JobInfoOut.from_info(info)

    @app.delete("/compute/{system}/jobs/{job_id}", status_code=204)
    async def cancel_job(job_id: str, ctx: RequestContext = SystemContext) -> Response:
        await gw.forwarder.cancel_job(ctx.system, ctx.identity, job_id)
        return Response(status_code=204)

    # Middleware: listed inner-to-outer; trace must be outermost so even
    # guard rejections carry a trace id.
    app.add_middleware(AdmissionMiddleware, max_inflight=settings.max_inflight_requests)
    app.add_middleware(HeaderLimitMiddleware, limit=settings.max_request_header_bytes)
    app.add_middleware(TraceMiddleware)
    return app
