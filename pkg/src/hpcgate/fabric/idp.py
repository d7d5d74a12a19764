"""Mock OIDC identity provider: JWKS, token minting, introspection.

Serves one RSA and one EC signing key, mints tokens on demand through a
test-only ``/mint`` endpoint, and answers RFC 7662-shaped introspection
after an optional injected delay. Every endpoint counts its requests so
tests can assert exactly how often the gateway talked to it.
"""

from __future__ import annotations

import asyncio
import secrets
import time
from typing import Optional

from cryptography.hazmat.primitives.asymmetric import ec, rsa
from fastapi import FastAPI, Form, Request
from fastapi.responses import JSONResponse

from .. import jws

ISSUER = "https://idp.fabric.invalid/realm"
DEFAULT_TTL = 300.0


def corrupt_signature(token: str) -> str:
    """Flip one bit in the signature segment; everything else stays intact."""
    head, _, sig = token.rpartition(".")
    raw = bytearray(jws.b64url_decode(sig))
    raw[len(raw) // 2] ^= 0x01
    return f"{head}.{jws.b64url_encode(bytes(raw))}"


class MockIdP:
    def __init__(self, introspection_delay: float = 0.0):
        self.introspection_delay = introspection_delay
        self._rsa_key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
        self._ec_key = ec.generate_private_key(ec.SECP256R1())
        # kids are unique per instance so two providers never collide by accident
        suffix = secrets.token_hex(3)
        self.rsa_kid = f"fab-rsa-{suffix}"
        self.ec_kid = f"fab-ec-{suffix}"
        self._kids = {
            self.rsa_kid: self._rsa_key,
            self.ec_kid: self._ec_key,
        }
        self.counters = {"jwks": 0, "mint": 0, "introspect": 0}

    # --- direct (non-HTTP) helpers used by tests and the bench harness -----------

    @property
    def kids(self) -> list[str]:
        return list(self._kids)

    def jwks_document(self) -> dict:
        keys = []
        for kid, key in self._kids.items():
            keys.append(jws.public_key_to_jwk(key.public_key(), kid))
        return {"keys": keys}

    def mint(
        self,
        claims: Optional[dict] = None,
        kid: Optional[str] = None,
        ttl: float = DEFAULT_TTL,
        now: Optional[float] = None,
    ) -> str:
        kid = kid or self.rsa_kid
        ts = time.time() if now is None else now
        payload = {
            "iss": ISSUER,
            "sub": f"user-{secrets.token_hex(4)}",
            "iat": ts,
            "exp": ts + ttl,
        }
        if claims:
            payload.update(claims)
        return jws.sign(payload, self._kids[kid], kid=kid)

    def _verify_own(self, token: str) -> Optional[dict]:
        try:
            kid = jws.peek_header(token).get("kid")
            key = self._kids.get(kid)  # type: ignore[arg-type]
            if key is None:
                return None
            return jws.verify(token, key.public_key())
        except jws.JwsError:
            return None

    # --- HTTP surface --------------------------------------------------------------

    def build_app(self) -> FastAPI:
        app = FastAPI(title="mock-idp", docs_url=None, redoc_url=None)

        @app.get("/jwks")
        async def jwks() -> dict:
            self.counters["jwks"] += 1
            return self.jwks_document()

        @app.post("/mint")
        async def mint(request: Request) -> dict:
            # Test-only endpoint; the fabric never faces a real network.
            self.counters["mint"] += 1
            body = await request.json() if await request.body() else {}
            token = self.mint(
                claims=body.get("claims"),
                kid=body.get("kid"),
                ttl=float(body.get("ttl", DEFAULT_TTL)),
            )
            return {"access_token": token, "token_type": "Bearer"}

        @app.post("/introspect")
        async def introspect(token: str = Form(...)) -> JSONResponse:
            self.counters["introspect"] += 1
            if self.introspection_delay > 0:
                await asyncio.sleep(self.introspection_delay)
            payload = self._verify_own(token)
            if payload is None or payload.get("exp", 0) < time.time():
                return JSONResponse({"active": False})
            return JSONResponse({"active": True, **payload})

        @app.get("/counters")
        async def counters() -> dict:
            return dict(self.counters)

        return app
