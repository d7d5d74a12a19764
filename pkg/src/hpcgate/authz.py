"""Authorization: may this identity touch this system?

Two mutually exclusive modes. ``claims``: the token carries the list of
authorized system names and membership is checked locally. ``external``:
a relationship-check service is asked whether (user, relation, system)
holds. Both are default-deny, and external failures deny too (fail-closed).
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass

import httpx

from .authn import TokenClaims
from .config import AuthzConfig
from .identity import PosixIdentity

logger = logging.getLogger(__name__)

OBJECT_PREFIX = "system:"


@dataclass(frozen=True)
class RelationCheck:
    user: str
    relation: str
    object: str

    def __post_init__(self) -> None:
        if not self.object.startswith(OBJECT_PREFIX):
            raise ValueError(f"relation object must start with {OBJECT_PREFIX!r}")

    def body(self) -> dict:
        return {"user": self.user, "relation": self.relation, "object": self.object}


def authorize_claims(claims: TokenClaims, system: str, cfg: AuthzConfig) -> bool:
    """Allow iff the system appears in the token's systems claim.

    Exact, case-sensitive matching; a missing claim is an ordinary deny.
    """
    if claims.systems is None:
        return False
    return system in claims.systems


async def authorize_external(
    identity: PosixIdentity,
    system: str,
    cfg: AuthzConfig,
    http: httpx.AsyncClient,
) -> bool:
    """Ask the relationship service; deny on timeout or backend error."""
    assert cfg.external_url
    check = RelationCheck(
        user=identity.username,
        relation=cfg.relation_name,
        object=OBJECT_PREFIX + system,
    )
    try:
        # wait_for bounds the decision even on transports that ignore httpx
        # timeouts (e.g. in-process ASGI mounts)
        response = await asyncio.wait_for(
            http.post(
                cfg.external_url.rstrip("/") + "/check",
                json=check.body(),
                timeout=cfg.decision_timeout,
            ),
            cfg.decision_timeout,
        )
        response.raise_for_status()
        payload = response.json()
    except (httpx.HTTPError, ValueError, asyncio.TimeoutError) as exc:
        logger.error(
            "authorization service unavailable (fail-closed deny) for %s on %s: %s",
            identity.username,
            system,
            exc,
        )
        return False
    return payload.get("allowed") is True


async def authorize(
    claims: TokenClaims,
    identity: PosixIdentity,
    system: str,
    cfg: AuthzConfig,
    http: httpx.AsyncClient,
) -> bool:
    if cfg.mode == "claims":
        return authorize_claims(claims, system, cfg)
    return await authorize_external(identity, system, cfg, http)
