"""Bearer-token validation and identity mapping.

Default mode validates token signatures locally against a key map built
from the configured JWKS endpoints at startup; no identity-provider traffic
happens on the request path. Introspection mode instead asks the provider
about every single token, deliberately uncached, so the cost difference
between the two modes stays measurable.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import httpx

from . import jws
from .config import AuthnConfig
from .errors import GatewayError, unauthenticated
from .identity import ClaimSource, PosixIdentity, is_valid_posix_username

logger = logging.getLogger(__name__)

INTROSPECTION_TIMEOUT = 10.0


@dataclass(frozen=True)
class TokenClaims:
    issuer: str
    subject: str
    expiry: float
    issued_at: float
    preferred_username: Optional[str] = None
    username: Optional[str] = None
    client_id: Optional[str] = None
    systems: Optional[tuple[str, ...]] = None


@dataclass
class KeyEntry:
    kid: str
    issuer: str  # JWKS URL the key came from
    key: jws.PublicKey


@dataclass
class KeyMap:
    entries: dict[str, KeyEntry] = field(default_factory=dict)
    fetched_at: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)


async def fetch_keys(cfg: AuthnConfig, http: httpx.AsyncClient) -> KeyMap:
    """Download every configured JWKS document and build the kid map.

    Any unreachable or malformed provider fails the whole fetch: the gateway
    must not start with a partial key map.
    """
    keymap = KeyMap()
    for url in cfg.jwks_urls:
        try:
            response = await http.get(url)
            response.raise_for_status()
            doc = response.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise RuntimeError(f"cannot fetch JWKS from {url}: {exc}") from exc
        try:
            pairs = jws.parse_jwks(doc)
        except jws.JwsError as exc:
            raise RuntimeError(f"malformed JWKS from {url}: {exc}") from exc
        for kid, key in pairs:
            if kid in keymap.entries:
                raise RuntimeError(
                    f"kid collision: {kid!r} served by both "
                    f"{keymap.entries[kid].issuer} and {url}"
                )
            keymap.entries[kid] = KeyEntry(kid=kid, issuer=url, key=key)
        keymap.fetched_at[url] = time.time()
    return keymap


def _claims_from_payload(payload: dict, cfg: AuthnConfig) -> TokenClaims:
    systems_raw = payload.get(cfg.systems_claim_key)
    systems: Optional[tuple[str, ...]] = None
    if isinstance(systems_raw, list):
        systems = tuple(str(s) for s in systems_raw)
    elif isinstance(systems_raw, str):
        systems = (systems_raw,)
    return TokenClaims(
        issuer=str(payload.get("iss", "")),
        subject=str(payload.get("sub", "")),
        expiry=float(payload.get("exp", 0)),
        issued_at=float(payload.get("iat", 0)),
        preferred_username=payload.get("preferred_username"),
        username=payload.get("username"),
        client_id=payload.get("client_id") or payload.get("azp"),
        systems=systems,
    )


def validate_offline(
    raw_token: str,
    keys: KeyMap,
    now: Optional[float] = None,
    cfg: Optional[AuthnConfig] = None,
) -> TokenClaims:
    """Signature and lifetime checks with zero network traffic.

    Raises GatewayError(unauthenticated) on any defect; messages never echo
    token contents.
    """
    assert cfg is not None
    ts = time.time() if now is None else now
    skew = cfg.clock_skew_tolerance
    try:
        header = jws.peek_header(raw_token)
    except jws.JwsError:
        raise unauthenticated("malformed token") from None
    kid = header.get("kid")
    if not kid or not isinstance(kid, str):
        raise unauthenticated("token has no usable kid")
    entry = keys.entries.get(kid)
    if entry is None:
        raise UnknownKid(kid)
    try:
        payload = jws.verify(raw_token, entry.key)
    except jws.JwsError:
        raise unauthenticated("token signature invalid") from None
    if "exp" not in payload or "iat" not in payload:
        raise unauthenticated("token missing exp/iat")
    claims = _claims_from_payload(payload, cfg)
    if claims.expiry <= claims.issued_at:
        raise unauthenticated("token lifetime invalid")
    if ts > claims.expiry + skew:
        raise unauthenticated("token expired")
    if ts < claims.issued_at - skew:
        raise unauthenticated("token not yet valid")
    return claims


class UnknownKid(Exception):
    """Internal signal: kid not in the map; may warrant one JWKS refresh."""

    def __init__(self, kid: str):
        super().__init__("unknown kid")
        self.kid = kid


async def validate_introspection(
    raw_token: str, cfg: AuthnConfig, http: httpx.AsyncClient
) -> TokenClaims:
    """Ask the identity provider about this exact token; one call per request."""
    assert cfg.introspection_url
    auth = None
    if cfg.introspection_client_id:
        auth = (cfg.introspection_client_id, cfg.introspection_client_secret or "")
    try:
        # wait_for bounds the whole exchange even on transports that ignore
        # httpx timeouts (e.g. in-process ASGI mounts)
        response = await asyncio.wait_for(
            http.post(
                cfg.introspection_url,
                data={"token": raw_token},
                auth=auth,
                timeout=INTROSPECTION_TIMEOUT,
            ),
            INTROSPECTION_TIMEOUT,
        )
        response.raise_for_status()
        payload = response.json()
    except (httpx.HTTPError, ValueError, asyncio.TimeoutError) as exc:
        # Backend trouble is logged as such but presents as a 401: the
        # token's validity is simply not establishable.
        logger.error("introspection backend failure: %s", exc)
        raise unauthenticated("token validation unavailable") from None
    if not payload.get("active"):
        raise unauthenticated("token inactive")
    return _claims_from_payload(payload, cfg)


def map_identity(claims: TokenClaims, cfg: AuthnConfig) -> PosixIdentity:
    """Pick the POSIX username: preferred_username, then username, then the
    configured service-account mapping for the client id."""
    candidates = (
        (claims.preferred_username, ClaimSource.PREFERRED_USERNAME),
        (claims.username, ClaimSource.USERNAME),
    )
    for value, source in candidates:
        if value:
            if not is_valid_posix_username(value):
                raise unauthenticated("mapped username fails POSIX validation")
            return PosixIdentity(username=value, source_claim=source)
    if claims.client_id and claims.client_id in cfg.service_account_map:
        mapped = cfg.service_account_map[claims.client_id]
        if not is_valid_posix_username(mapped):
            raise unauthenticated("service account mapping fails POSIX validation")
        return PosixIdentity(
            username=mapped, source_claim=ClaimSource.SERVICE_ACCOUNT_MAP
        )
    raise unauthenticated("no mappable identity claim")


class Authenticator:
    """Holds the key map and applies the configured validation mode.

    The key map is fetched once at startup. An unknown kid triggers at most
    one refetch per ``refresh_cooldown`` (key rotation support without
    letting random kids turn into a fetch storm).
    """

    def __init__(self, cfg: AuthnConfig, http: httpx.AsyncClient):
        self._cfg = cfg
        self._http = http
        self._keymap = KeyMap()
        self._refresh_lock = asyncio.Lock()
        self._last_refresh = float("-inf")

    @property
    def keymap(self) -> KeyMap:
        return self._keymap

    async def start(self) -> None:
        self._keymap = await fetch_keys(self._cfg, self._http)
        self._last_refresh = time.monotonic()

    async def authenticate(self, raw_token: str, now: Optional[float] = None) -> TokenClaims:
        if self._cfg.mode == "introspection":
            return await validate_introspection(raw_token, self._cfg, self._http)
        try:
            return validate_offline(raw_token, self._keymap, now, self._cfg)
        except UnknownKid:
            refreshed = await self._maybe_refresh()
            if not refreshed:
                raise unauthenticated("token signed by unknown key") from None
            try:
                return validate_offline(raw_token, self._keymap, now, self._cfg)
            except UnknownKid:
                raise unauthenticated("token signed by unknown key") from None

    async def _maybe_refresh(self) -> bool:
        async with self._refresh_lock:
            if time.monotonic() - self._last_refresh < self._cfg.refresh_cooldown:
                return False
            try:
                self._keymap = await fetch_keys(self._cfg, self._http)
            except RuntimeError as exc:
                logger.error("JWKS refresh failed: %s", exc)
                return False
            finally:
                self._last_refresh = time.monotonic()
            return True

    def map_identity(self, claims: TokenClaims) -> PosixIdentity:
        return map_identity(claims, self._cfg)
