"""Configuration loading: the system registry plus gateway-wide settings.

One YAML file describes everything; a small set of ``GW_*`` environment
variables override secret-bearing fields so credentials can stay out of the
file. The loaded objects are immutable and shared freely across request
handlers.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import yaml

DEFAULT_MAX_FILE_TRANSFER_BYTES = 5_242_880  # ~5 MB single-request transfer cap
DEFAULT_HEADER_LIMIT_BYTES = 8_192

SUBSYSTEM_KINDS = ("ssh", "filesystem", "scheduler")

# Environment overrides, applied after parsing: env var -> config path.
ENV_OVERRIDES = {
    "GW_INTROSPECTION_CLIENT_SECRET": ("authn", "introspection_client_secret"),
    "GW_INTROSPECTION_CLIENT_ID": ("authn", "introspection_client_id"),
    "GW_SSH_CLIENT_KEY": ("ssh", "client_key"),
    "GW_KNOWN_HOSTS": ("ssh", "known_hosts"),
    "GW_LISTEN": ("listen",),
}


class ConfigError(Exception):
    """Raised on parse failure or invariant violation; aborts startup.

    ``path`` names the offending field, e.g. ``systems[0].pool.idle_ttl``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class PoolParams:
    max_connections_per_identity: int = 2
    max_channels_per_connection: int = 8
    idle_ttl: float = 60.0
    acquire_timeout: float = 30.0

    def validate(self, path: str) -> None:
        if self.max_connections_per_identity < 1:
            raise ConfigError(f"{path}.max_connections_per_identity", "must be >= 1")
        # Stay under the sshd default session cap of 10.
        if not 1 <= self.max_channels_per_connection <= 10:
            raise ConfigError(
                f"{path}.max_channels_per_connection", "must be between 1 and 10"
            )
        if self.idle_ttl < 0:
            raise ConfigError(f"{path}.idle_ttl", "must be >= 0")
        if self.acquire_timeout <= 0:
            raise ConfigError(f"{path}.acquire_timeout", "must be > 0")


def _default_enabled() -> Mapping[str, bool]:
    return {kind: True for kind in SUBSYSTEM_KINDS}


@dataclass(frozen=True)
class HealthParams:
    interval: float = 10.0
    timeout: float = 5.0
    staleness_factor: int = 3
    enabled: Mapping[str, bool] = field(default_factory=_default_enabled)

    def validate(self, path: str) -> None:
        if self.timeout >= self.interval:
            raise ConfigError(f"{path}.timeout", "must be < interval")
        if self.staleness_factor < 2:
            raise ConfigError(f"{path}.staleness_factor", "must be >= 2")
        for kind in self.enabled:
            if kind not in SUBSYSTEM_KINDS:
                raise ConfigError(f"{path}.enabled.{kind}", "unknown subsystem kind")

    @property
    def staleness_horizon(self) -> float:
        return self.staleness_factor * self.interval

    def is_enabled(self, kind: str) -> bool:
        return self.enabled.get(kind, True)


@dataclass(frozen=True)
class SystemConfig:
    name: str
    ssh_host: str
    ssh_port: int
    probe_path: str
    scheduler_kind: str = "simulated"
    # Username the health checker authenticates as when probing.
    probe_username: str = "probe"
    max_file_transfer_bytes: int = DEFAULT_MAX_FILE_TRANSFER_BYTES
    health: HealthParams = field(default_factory=HealthParams)
    pool: PoolParams = field(default_factory=PoolParams)

    def validate(self, path: str) -> None:
        if not self.name:
            raise ConfigError(f"{path}.name", "must be non-empty")
        if not self.ssh_host:
            raise ConfigError(f"{path}.ssh_host", "must be non-empty")
        if not 0 < self.ssh_port < 65536:
            raise ConfigError(f"{path}.ssh_port", "must be a valid TCP port")
        if self.scheduler_kind not in ("simulated", "echo"):
            raise ConfigError(
                f"{path}.scheduler_kind", f"unsupported kind {self.scheduler_kind!r}"
            )
        if not self.probe_path:
            raise ConfigError(f"{path}.probe_path", "must be non-empty")
        if self.max_file_transfer_bytes <= 0:
            raise ConfigError(f"{path}.max_file_transfer_bytes", "must be > 0")
        self.health.validate(f"{path}.health")
        self.pool.validate(f"{path}.pool")


@dataclass(frozen=True)
class AuthnConfig:
    mode: str = "offline"  # offline | introspection
    jwks_urls: tuple[str, ...] = ()
    introspection_url: Optional[str] = None
    introspection_client_id: Optional[str] = None
    introspection_client_secret: Optional[str] = None
    refresh_cooldown: float = 300.0
    clock_skew_tolerance: float = 30.0
    # claim_key of the authz section; duplicated here so token parsing can
    # extract the authorized-systems list in one pass.
    systems_claim_key: str = "firecrest-systems"
    service_account_map: Mapping[str, str] = field(default_factory=dict)

    def validate(self, path: str) -> None:
        if self.mode not in ("offline", "introspection"):
            raise ConfigError(f"{path}.mode", f"unsupported mode {self.mode!r}")
        if not self.jwks_urls:
            raise ConfigError(f"{path}.jwks_urls", "at least one JWKS URL required")
        if self.mode == "introspection" and not self.introspection_url:
            raise ConfigError(
                f"{path}.introspection_url", "required when mode=introspection"
            )
        if self.refresh_cooldown < 0:
            raise ConfigError(f"{path}.refresh_cooldown", "must be >= 0")
        if self.clock_skew_tolerance < 0:
            raise ConfigError(f"{path}.clock_skew_tolerance", "must be >= 0")


@dataclass(frozen=True)
class AuthzConfig:
    mode: str = "claims"  # claims | external
    claim_key: str = "firecrest-systems"
    external_url: Optional[str] = None
    relation_name: str = "can_access"
    decision_timeout: float = 2.0

    def validate(self, path: str) -> None:
        if self.mode not in ("claims", "external"):
            raise ConfigError(f"{path}.mode", f"unsupported mode {self.mode!r}")
        if self.mode == "external" and not self.external_url:
            raise ConfigError(f"{path}.external_url", "required when mode=external")
        if self.decision_timeout <= 0:
            raise ConfigError(f"{path}.decision_timeout", "must be > 0")


@dataclass(frozen=True)
class SshClientConfig:
    client_key: str = ""  # path to the deployment private key
    known_hosts: str = ""  # path to the pinned host-key file

    def validate(self, path: str) -> None:
        if not self.client_key:
            raise ConfigError(f"{path}.client_key", "must be set")
        if not self.known_hosts:
            raise ConfigError(f"{path}.known_hosts", "must be set")


@dataclass(frozen=True)
class Settings:
    """Validated gateway configuration: registry plus global knobs."""

    systems: Mapping[str, SystemConfig]
    authn: AuthnConfig
    authz: AuthzConfig
    ssh: SshClientConfig
    listen: str = "127.0.0.1:8000"
    max_request_header_bytes: int = DEFAULT_HEADER_LIMIT_BYTES
    max_inflight_requests: Optional[int] = None

    def system(self, name: str) -> SystemConfig:
        try:
            return self.systems[name]
        except KeyError:
            from .errors import system_unknown

            raise system_unknown(name) from None


def _build(cls, raw: Any, path: str, nested: Mapping[str, Any] | None = None):
    """Construct a dataclass from a YAML mapping, rejecting unknown keys."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
        kwargs[key] = value
    if nested:
        kwargs.update(nested)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None


def _apply_env_overrides(raw: dict, environ: Mapping[str, str]) -> dict:
    raw = copy.deepcopy(raw)
    for var, keys in ENV_OVERRIDES.items():
        if var not in environ:
            continue
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = environ[var]
    return raw


def parse_config(raw: dict, environ: Mapping[str, str] | None = None) -> Settings:
    """Validate a parsed YAML tree into Settings. Pure given (raw, environ)."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "top level must be a mapping")
    raw = _apply_env_overrides(raw, environ if environ is not None else os.environ)

    systems_raw = raw.get("systems")
    if not systems_raw or not isinstance(systems_raw, list):
        raise ConfigError("systems", "at least one system must be configured")

    systems: dict[str, SystemConfig] = {}
    for i, sys_raw in enumerate(systems_raw):
        path = f"systems[{i}]"
        if not isinstance(sys_raw, dict):
            raise ConfigError(path, "expected a mapping")
        sys_raw = dict(sys_raw)
        health = _build(HealthParams, sys_raw.pop("health", None), f"{path}.health")
        pool = _build(PoolParams, sys_raw.pop("pool", None), f"{path}.pool")
        system = _build(
            SystemConfig, sys_raw, path, nested={"health": health, "pool": pool}
        )
        system.validate(path)
        if system.name in systems:
            raise ConfigError(f"{path}.name", f"duplicate system name {system.name!r}")
        systems[system.name] = system

    authn_raw = raw.get("authn") or {}
    if isinstance(authn_raw, dict) and "jwks_urls" in authn_raw:
        authn_raw = dict(authn_raw)
        authn_raw["jwks_urls"] = tuple(authn_raw["jwks_urls"])
    authz = _build(AuthzConfig, raw.get("authz"), "authz")
    authz.validate("authz")
    if isinstance(authn_raw, dict) and authz.mode == "claims":
        authn_raw.setdefault("systems_claim_key", authz.claim_key)
    authn = _build(AuthnConfig, authn_raw, "authn")
    authn.validate("authn")
    ssh = _build(SshClientConfig, raw.get("ssh"), "ssh")
    ssh.validate("ssh")

    listen = raw.get("listen", "127.0.0.1:8000")
    max_header = int(raw.get("max_request_header_bytes", DEFAULT_HEADER_LIMIT_BYTES))
    if max_header <= 0:
        raise ConfigError("max_request_header_bytes", "must be > 0")
    inflight = raw.get("max_inflight_requests")
    if inflight is not None:
        inflight = int(inflight)
        if inflight < 1:
            raise ConfigError("max_inflight_requests", "must be >= 1 or omitted")

    known_top = {
        "systems",
        "authn",
        "authz",
        "ssh",
        "listen",
        "max_request_header_bytes",
        "max_inflight_requests",
    }
    for key in raw:
        if key not in known_top:
            raise ConfigError(key, "unknown top-level field")

    return Settings(
        systems=systems,
        authn=authn,
        authz=authz,
        ssh=ssh,
        listen=str(listen),
        max_request_header_bytes=max_header,
        max_inflight_requests=inflight,
    )


def load_config(path: str, environ: Mapping[str, str] | None = None) -> Settings:
    """Load and validate the gateway config file. Deterministic and side-effect free."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML in {path}: {exc}") from None
    return parse_config(raw or {}, environ)
