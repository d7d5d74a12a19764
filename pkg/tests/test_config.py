import copy

import pytest
import yaml

from hpcgate.config import (
    DEFAULT_MAX_FILE_TRANSFER_BYTES,
    ConfigError,
    load_config,
    parse_config,
)

MINIMAL = {
    "authn": {"jwks_urls": ["http://idp.invalid/jwks"]},
    "ssh": {"client_key": "/k.pem", "known_hosts": "/kh"},
    "systems": [
        {
            "name": "cluster-a",
            "ssh_host": "127.0.0.1",
            "ssh_port": 2222,
            "probe_path": "/probe",
        }
    ],
}


def _with(**overrides):
    raw = copy.deepcopy(MINIMAL)
    raw.update(overrides)
    return raw


def test_minimal_config_single_system():
    settings = parse_config(copy.deepcopy(MINIMAL), environ={})
    assert len(settings.systems) == 1
    assert settings.system("cluster-a").ssh_port == 2222


def test_duplicate_system_names_rejected():
    raw = copy.deepcopy(MINIMAL)
    raw["systems"].append(dict(raw["systems"][0]))
    raw["systems"][1]["ssh_port"] = 2223
    with pytest.raises(ConfigError) as exc:
        parse_config(raw, environ={})
    assert "duplicate system name" in str(exc.value)
    assert "'cluster-a'" in str(exc.value)


def test_transfer_cap_default_is_5mb():
    settings = parse_config(copy.deepcopy(MINIMAL), environ={})
    assert settings.system("cluster-a").max_file_transfer_bytes == 5_242_880
    assert DEFAULT_MAX_FILE_TRANSFER_BYTES == 5_242_880


def test_pool_and_health_defaults():
    system = parse_config(copy.deepcopy(MINIMAL), environ={}).system("cluster-a")
    assert system.pool.max_connections_per_identity == 2
    assert system.pool.max_channels_per_connection == 8
    assert system.pool.idle_ttl == 60.0
    assert system.pool.acquire_timeout == 30.0
    assert system.health.interval == 10.0
    assert system.health.timeout == 5.0
    assert system.health.staleness_factor == 3


@pytest.mark.parametrize(
    "patch, fragment",
    [
        ({"pool": {"max_channels_per_connection": 11}}, "between 1 and 10"),
        ({"pool": {"max_channels_per_connection": 0}}, "between 1 and 10"),
        ({"health": {"timeout": 11, "interval": 10}}, "must be < interval"),
        ({"health": {"staleness_factor": 1}}, "must be >= 2"),
        ({"max_file_transfer_bytes": 0}, "must be > 0"),
        ({"name": ""}, "non-empty"),
        ({"scheduler_kind": "slurm"}, "unsupported kind"),
    ],
)
def test_system_invariants_rejected_with_field_path(patch, fragment):
    raw = copy.deepcopy(MINIMAL)
    raw["systems"][0].update(patch)
    with pytest.raises(ConfigError) as exc:
        parse_config(raw, environ={})
    assert fragment in str(exc.value)
    assert "systems[0]" in str(exc.value)


def test_introspection_mode_requires_url():
    raw = _with(authn={"mode": "introspection", "jwks_urls": ["http://x/jwks"]})
    with pytest.raises(ConfigError) as exc:
        parse_config(raw, environ={})
    assert "introspection_url" in str(exc.value)


def test_external_authz_requires_url():
    raw = _with(authz={"mode": "external"})
    with pytest.raises(ConfigError) as exc:
        parse_config(raw, environ={})
    assert "external_url" in str(exc.value)


def test_unknown_fields_rejected():
    raw = _with(bogus=1)
    with pytest.raises(ConfigError) as exc:
        parse_config(raw, environ={})
    assert "bogus" in str(exc.value)


def test_env_overrides_inject_secrets():
    raw = _with(
        authn={
            "mode": "introspection",
            "jwks_urls": ["http://x/jwks"],
            "introspection_url": "http://x/introspect",
        }
    )
    settings = parse_config(
        raw, environ={"GW_INTROSPECTION_CLIENT_SECRET": "s3cret"}
    )
    assert settings.authn.introspection_client_secret == "s3cret"
    # and without the env var it stays unset
    assert parse_config(raw, environ={}).authn.introspection_client_secret is None


def test_claims_authz_key_propagates_to_token_parsing():
    raw = _with(authz={"mode": "claims", "claim_key": "allowed-systems"})
    settings = parse_config(raw, environ={})
    assert settings.authn.systems_claim_key == "allowed-systems"


def test_load_is_deterministic(tmp_path):
    path = tmp_path / "gw.yaml"
    path.write_text(yaml.safe_dump(MINIMAL))
    first = load_config(str(path), environ={})
    second = load_config(str(path), environ={})
    assert first == second


def test_missing_file_is_a_startup_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"), environ={})


def test_malformed_yaml_is_a_startup_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("systems: [unclosed")
    with pytest.raises(ConfigError):
        load_config(str(path), environ={})
