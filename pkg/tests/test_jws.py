"""Token signing/verification against an independent check: the oracle
verifies signatures directly with cryptography primitives and hand-rolled
JSON/base64 handling, sharing none of the production verify path."""

import base64
import json

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import encode_dss_signature

from hpcgate import jws

RSA_KEY = rsa.generate_private_key(public_exponent=65537, key_size=2048)
EC_KEY = ec.generate_private_key(ec.SECP256R1())

CLAIMS = {"sub": "alice", "iat": 1000, "exp": 2000, "preferred_username": "alice"}


def oracle_verify(token: str, public_key) -> dict:
    """Independent verifier: stdlib base64/json plus raw cryptography calls."""
    header_b64, payload_b64, sig_b64 = token.split(".")

    def unb64(segment: str) -> bytes:
        return base64.urlsafe_b64decode(segment + "=" * (-len(segment) % 4))

    signing_input = f"{header_b64}.{payload_b64}".encode()
    signature = unb64(sig_b64)
    header = json.loads(unb64(header_b64))
    if header["alg"] == "RS256":
        public_key.verify(signature, signing_input, padding.PKCS1v15(), hashes.SHA256())
    elif header["alg"] == "ES256":
        r = int.from_bytes(signature[:32], "big")
        s = int.from_bytes(signature[32:], "big")
        public_key.verify(
            encode_dss_signature(r, s), signing_input, ec.ECDSA(hashes.SHA256())
        )
    else:
        raise AssertionError(f"unexpected alg {header['alg']}")
    return json.loads(unb64(payload_b64))


@pytest.mark.parametrize("key", [RSA_KEY, EC_KEY], ids=["rs256", "es256"])
def test_sign_then_oracle_verify(key):
    token = jws.sign(CLAIMS, key, kid="k1")
    assert oracle_verify(token, key.public_key()) == CLAIMS


@pytest.mark.parametrize("key", [RSA_KEY, EC_KEY], ids=["rs256", "es256"])
def test_sign_then_module_verify(key):
    token = jws.sign(CLAIMS, key, kid="k1")
    assert jws.verify(token, key.public_key()) == CLAIMS
    assert jws.peek_header(token)["kid"] == "k1"


def test_tampered_signature_rejected():
    token = jws.sign(CLAIMS, RSA_KEY, kid="k1")
    head, _, sig = token.rpartition(".")
    raw = bytearray(jws.b64url_decode(sig))
    raw[0] ^= 0x01
    bad = f"{head}.{jws.b64url_encode(bytes(raw))}"
    with pytest.raises(jws.JwsError):
        jws.verify(bad, RSA_KEY.public_key())


def test_tampered_payload_rejected():
    token = jws.sign(CLAIMS, RSA_KEY, kid="k1")
    header, payload, sig = token.split(".")
    other = jws.b64url_encode(json.dumps({"sub": "mallory"}).encode())
    with pytest.raises(jws.JwsError):
        jws.verify(f"{header}.{other}.{sig}", RSA_KEY.public_key())


def test_wrong_key_rejected():
    token = jws.sign(CLAIMS, RSA_KEY, kid="k1")
    other = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    with pytest.raises(jws.JwsError):
        jws.verify(token, other.public_key())


def test_algorithm_must_match_key_type():
    token = jws.sign(CLAIMS, RSA_KEY, kid="k1")
    with pytest.raises(jws.JwsError):
        jws.verify(token, EC_KEY.public_key())


def test_none_and_hmac_algorithms_rejected():
    header = jws.b64url_encode(json.dumps({"alg": "none", "kid": "k1"}).encode())
    payload = jws.b64url_encode(json.dumps(CLAIMS).encode())
    with pytest.raises(jws.JwsError):
        jws.verify(f"{header}.{payload}.", RSA_KEY.public_key())
    header = jws.b64url_encode(json.dumps({"alg": "HS256", "kid": "k1"}).encode())
    with pytest.raises(jws.JwsError):
        jws.verify(f"{header}.{payload}.c2ln", RSA_KEY.public_key())


@pytest.mark.parametrize(
    "token", ["", "a.b", "a.b.c.d", "!!.??.>>", "a..c"]
)
def test_malformed_tokens_rejected(token):
    with pytest.raises(jws.JwsError):
        jws.verify(token, RSA_KEY.public_key())


def test_jwk_round_trip_rsa():
    doc = jws.public_key_to_jwk(RSA_KEY.public_key(), kid="a")
    restored = jws.jwk_to_public_key(doc)
    token = jws.sign(CLAIMS, RSA_KEY, kid="a")
    assert jws.verify(token, restored) == CLAIMS


def test_jwk_round_trip_ec():
    doc = jws.public_key_to_jwk(EC_KEY.public_key(), kid="b")
    restored = jws.jwk_to_public_key(doc)
    token = jws.sign(CLAIMS, EC_KEY, kid="b")
    assert jws.verify(token, restored) == CLAIMS


def test_parse_jwks_document():
    doc = {
        "keys": [
            jws.public_key_to_jwk(RSA_KEY.public_key(), kid="a"),
            jws.public_key_to_jwk(EC_KEY.public_key(), kid="b"),
        ]
    }
    pairs = jws.parse_jwks(doc)
    assert [kid for kid, _ in pairs] == ["a", "b"]


@pytest.mark.parametrize(
    "doc",
    [
        {},
        {"keys": [{"kty": "RSA"}]},
        {"keys": [{"kty": "oct", "kid": "x", "k": "c2VjcmV0"}]},
        {"keys": [{"kty": "EC", "kid": "x", "crv": "P-384", "x": "AA", "y": "AA"}]},
    ],
)
def test_malformed_jwks_rejected(doc):
    with pytest.raises(jws.JwsError):
        jws.parse_jwks(doc)
