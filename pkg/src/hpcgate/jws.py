"""Compact JWS (JWT) signing and verification for RS256 and ES256.

Only asymmetric algorithms are supported: tokens are validated against
provider public keys, so ``none`` and the HMAC family are rejected outright.
Signing exists for the mock identity provider in the test fabric; the
gateway itself only ever verifies.
"""

from __future__ import annotations

import base64
import binascii
import json
from typing import Any, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)

PublicKey = Union[rsa.RSAPublicKey, ec.EllipticCurvePublicKey]
PrivateKey = Union[rsa.RSAPrivateKey, ec.EllipticCurvePrivateKey]

SUPPORTED_ALGS = ("RS256", "ES256")

_ES256_COORD_BYTES = 32


class JwsError(Exception):
    """Malformed token, unsupported algorithm, or failed signature check."""


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(data: str) -> bytes:
    pad = -len(data) % 4
    try:
        return base64.urlsafe_b64decode(data + "=" * pad)
    except (binascii.Error, ValueError) as exc:
        raise JwsError(f"invalid base64url segment: {exc}") from None


def _json_segment(obj: Any) -> str:
    return b64url_encode(
        json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()
    )


def _decode_json_segment(segment: str, what: str) -> dict:
    try:
        obj = json.loads(b64url_decode(segment))
    except (JwsError, json.JSONDecodeError, UnicodeDecodeError):
        raise JwsError(f"token {what} is not valid base64url JSON") from None
    if not isinstance(obj, dict):
        raise JwsError(f"token {what} must be a JSON object")
    return obj


def split_token(token: str) -> tuple[str, str, str]:
    parts = token.split(".")
    if len(parts) != 3 or not all(parts):
        raise JwsError("token is not a three-part JWS")
    return parts[0], parts[1], parts[2]


def peek_header(token: str) -> dict:
    """Decode the header WITHOUT verifying anything. Only safe for kid lookup."""
    header_seg, _, _ = split_token(token)
    return _decode_json_segment(header_seg, "header")


def alg_for_key(key: PublicKey | PrivateKey) -> str:
    if isinstance(key, (rsa.RSAPublicKey, rsa.RSAPrivateKey)):
        return "RS256"
    if isinstance(key, (ec.EllipticCurvePublicKey, ec.EllipticCurvePrivateKey)):
        return "ES256"
    raise JwsError(f"unsupported key type {type(key).__name__}")


def sign(claims: dict, key: PrivateKey, kid: str, alg: str | None = None) -> str:
    alg = alg or alg_for_key(key)
    if alg not in SUPPORTED_ALGS:
        raise JwsError(f"unsupported signing algorithm {alg!r}")
    header = {"alg": alg, "typ": "JWT", "kid": kid}
    signing_input = f"{_json_segment(header)}.{_json_segment(claims)}"
    if alg == "RS256":
        assert isinstance(key, rsa.RSAPrivateKey)
        sig = key.sign(signing_input.encode(), padding.PKCS1v15(), hashes.SHA256())
    else:
        assert isinstance(key, ec.EllipticCurvePrivateKey)
        der = key.sign(signing_input.encode(), ec.ECDSA(hashes.SHA256()))
        r, s = decode_dss_signature(der)
        sig = r.to_bytes(_ES256_COORD_BYTES, "big") + s.to_bytes(
            _ES256_COORD_BYTES, "big"
        )
    return f"{signing_input}.{b64url_encode(sig)}"


def verify(token: str, key: PublicKey) -> dict:
    """Check the signature and return the claims. No expiry policy here."""
    header_seg, claims_seg, sig_seg = split_token(token)
    header = _decode_json_segment(header_seg, "header")
    alg = header.get("alg")
    if alg not in SUPPORTED_ALGS:
        raise JwsError(f"token algorithm {alg!r} not allowed")
    if alg != alg_for_key(key):
        raise JwsError("token algorithm does not match the key type")
    signing_input = f"{header_seg}.{claims_seg}".encode()
    sig = b64url_decode(sig_seg)
    try:
        if alg == "RS256":
            assert isinstance(key, rsa.RSAPublicKey)
            key.verify(sig, signing_input, padding.PKCS1v15(), hashes.SHA256())
        else:
            assert isinstance(key, ec.EllipticCurvePublicKey)
            if len(sig) != 2 * _ES256_COORD_BYTES:
                raise JwsError("ES256 signature must be 64 bytes")
            r = int.from_bytes(sig[:_ES256_COORD_BYTES], "big")
            s = int.from_bytes(sig[_ES256_COORD_BYTES:], "big")
            key.verify(
                encode_dss_signature(r, s), signing_input, ec.ECDSA(hashes.SHA256())
            )
    except InvalidSignature:
        raise JwsError("signature verification failed") from None
    return _decode_json_segment(claims_seg, "claims")


# --- JWKS documents ---------------------------------------------------------


def _b64url_uint(n: int) -> str:
    length = max(1, (n.bit_length() + 7) // 8)
    return b64url_encode(n.to_bytes(length, "big"))


def _uint_from_b64url(segment: str) -> int:
    return int.from_bytes(b64url_decode(segment), "big")


def public_key_to_jwk(key: PublicKey, kid: str) -> dict:
    if isinstance(key, rsa.RSAPublicKey):
        numbers = key.public_numbers()
        return {
            "kty": "RSA",
            "kid": kid,
            "alg": "RS256",
            "use": "sig",
            "n": _b64url_uint(numbers.n),
            "e": _b64url_uint(numbers.e),
        }
    if isinstance(key, ec.EllipticCurvePublicKey):
        numbers = key.public_numbers()
        if not isinstance(numbers.curve, ec.SECP256R1):
            raise JwsError("only P-256 EC keys are supported")
        return {
            "kty": "EC",
            "kid": kid,
            "alg": "ES256",
            "use": "sig",
            "crv": "P-256",
            "x": b64url_encode(numbers.x.to_bytes(_ES256_COORD_BYTES, "big")),
            "y": b64url_encode(numbers.y.to_bytes(_ES256_COORD_BYTES, "big")),
        }
    raise JwsError(f"unsupported key type {type(key).__name__}")


def jwk_to_public_key(jwk: dict) -> PublicKey:
    kty = jwk.get("kty")
    if kty == "RSA":
        if "n" not in jwk or "e" not in jwk:
            raise JwsError("RSA JWK missing n/e")
        numbers = rsa.RSAPublicNumbers(
            e=_uint_from_b64url(jwk["e"]), n=_uint_from_b64url(jwk["n"])
        )
        return numbers.public_key()
    if kty == "EC":
        if jwk.get("crv") != "P-256":
            raise JwsError(f"unsupported EC curve {jwk.get('crv')!r}")
        numbers = ec.EllipticCurvePublicNumbers(
            x=_uint_from_b64url(jwk["x"]),
            y=_uint_from_b64url(jwk["y"]),
            curve=ec.SECP256R1(),
        )
        return numbers.public_key()
    raise JwsError(f"unsupported JWK key type {kty!r}")


def parse_jwks(doc: dict) -> list[tuple[str, PublicKey]]:
    """Return (kid, key) pairs from a JWKS document, rejecting malformed entries."""
    keys = doc.get("keys")
    if not isinstance(keys, list):
        raise JwsError("JWKS document has no 'keys' list")
    out = []
    for i, jwk in enumerate(keys):
        if not isinstance(jwk, dict):
            raise JwsError(f"JWKS entry {i} is not an object")
        kid = jwk.get("kid")
        if not kid or not isinstance(kid, str):
            raise JwsError(f"JWKS entry {i} has no kid")
        out.append((kid, jwk_to_public_key(jwk)))
    return out
