"""Ed25519 key handling: wire blobs, signatures, and PEM persistence."""

from __future__ import annotations

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from .errors import SSHProtocolError
from .wire import Reader, Writer

KEY_ALG = "ssh-ed25519"


def generate_private_key() -> ed25519.Ed25519PrivateKey:
    return ed25519.Ed25519PrivateKey.generate()


def private_key_to_pem(key: ed25519.Ed25519PrivateKey) -> bytes:
    return key.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )


def load_private_key(path: str) -> ed25519.Ed25519PrivateKey:
    with open(path, "rb") as fh:
        key = serialization.load_pem_private_key(fh.read(), password=None)
    if not isinstance(key, ed25519.Ed25519PrivateKey):
        raise ValueError(f"{path}: expected an ed25519 private key")
    return key


def public_key_blob(key: ed25519.Ed25519PrivateKey | ed25519.Ed25519PublicKey) -> bytes:
    """Encode as the SSH public-key blob: string alg || string raw key."""
    if isinstance(key, ed25519.Ed25519PrivateKey):
        key = key.public_key()
    raw = key.public_bytes(
        encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw
    )
    return Writer().string(KEY_ALG).string(raw).bytes()


def public_key_from_blob(blob: bytes) -> ed25519.Ed25519PublicKey:
    reader = Reader(blob)
    alg = reader.text()
    if alg != KEY_ALG:
        raise SSHProtocolError(f"unsupported public key algorithm {alg!r}")
    raw = reader.string()
    if len(raw) != 32:
        raise SSHProtocolError("malformed ed25519 public key blob")
    return ed25519.Ed25519PublicKey.from_public_bytes(raw)


def sign_blob(key: ed25519.Ed25519PrivateKey, data: bytes) -> bytes:
    """Signature in SSH wire format: string alg || string raw signature."""
    return Writer().string(KEY_ALG).string(key.sign(data)).bytes()


def verify_blob(pub_blob: bytes, signature: bytes, data: bytes) -> bool:
    try:
        key = public_key_from_blob(pub_blob)
        reader = Reader(signature)
        if reader.text() != KEY_ALG:
            return False
        key.verify(reader.string(), data)
        return True
    except (SSHProtocolError, InvalidSignature):
        return False
