"""Key exchange (curve25519-sha256) and the packet cipher it produces.

Packet protection is aes128-ctr with hmac-sha2-256-etm: the length field
travels in clear, the MAC covers sequence number, length and ciphertext,
and is verified before decryption.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import struct

from cryptography.hazmat.primitives.asymmetric import x25519
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import SSHProtocolError
from .wire import Writer

KEX_ALG = "curve25519-sha256"
CIPHER_ALG = "aes128-ctr"
MAC_ALG = "hmac-sha2-256-etm@openssh.com"

BLOCK_SIZE = 16
MAC_SIZE = 32
ENC_KEY_SIZE = 16
IV_SIZE = 16
MAC_KEY_SIZE = 32

MAX_PACKET_SIZE = 1024 * 1024  # generous bound; defends against bogus lengths


def generate_ephemeral() -> tuple[x25519.X25519PrivateKey, bytes]:
    key = x25519.X25519PrivateKey.generate()
    pub = key.public_key().public_bytes_raw()
    return key, pub


def shared_secret(private: x25519.X25519PrivateKey, peer_public: bytes) -> int:
    if len(peer_public) != 32:
        raise SSHProtocolError("bad curve25519 public value")
    secret = private.exchange(x25519.X25519PublicKey.from_public_bytes(peer_public))
    return int.from_bytes(secret, "big")


def exchange_hash(
    client_version: str,
    server_version: str,
    client_kexinit: bytes,
    server_kexinit: bytes,
    host_key_blob: bytes,
    client_ephemeral: bytes,
    server_ephemeral: bytes,
    secret: int,
) -> bytes:
    w = (
        Writer()
        .string(client_version)
        .string(server_version)
        .string(client_kexinit)
        .string(server_kexinit)
        .string(host_key_blob)
        .string(client_ephemeral)
        .string(server_ephemeral)
        .mpint(secret)
    )
    return hashlib.sha256(w.bytes()).digest()


def _derive(secret: int, h: bytes, tag: bytes, session_id: bytes, size: int) -> bytes:
    k = Writer().mpint(secret).bytes()
    out = hashlib.sha256(k + h + tag + session_id).digest()
    while len(out) < size:
        out += hashlib.sha256(k + h + out).digest()
    return out[:size]


class PacketCipher:
    """One direction of packet protection (encrypt-then-MAC)."""

    def __init__(self, enc_key: bytes, iv: bytes, mac_key: bytes, encrypt: bool):
        cipher = Cipher(algorithms.AES(enc_key), modes.CTR(iv))
        self._ctx = cipher.encryptor() if encrypt else cipher.decryptor()
        self._mac_key = mac_key

    def _mac(self, seq: int, length_field: bytes, ciphertext: bytes) -> bytes:
        msg = struct.pack(">I", seq) + length_field + ciphertext
        return hmac_mod.new(self._mac_key, msg, hashlib.sha256).digest()

    def seal(self, seq: int, payload: bytes) -> bytes:
        pad_len = BLOCK_SIZE - (1 + len(payload)) % BLOCK_SIZE
        if pad_len < 4:
            pad_len += BLOCK_SIZE
        plaintext = bytes([pad_len]) + payload + os.urandom(pad_len)
        length_field = struct.pack(">I", len(plaintext))
        ciphertext = self._ctx.update(plaintext)
        return length_field + ciphertext + self._mac(seq, length_field, ciphertext)

    def packet_length(self, length_field: bytes) -> int:
        length = struct.unpack(">I", length_field)[0]
        if not BLOCK_SIZE <= length <= MAX_PACKET_SIZE or length % BLOCK_SIZE:
            raise SSHProtocolError(f"implausible packet length {length}")
        return length

    def open(self, seq: int, length_field: bytes, ciphertext: bytes, mac: bytes) -> bytes:
        expected = self._mac(seq, length_field, ciphertext)
        if not hmac_mod.compare_digest(expected, mac):
            raise SSHProtocolError("packet MAC verification failed")
        plaintext = self._ctx.update(ciphertext)
        pad_len = plaintext[0]
        if pad_len < 4 or pad_len >= len(plaintext):
            raise SSHProtocolError("invalid packet padding")
        return plaintext[1 : len(plaintext) - pad_len]


def derive_ciphers(
    secret: int, h: bytes, session_id: bytes, client_side: bool
) -> tuple[PacketCipher, PacketCipher]:
    """Return (send_cipher, recv_cipher) for this side of the connection."""
    iv_c2s = _derive(secret, h, b"A", session_id, IV_SIZE)
    iv_s2c = _derive(secret, h, b"B", session_id, IV_SIZE)
    key_c2s = _derive(secret, h, b"C", session_id, ENC_KEY_SIZE)
    key_s2c = _derive(secret, h, b"D", session_id, ENC_KEY_SIZE)
    mac_c2s = _derive(secret, h, b"E", session_id, MAC_KEY_SIZE)
    mac_s2c = _derive(secret, h, b"F", session_id, MAC_KEY_SIZE)
    c2s = (key_c2s, iv_c2s, mac_c2s)
    s2c = (key_s2c, iv_s2c, mac_s2c)
    send, recv = (c2s, s2c) if client_side else (s2c, c2s)
    return (
        PacketCipher(*send, encrypt=True),
        PacketCipher(*recv, encrypt=False),
    )
