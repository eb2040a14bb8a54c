"""Deterministic cryptographic building blocks.

Every higher layer goes through these semantic wrappers so that tests can
pin each operation against an independent reference (frozen golden vectors
under ``testdata/primitives``).

Concrete schemes: SHA-256 hashing, HMAC-SHA-256 MACs, an HKDF-style
extract-then-expand KDF (salt = label, info = context), AES-128-GCM for
AEAD (96-bit nonces, 128-bit tags), X25519 key agreement, and Ed25519
signatures (32-byte public keys, deterministic signing).
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    PublicFormat,
)

from .errors import (
    AuthFailureError,
    BadLengthError,
    InvalidPointError,
    MalformedKeyError,
)

DIGEST_LEN = 32
AEAD_KEY_LEN = 16
AEAD_NONCE_LEN = 12
AEAD_TAG_LEN = 16
MAC_LEN = 32
KEYPAIR_PART_LEN = 32
SIGNATURE_LEN = 64


@dataclass(frozen=True)
class SymmetricKey:
    """Raw symmetric key material tagged with its purpose label."""

    data: bytes = field(repr=False)
    purpose: str

    def __post_init__(self):
        if len(self.data) not in (16, 32):
            raise BadLengthError(f"symmetric key must be 16 or 32 bytes, got {len(self.data)}")
        if not self.purpose:
            raise BadLengthError("symmetric key purpose label must be non-empty")


@dataclass(frozen=True)
class KeyPair:
    """A 32-byte public part plus its 32-byte private seed.

    The private part must never appear in any persisted or transmitted
    structure; serializers in this package only ever touch ``public``.
    """

    public: bytes
    private: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.public) != KEYPAIR_PART_LEN or len(self.private) != KEYPAIR_PART_LEN:
            raise MalformedKeyError("keypair parts must be exactly 32 bytes")


def hash_data(data: bytes) -> bytes:
    """SHA-256 of ``data``; empty input allowed."""
    return hashlib.sha256(data).digest()


def mac(key: SymmetricKey, data: bytes) -> bytes:
    """HMAC-SHA-256 over ``data``."""
    return _hmac.new(key.data, data, hashlib.sha256).digest()


def mac_verify(key: SymmetricKey, data: bytes, tag: bytes) -> bool:
    return _hmac.compare_digest(mac(key, data), tag)


def kdf(secret: bytes, context: bytes, label: str, out_len: int) -> bytes:
    """HKDF-SHA256 with salt = ``label`` (ascii) and info = ``context``.

    Implemented directly over HMAC so tests can cross-check against an
    independent HKDF reference. Distinct labels or contexts yield
    independent outputs.
    """
    if not 16 <= out_len <= 64:
        raise BadLengthError(f"kdf output length must be in [16, 64], got {out_len}")
    salt = label.encode("ascii")
    prk = _hmac.new(salt, secret, hashlib.sha256).digest()
    okm = b""
    block = b""
    counter = 1
    while len(okm) < out_len:
        block = _hmac.new(prk, block + context + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:out_len]


def aead_seal(
    key: SymmetricKey, nonce: bytes, plaintext: bytes, assoc_data: bytes
) -> tuple[bytes, bytes]:
    """AES-128-GCM seal; returns (ciphertext, 16-byte tag)."""
    if len(key.data) != AEAD_KEY_LEN:
        raise BadLengthError("AEAD key must be 16 bytes")
    if len(nonce) != AEAD_NONCE_LEN:
        raise BadLengthError("AEAD nonce must be 12 bytes")
    sealed = AESGCM(key.data).encrypt(nonce, plaintext, assoc_data)
    return sealed[:-AEAD_TAG_LEN], sealed[-AEAD_TAG_LEN:]


def aead_open(
    key: SymmetricKey, nonce: bytes, ciphertext: bytes, tag: bytes, assoc_data: bytes
) -> bytes:
    """AES-128-GCM open; raises AuthFailureError on any mismatch."""
    if len(key.data) != AEAD_KEY_LEN:
        raise BadLengthError("AEAD key must be 16 bytes")
    if len(nonce) != AEAD_NONCE_LEN:
        raise BadLengthError("AEAD nonce must be 12 bytes")
    if len(tag) != AEAD_TAG_LEN:
        raise BadLengthError("AEAD tag must be 16 bytes")
    try:
        return AESGCM(key.data).decrypt(nonce, ciphertext + tag, assoc_data)
    except InvalidTag as exc:
        raise AuthFailureError("AEAD authentication failed") from exc


def signing_keypair_from_seed(seed: bytes) -> KeyPair:
    """Ed25519 keypair deterministically derived from a 32-byte seed."""
    if len(seed) != 32:
        raise MalformedKeyError("signing seed must be 32 bytes")
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public=pub, private=seed)


def sign(private: bytes, message: bytes) -> bytes:
    """Deterministic Ed25519 signature under the 32-byte private seed."""
    if len(private) != 32:
        raise MalformedKeyError("signing key must be a 32-byte seed")
    return Ed25519PrivateKey.from_private_bytes(private).sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` verifies over ``message`` under ``public``."""
    if len(public) != 32:
        raise MalformedKeyError("verifying key must be 32 bytes")
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except InvalidSignature:
        return False
    except ValueError:
        return False


def exchange_keypair_from_seed(seed: bytes) -> KeyPair:
    """X25519 keypair deterministically derived from a 32-byte seed."""
    if len(seed) != 32:
        raise MalformedKeyError("exchange seed must be 32 bytes")
    priv = X25519PrivateKey.from_private_bytes(seed)
    pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public=pub, private=seed)


def ecdh(private: bytes, peer_public: bytes) -> bytes:
    """X25519 shared secret; symmetric in the two keypairs."""
    if len(private) != 32 or len(peer_public) != 32:
        raise MalformedKeyError("exchange key parts must be 32 bytes")
    try:
        return X25519PrivateKey.from_private_bytes(private).exchange(
            X25519PublicKey.from_public_bytes(peer_public)
        )
    except ValueError as exc:
        raise InvalidPointError(str(exc)) from exc
