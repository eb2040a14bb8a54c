"""Derivation-based key hierarchy rooted in a per-platform fused secret.

Keys are never stored. Every working key is re-derived on demand from the
platform root secret plus a derivation context (launch measurement,
security version, domain identity), so any change to the measured software
stack silently revokes all previously derived keys. Persistent data is
protected by sealing: AEAD under a context-bound sealing key, with the
header authenticated as associated data. Only a domain recreated with an
identical context can unseal.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field

from .errors import BadLengthError, MalformedBlobError, SealFailureError
from .measurement import Measurement, PlatformProfile
from .primitives import (
    AEAD_NONCE_LEN,
    AEAD_TAG_LEN,
    KeyPair,
    SymmetricKey,
    aead_open,
    aead_seal,
    exchange_keypair_from_seed,
    kdf,
    signing_keypair_from_seed,
)

SEAL_MAGIC = b"ARCASEAL"
SEAL_VERSION = 1

PURPOSE_ATTESTATION = "attest"
PURPOSE_SEALING = "seal"
PURPOSE_SESSION = "session"
_PURPOSES = (PURPOSE_ATTESTATION, PURPOSE_SEALING, PURPOSE_SESSION)


@dataclass(frozen=True)
class RootSecret:
    """Simulated fused secret; exists only inside the platform boundary.

    No serializer in this package may ever write ``data``; the end-to-end
    tests scan every externally written byte stream for it.
    """

    data: bytes = field(repr=False)
    platform_id: bytes

    def __post_init__(self):
        if len(self.data) != 32 or len(self.platform_id) != 32:
            raise BadLengthError("root secret and platform id must be 32 bytes")


def new_root_secret(platform_id: bytes, rand=secrets.token_bytes) -> RootSecret:
    return RootSecret(data=rand(32), platform_id=platform_id)


@dataclass(frozen=True)
class DerivationContext:
    """Everything a derived key binds to; fixed at domain launch."""

    measurement: Measurement
    security_version: int
    domain_identity: bytes

    def __post_init__(self):
        if len(self.domain_identity) != 32:
            raise BadLengthError("domain identity must be 32 bytes")

    def context_bytes(self) -> bytes:
        return (
            self.measurement.digest
            + self.security_version.to_bytes(8, "big")
            + self.domain_identity
        )


def derive_key(root: RootSecret, ctx: DerivationContext, purpose: str) -> SymmetricKey | KeyPair:
    """Derive the working key for ``purpose`` under this context.

    Deterministic in (root, ctx, purpose). The attestation purpose yields a
    signing keypair seeded by the KDF output; sealing and session purposes
    yield 32-byte symmetric keys.
    """
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown key purpose {purpose!r}")
    okm = kdf(root.data, ctx.context_bytes(), purpose, 32)
    if purpose == PURPOSE_ATTESTATION:
        return signing_keypair_from_seed(okm)
    return SymmetricKey(data=okm, purpose=purpose)


def session_keypair(root: RootSecret, ctx: DerivationContext) -> KeyPair:
    """The domain's key-exchange identity, bound into ReportData at attestation.

    Deterministic per (root, ctx) so re-attestation after a relaunch binds
    the same identity key; per-handshake channel secrets are derived later.
    """
    base = derive_key(root, ctx, PURPOSE_SESSION)
    assert isinstance(base, SymmetricKey)
    return exchange_keypair_from_seed(base.data)


@dataclass(frozen=True)
class SealedHeader:
    profile: PlatformProfile
    measurement_digest: bytes
    security_version: int
    label: str
    nonce: bytes

    def to_bytes(self) -> bytes:
        label_raw = self.label.encode("ascii")
        return (
            SEAL_MAGIC
            + bytes([SEAL_VERSION, self.profile.wire_byte])
            + self.measurement_digest
            + self.security_version.to_bytes(8, "big")
            + len(label_raw).to_bytes(2, "big")
            + label_raw
            + self.nonce
        )


@dataclass(frozen=True)
class SealedBlob:
    header: SealedHeader
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return (
            self.header.to_bytes()
            + len(self.ciphertext).to_bytes(8, "big")
            + self.ciphertext
            + self.tag
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedBlob":
        view = memoryview(raw)
        try:
            if bytes(view[:8]) != SEAL_MAGIC:
                raise MalformedBlobError("bad sealed blob magic")
            if view[8] != SEAL_VERSION:
                raise MalformedBlobError(f"unsupported sealed blob version {view[8]}")
            profile = PlatformProfile.from_wire_byte(view[9])
            digest = bytes(view[10:42])
            security_version = int.from_bytes(view[42:50], "big")
            label_len = int.from_bytes(view[50:52], "big")
            pos = 52
            label = bytes(view[pos : pos + label_len]).decode("ascii")
            pos += label_len
            nonce = bytes(view[pos : pos + AEAD_NONCE_LEN])
            pos += AEAD_NONCE_LEN
            ct_len = int.from_bytes(view[pos : pos + 8], "big")
            pos += 8
            ciphertext = bytes(view[pos : pos + ct_len])
            pos += ct_len
            tag = bytes(view[pos : pos + AEAD_TAG_LEN])
            pos += AEAD_TAG_LEN
        except (IndexError, UnicodeDecodeError, ValueError) as exc:
            raise MalformedBlobError(f"truncated or corrupt sealed blob: {exc}") from exc
        if pos != len(raw):
            raise MalformedBlobError("trailing bytes after sealed blob")
        if len(digest) != 32 or len(nonce) != AEAD_NONCE_LEN or len(tag) != AEAD_TAG_LEN:
            raise MalformedBlobError("truncated sealed blob")
        if len(ciphertext) != ct_len:
            raise MalformedBlobError("sealed blob ciphertext shorter than declared")
        header = SealedHeader(
            profile=profile,
            measurement_digest=digest,
            security_version=security_version,
            label=label,
            nonce=nonce,
        )
        return cls(header=header, ciphertext=ciphertext, tag=tag)


def _sealing_aead_key(root: RootSecret, ctx: DerivationContext) -> SymmetricKey:
    sealing = derive_key(root, ctx, PURPOSE_SEALING)
    assert isinstance(sealing, SymmetricKey)
    # AEAD takes a 128-bit key; the leading half of the 256-bit sealing key.
    return SymmetricKey(data=sealing.data[:16], purpose="seal-aead")


def seal(
    root: RootSecret,
    ctx: DerivationContext,
    label: str,
    plaintext: bytes,
    rand=secrets.token_bytes,
) -> SealedBlob:
    """Encrypt ``plaintext`` so only an identical context can recover it."""
    if not label:
        raise BadLengthError("seal label must be non-empty")
    header = SealedHeader(
        profile=ctx.measurement.profile,
        measurement_digest=ctx.measurement.digest,
        security_version=ctx.security_version,
        label=label,
        nonce=rand(AEAD_NONCE_LEN),
    )
    ciphertext, tag = aead_seal(
        _sealing_aead_key(root, ctx), header.nonce, plaintext, header.to_bytes()
    )
    return SealedBlob(header=header, ciphertext=ciphertext, tag=tag)


def unseal(root: RootSecret, ctx: DerivationContext, blob: SealedBlob) -> bytes:
    """Recover sealed plaintext; fails when any binding differs.

    A different measurement, security version, or platform root derives a
    different sealing key, and any header or ciphertext tamper breaks the
    AEAD. Security version must match exactly; there is no upgrade path.
    """
    if blob.header.measurement_digest != ctx.measurement.digest:
        raise SealFailureError("sealed under a different measurement")
    if blob.header.security_version != ctx.security_version:
        raise SealFailureError("sealed under a different security version")
    try:
        return aead_open(
            _sealing_aead_key(root, ctx),
            blob.header.nonce,
            blob.ciphertext,
            blob.tag,
            blob.header.to_bytes(),
        )
    except Exception as exc:
        raise SealFailureError("sealed blob failed authentication") from exc
