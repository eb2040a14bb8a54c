"""Chained launch measurements, image digests, and the verifier trust policy.

A measurement is a left fold of SHA-256 over the ordered component list:
``acc_0 = h(enc(v_1))``, ``acc_i = h(acc_{i-1} || enc(v_{i+1}))``, where
``enc`` prefixes each payload with its 8-byte big-endian length. The length
prefix keeps component boundaries unambiguous, so shifting bytes between
adjacent components always changes the result.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

from .errors import EmptyManifestError, ParseError
from .primitives import hash_data

POLICY_VERSION = 1


class PlatformProfile(enum.Enum):
    """Which simulated TEE substrate a platform or manifest targets."""

    PROCESS = "process"
    VM_TDX = "tdx"
    VM_SEV = "sev"

    @property
    def wire_byte(self) -> int:
        return {"process": 0, "tdx": 1, "sev": 2}[self.value]

    @classmethod
    def from_wire_byte(cls, b: int) -> "PlatformProfile":
        try:
            return {0: cls.PROCESS, 1: cls.VM_TDX, 2: cls.VM_SEV}[b]
        except KeyError:
            raise ParseError(f"unknown profile byte {b}") from None

    @classmethod
    def from_string(cls, s: str) -> "PlatformProfile":
        try:
            return cls(s)
        except ValueError:
            raise ParseError(f"unknown profile {s!r}", field="profile") from None


class ReasonCode(enum.Enum):
    """Why a verification verdict passed or failed."""

    OK = "Ok"
    BAD_SIGNATURE = "BadSignature"
    BAD_CHAIN = "BadChain"
    REVOKED_CERT = "RevokedCert"
    TCB_BELOW_FLOOR = "TcbBelowFloor"
    UNKNOWN_MEASUREMENT = "UnknownMeasurement"
    UNKNOWN_IMAGE = "UnknownImage"
    REPORT_DATA_MISMATCH = "ReportDataMismatch"
    STALE_NONCE = "StaleNonce"
    NONCE_REUSE = "NonceReuse"
    VMPL_TOO_HIGH = "VmplTooHigh"


@dataclass(frozen=True)
class ComponentValue:
    """One measured component: a name plus its raw payload bytes."""

    name: str
    payload: bytes


@dataclass(frozen=True)
class Manifest:
    """Ordered component list; order is significant and preserved."""

    components: tuple[ComponentValue, ...]
    profile: PlatformProfile

    def __post_init__(self):
        names = [c.name for c in self.components]
        if len(names) != len(set(names)):
            raise ParseError("duplicate component name in manifest")

    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.components)

    def payload_bytes(self) -> int:
        return sum(len(c.payload) for c in self.components)


@dataclass(frozen=True)
class Measurement:
    digest: bytes
    profile: PlatformProfile


def _encode(component: ComponentValue) -> bytes:
    return len(component.payload).to_bytes(8, "big") + component.payload


def measure(manifest: Manifest) -> Measurement:
    """Fold the whole manifest into a single 32-byte launch measurement."""
    if not manifest.components:
        raise EmptyManifestError("cannot measure an empty manifest")
    acc = hash_data(_encode(manifest.components[0]))
    for component in manifest.components[1:]:
        acc = hash_data(acc + _encode(component))
    return Measurement(digest=acc, profile=manifest.profile)


def extend(current: Measurement, component: ComponentValue) -> Measurement:
    """One fold step; composing extend over a manifest equals measure()."""
    return Measurement(
        digest=hash_data(current.digest + _encode(component)),
        profile=current.profile,
    )


@dataclass(frozen=True)
class TrustPolicy:
    """The verifier's trust set: acceptable measurements, images, and floors.

    Empty sets mean nothing is trusted. ``min_vmpl_allowed`` is the highest
    (least privileged) VMPL the policy accepts; reports must run at or below
    it, and it defaults to 0 so only the most privileged level passes.
    """

    trusted_measurements: frozenset[bytes] = frozenset()
    trusted_images: frozenset[bytes] = frozenset()
    min_tcb_version: int = 0
    revoked_cert_serials: frozenset[int] = frozenset()
    min_vmpl_allowed: int = 0

    def __post_init__(self):
        if not 0 <= self.min_vmpl_allowed <= 3:
            raise ParseError("min_vmpl_allowed must be in [0, 3]", field="min_vmpl_allowed")


def policy_check(
    policy: TrustPolicy,
    measurement: Measurement,
    image: bytes,
    tcb: int,
    vmpl: int,
) -> ReasonCode:
    """Check all policy gates in fixed order; first failure wins.

    Order: measurement membership, image membership, TCB floor, VMPL cap.
    Returns ReasonCode.OK only when every gate passes.
    """
    if measurement.digest not in policy.trusted_measurements:
        return ReasonCode.UNKNOWN_MEASUREMENT
    if image not in policy.trusted_images:
        return ReasonCode.UNKNOWN_IMAGE
    if tcb < policy.min_tcb_version:
        return ReasonCode.TCB_BELOW_FLOOR
    if vmpl > policy.min_vmpl_allowed:
        return ReasonCode.VMPL_TOO_HIGH
    return ReasonCode.OK


def _hex32(value: str, where: str) -> bytes:
    if not isinstance(value, str):
        raise ParseError("expected hex string", field=where)
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise ParseError(f"invalid hex in {value!r}", field=where) from None
    if len(raw) != 32:
        raise ParseError(f"expected 32 bytes, got {len(raw)}", field=where)
    return raw


def load_policy(document: bytes) -> TrustPolicy:
    """Parse the versioned JSON policy document."""
    try:
        obj = json.loads(document.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"policy is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("policy root must be an object")
    if obj.get("version") != POLICY_VERSION:
        raise ParseError(f"unsupported policy version {obj.get('version')!r}", field="version")
    for required in ("trusted_measurements", "trusted_images", "min_tcb_version"):
        if required not in obj:
            raise ParseError("missing required key", field=required)
    if not isinstance(obj["trusted_measurements"], list):
        raise ParseError("must be a list", field="trusted_measurements")
    if not isinstance(obj["trusted_images"], list):
        raise ParseError("must be a list", field="trusted_images")
    if not isinstance(obj["min_tcb_version"], int):
        raise ParseError("must be an integer", field="min_tcb_version")
    serials = obj.get("revoked_cert_serials", [])
    if not isinstance(serials, list) or not all(isinstance(s, int) for s in serials):
        raise ParseError("must be a list of integers", field="revoked_cert_serials")
    vmpl = obj.get("min_vmpl_allowed", 0)
    if not isinstance(vmpl, int):
        raise ParseError("must be an integer", field="min_vmpl_allowed")
    return TrustPolicy(
        trusted_measurements=frozenset(
            _hex32(m, "trusted_measurements") for m in obj["trusted_measurements"]
        ),
        trusted_images=frozenset(_hex32(i, "trusted_images") for i in obj["trusted_images"]),
        min_tcb_version=obj["min_tcb_version"],
        revoked_cert_serials=frozenset(serials),
        min_vmpl_allowed=vmpl,
    )


def save_policy(policy: TrustPolicy) -> bytes:
    """Serialize a policy; load_policy(save_policy(p)) == p."""
    obj = {
        "version": POLICY_VERSION,
        "trusted_measurements": sorted(m.hex() for m in policy.trusted_measurements),
        "trusted_images": sorted(i.hex() for i in policy.trusted_images),
        "min_tcb_version": policy.min_tcb_version,
        "revoked_cert_serials": sorted(policy.revoked_cert_serials),
        "min_vmpl_allowed": policy.min_vmpl_allowed,
    }
    return json.dumps(obj, indent=2, sort_keys=True).encode("utf-8") + b"\n"
