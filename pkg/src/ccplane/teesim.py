"""Simulated TEE substrate: the prover side of attestation.

Hosts trust domains under three platform profiles. A process-style
platform can carry two cooperating domains (an agent that fronts the host
boundary and an app that runs the workload); the VM-style profiles carry
one confidential-VM domain per container. Every platform owns a quoting
identity certified by a three-level chain rooted at a simulated vendor CA,
and signs reports whose ReportData field binds nonce, public key, and
image per the profile's rule:

  process app   rd = h(nonce || pk_app || img_app)
  process agent rd = h(pk_agent || pk_app || img_agent || img_app)
  tdx           rd = h(pk || nonce || img)
  sev           rd = h(pk || domain_id), nonce carried only in the echo

All preimage fields are fixed-width 32-byte values, so the raw
concatenation cannot be reparsed ambiguously. The fault-injection hooks
model a host-level adversary: they degrade the evidence a platform
produces, never the verifier.
"""

from __future__ import annotations

import enum
import secrets
import threading
from dataclasses import dataclass, field

from .errors import (
    BadNonceError,
    EmptyManifestError,
    ForeignReportError,
    ParseError,
    UnknownFaultError,
)
from .keyhier import (
    DerivationContext,
    RootSecret,
    new_root_secret,
    session_keypair,
)
from .measurement import (
    ComponentValue,
    Manifest,
    Measurement,
    PlatformProfile,
    measure,
)
from .primitives import KeyPair, hash_data, sign, signing_keypair_from_seed

NONCE_LEN = 32

CHAIN_SUBJECTS = {
    PlatformProfile.VM_SEV: ("AMD-ROOT-SIM", "CEK", "PEK"),
    PlatformProfile.VM_TDX: ("INTEL-ROOT-SIM", "PCK-CA", "PCK"),
    PlatformProfile.PROCESS: ("INTEL-ROOT-SIM", "QE-CA", "QE"),
}


class CertRole(enum.Enum):
    ROOT = 0
    INTERMEDIATE = 1
    LEAF = 2


class DomainRole(enum.Enum):
    AGENT = "agent"
    APP = "app"


class Fault(enum.Enum):
    TAMPER_MANIFEST = "tamper-manifest"
    DOWNGRADE_TCB = "downgrade-tcb"
    SWAP_IMAGE = "swap-image"
    REVOKE_LEAF = "revoke-leaf"
    BREAK_CHAIN_SIGNATURE = "break-chain-signature"
    FORGE_QUOTING_KEY = "forge-quoting-key"

    @classmethod
    def from_string(cls, name: str) -> "Fault":
        try:
            return cls(name)
        except ValueError:
            raise UnknownFaultError(f"unknown fault {name!r}") from None


@dataclass(frozen=True)
class Certificate:
    subject: str
    serial: int
    public: bytes
    issuer_signature: bytes
    role: CertRole

    def signing_preimage(self) -> bytes:
        raw_subject = self.subject.encode("ascii")
        return (
            len(raw_subject).to_bytes(2, "big")
            + raw_subject
            + self.serial.to_bytes(8, "big")
            + self.public
            + bytes([self.role.value])
        )


@dataclass(frozen=True)
class CertChain:
    """Exactly root, intermediate, leaf; signed top-down."""

    certs: tuple[Certificate, Certificate, Certificate]

    @property
    def root(self) -> Certificate:
        return self.certs[0]

    @property
    def intermediate(self) -> Certificate:
        return self.certs[1]

    @property
    def leaf(self) -> Certificate:
        return self.certs[2]


@dataclass
class TrustDomain:
    """One in-container trust domain: identity, measurement, and keys."""

    domain_id: bytes
    profile: PlatformProfile
    manifest: Manifest
    measurement: Measurement
    ctx: DerivationContext
    identity_keys: KeyPair
    image: bytes
    vmpl: int
    role: DomainRole | None
    platform: "Platform" = field(repr=False)
    bound_peer: "TrustDomain | None" = None


@dataclass
class Platform:
    id: bytes
    profile: PlatformProfile
    root: RootSecret
    tcb_version: int
    quoting_identity: KeyPair
    cert_chain: CertChain
    domains: list[TrustDomain] = field(default_factory=list)
    published_revocations: set[int] = field(default_factory=set)
    pending_faults: list[Fault] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


def _issue_cert(
    subject: str, serial: int, public: bytes, role: CertRole, issuer_private: bytes
) -> Certificate:
    unsigned = Certificate(
        subject=subject, serial=serial, public=public, issuer_signature=b"", role=role
    )
    signature = sign(issuer_private, unsigned.signing_preimage())
    return Certificate(
        subject=subject, serial=serial, public=public, issuer_signature=signature, role=role
    )


def create_platform(
    profile: PlatformProfile,
    tcb_version: int,
    vendor_root: KeyPair,
    rand=secrets.token_bytes,
) -> Platform:
    """Provision a simulated platform with a fresh fused secret and quoting chain.

    The chain runs vendor root, intermediate, leaf, each signed by its
    predecessor; the leaf certifies the platform's quoting public key.
    """
    if tcb_version < 0:
        raise ValueError("tcb_version must be non-negative")
    platform_id = rand(32)
    subjects = CHAIN_SUBJECTS[profile]
    intermediate_keys = signing_keypair_from_seed(rand(32))
    quoting_identity = signing_keypair_from_seed(rand(32))

    def fresh_serial() -> int:
        return int.from_bytes(rand(8), "big") >> 1 | 1

    root_cert = _issue_cert(
        subjects[0], fresh_serial(), vendor_root.public, CertRole.ROOT, vendor_root.private
    )
    intermediate_cert = _issue_cert(
        subjects[1],
        fresh_serial(),
        intermediate_keys.public,
        CertRole.INTERMEDIATE,
        vendor_root.private,
    )
    leaf_cert = _issue_cert(
        subjects[2],
        fresh_serial(),
        quoting_identity.public,
        CertRole.LEAF,
        intermediate_keys.private,
    )
    return Platform(
        id=platform_id,
        profile=profile,
        root=new_root_secret(platform_id, rand=rand),
        tcb_version=tcb_version,
        quoting_identity=quoting_identity,
        cert_chain=CertChain(certs=(root_cert, intermediate_cert, leaf_cert)),
    )


def _domain_identity(
    platform_id: bytes, measurement: Measurement, image: bytes, role: DomainRole | None, vmpl: int
) -> bytes:
    role_byte = {None: 0, DomainRole.AGENT: 1, DomainRole.APP: 2}[role]
    return hash_data(
        b"trust-domain" + platform_id + measurement.digest + image + bytes([role_byte, vmpl])
    )


def _tampered_manifest(manifest: Manifest) -> Manifest:
    first = manifest.components[0]
    payload = bytes([first.payload[0] ^ 0x01]) + first.payload[1:] if first.payload else b"\x01"
    return Manifest(
        components=(ComponentValue(first.name, payload),) + manifest.components[1:],
        profile=manifest.profile,
    )


def _swapped_image(image: bytes) -> bytes:
    return hash_data(b"swapped-image" + image)


def launch_domain(
    platform: Platform,
    manifest: Manifest,
    image: bytes,
    role: DomainRole | None = None,
    vmpl: int = 0,
) -> TrustDomain:
    """Measure the manifest and bring up a trust domain on this platform.

    Deterministic: relaunching with an identical manifest and image yields
    the same measurement, domain identity, and identity keypair. Pending
    platform faults are applied here, modeling a host that tampers with
    launch inputs before the domain comes up.
    """
    if not manifest.components:
        raise EmptyManifestError("cannot launch a domain with an empty manifest")
    if manifest.profile != platform.profile:
        raise ValueError("manifest profile does not match platform profile")
    if platform.profile is PlatformProfile.PROCESS:
        if role is None:
            raise ValueError("process-profile domains need a role")
        vmpl = 0
    else:
        if role is not None:
            raise ValueError("VM-profile domains have no role")
        if not 0 <= vmpl <= 3:
            raise ValueError("vmpl must be in [0, 3]")
    with platform._lock:
        if Fault.TAMPER_MANIFEST in platform.pending_faults:
            manifest = _tampered_manifest(manifest)
        if Fault.SWAP_IMAGE in platform.pending_faults:
            image = _swapped_image(image)
        domain_measurement = measure(manifest)
        domain_id = _domain_identity(platform.id, domain_measurement, image, role, vmpl)
        ctx = DerivationContext(
            measurement=domain_measurement,
            security_version=platform.tcb_version,
            domain_identity=domain_id,
        )
        domain = TrustDomain(
            domain_id=domain_id,
            profile=platform.profile,
            manifest=manifest,
            measurement=domain_measurement,
            ctx=ctx,
            identity_keys=session_keypair(platform.root, ctx),
            image=image,
            vmpl=vmpl,
            role=role,
            platform=platform,
        )
        platform.domains.append(domain)
    return domain


def bind_agent(agent: TrustDomain, app: TrustDomain) -> None:
    """Associate an agent domain with the app domain it fronts."""
    if agent.role is not DomainRole.AGENT or app.role is not DomainRole.APP:
        raise ValueError("bind_agent requires an agent domain and an app domain")
    agent.bound_peer = app


@dataclass(frozen=True)
class Report:
    profile: PlatformProfile
    measurement_digest: bytes
    report_data: bytes
    nonce_echo: bytes
    tcb_version: int
    vmpl: int
    security_version: int

    def canonical_bytes(self) -> bytes:
        """Bit-exact signing target for quotes."""
        return (
            bytes([self.profile.wire_byte])
            + self.measurement_digest
            + self.report_data
            + self.nonce_echo
            + self.tcb_version.to_bytes(8, "big")
            + bytes([self.vmpl])
            + self.security_version.to_bytes(8, "big")
        )


CANONICAL_REPORT_LEN = 1 + 32 + 32 + 32 + 8 + 1 + 8


def report_from_canonical(raw: bytes) -> Report:
    if len(raw) != CANONICAL_REPORT_LEN:
        raise ParseError(f"canonical report must be {CANONICAL_REPORT_LEN} bytes")
    return Report(
        profile=PlatformProfile.from_wire_byte(raw[0]),
        measurement_digest=raw[1:33],
        report_data=raw[33:65],
        nonce_echo=raw[65:97],
        tcb_version=int.from_bytes(raw[97:105], "big"),
        vmpl=raw[105],
        security_version=int.from_bytes(raw[106:114], "big"),
    )


def report_binding(
    profile: PlatformProfile,
    nonce: bytes,
    public_key: bytes,
    image: bytes,
    domain_id: bytes,
    role: DomainRole | None = None,
    agent_public: bytes | None = None,
    agent_image: bytes | None = None,
) -> bytes:
    """Recompute the ReportData preimage from public inputs.

    This is the same rule the prover uses, exposed so the verifier can
    check the binding from values it learned out-of-band.
    """
    if profile is PlatformProfile.PROCESS and role is DomainRole.AGENT:
        if agent_public is None or agent_image is None:
            raise ValueError("agent binding needs the agent's key and image")
        return hash_data(agent_public + public_key + agent_image + image)
    if profile is PlatformProfile.PROCESS:
        return hash_data(nonce + public_key + image)
    if profile is PlatformProfile.VM_TDX:
        return hash_data(public_key + nonce + image)
    return hash_data(public_key + domain_id)


def generate_report(domain: TrustDomain, nonce: bytes) -> Report:
    """Produce a report whose ReportData binds this domain per its profile."""
    if len(nonce) != NONCE_LEN:
        raise BadNonceError(f"nonce must be {NONCE_LEN} bytes, got {len(nonce)}")
    if domain.role is DomainRole.AGENT:
        if domain.bound_peer is None:
            raise ValueError("agent domain has no bound app domain")
        app = domain.bound_peer
        report_data = report_binding(
            domain.profile,
            nonce,
            app.identity_keys.public,
            app.image,
            domain.domain_id,
            role=DomainRole.AGENT,
            agent_public=domain.identity_keys.public,
            agent_image=domain.image,
        )
    else:
        report_data = report_binding(
            domain.profile,
            nonce,
            domain.identity_keys.public,
            domain.image,
            domain.domain_id,
            role=domain.role,
        )
    return Report(
        profile=domain.profile,
        measurement_digest=domain.measurement.digest,
        report_data=report_data,
        nonce_echo=nonce,
        tcb_version=domain.platform.tcb_version,
        vmpl=domain.vmpl,
        security_version=domain.ctx.security_version,
    )


@dataclass(frozen=True)
class Quote:
    report: Report
    signature: bytes
    cert_chain: CertChain


def quote_report(platform: Platform, report: Report) -> Quote:
    """Sign a report with the platform quoting identity and attach the chain."""
    if report.profile != platform.profile or not any(
        d.measurement.digest == report.measurement_digest for d in platform.domains
    ):
        raise ForeignReportError("report does not belong to a domain on this platform")
    signature = sign(platform.quoting_identity.private, report.canonical_bytes())
    return Quote(report=report, signature=signature, cert_chain=platform.cert_chain)


def _flip_bit(raw: bytes, index: int = 0) -> bytes:
    return raw[:index] + bytes([raw[index] ^ 0x01]) + raw[index + 1 :]


def _relaunch(domain: TrustDomain, platform: Platform) -> None:
    domain.measurement = measure(domain.manifest)
    domain.domain_id = _domain_identity(
        platform.id, domain.measurement, domain.image, domain.role, domain.vmpl
    )
    domain.ctx = DerivationContext(
        measurement=domain.measurement,
        security_version=platform.tcb_version,
        domain_identity=domain.domain_id,
    )
    domain.identity_keys = session_keypair(platform.root, domain.ctx)


def inject_fault(
    platform: Platform,
    fault: Fault,
    domain: TrustDomain | None = None,
    tcb_value: int | None = None,
) -> None:
    """Degrade the platform or one domain so its future evidence shows the fault.

    With no target domain, TAMPER_MANIFEST and SWAP_IMAGE become pending
    and hit the next launch; with a domain they re-launch it in place with
    the tampered inputs, recomputing its measurement and keys honestly.
    """
    if not isinstance(fault, Fault):
        raise UnknownFaultError(f"unknown fault {fault!r}")
    with platform._lock:
        if fault is Fault.DOWNGRADE_TCB:
            platform.tcb_version = platform.tcb_version - 1 if tcb_value is None else tcb_value
        elif fault is Fault.REVOKE_LEAF:
            platform.published_revocations.add(platform.cert_chain.leaf.serial)
        elif fault is Fault.BREAK_CHAIN_SIGNATURE:
            broken = Certificate(
                subject=platform.cert_chain.intermediate.subject,
                serial=platform.cert_chain.intermediate.serial,
                public=platform.cert_chain.intermediate.public,
                issuer_signature=_flip_bit(platform.cert_chain.intermediate.issuer_signature),
                role=CertRole.INTERMEDIATE,
            )
            platform.cert_chain = CertChain(
                certs=(platform.cert_chain.root, broken, platform.cert_chain.leaf)
            )
        elif fault is Fault.FORGE_QUOTING_KEY:
            # Fresh key the chain leaf does not certify.
            platform.quoting_identity = signing_keypair_from_seed(secrets.token_bytes(32))
        elif fault is Fault.TAMPER_MANIFEST:
            if domain is None:
                platform.pending_faults.append(fault)
            else:
                domain.manifest = _tampered_manifest(domain.manifest)
                _relaunch(domain, platform)
        elif fault is Fault.SWAP_IMAGE:
            if domain is None:
                platform.pending_faults.append(fault)
            else:
                domain.image = _swapped_image(domain.image)
                _relaunch(domain, platform)


def quote_to_bytes(quote: Quote) -> bytes:
    """Quote wire format: canonical report, signature, then the chain."""
    out = bytearray(quote.report.canonical_bytes())
    out += len(quote.signature).to_bytes(2, "big")
    out += quote.signature
    out.append(len(quote.cert_chain.certs))
    for cert in quote.cert_chain.certs:
        raw_subject = cert.subject.encode("ascii")
        out += len(raw_subject).to_bytes(2, "big")
        out += raw_subject
        out += cert.serial.to_bytes(8, "big")
        out += cert.public
        out += len(cert.issuer_signature).to_bytes(2, "big")
        out += cert.issuer_signature
        out.append(cert.role.value)
    return bytes(out)


def quote_from_bytes(raw: bytes) -> Quote:
    view = memoryview(raw)
    try:
        report = report_from_canonical(bytes(view[:CANONICAL_REPORT_LEN]))
        pos = CANONICAL_REPORT_LEN
        sig_len = int.from_bytes(view[pos : pos + 2], "big")
        pos += 2
        signature = bytes(view[pos : pos + sig_len])
        pos += sig_len
        cert_count = view[pos]
        pos += 1
        certs = []
        for _ in range(cert_count):
            subject_len = int.from_bytes(view[pos : pos + 2], "big")
            pos += 2
            subject = bytes(view[pos : pos + subject_len]).decode("ascii")
            pos += subject_len
            serial = int.from_bytes(view[pos : pos + 8], "big")
            pos += 8
            public = bytes(view[pos : pos + 32])
            pos += 32
            cert_sig_len = int.from_bytes(view[pos : pos + 2], "big")
            pos += 2
            issuer_signature = bytes(view[pos : pos + cert_sig_len])
            pos += cert_sig_len
            role = CertRole(view[pos])
            pos += 1
            certs.append(
                Certificate(
                    subject=subject,
                    serial=serial,
                    public=public,
                    issuer_signature=issuer_signature,
                    role=role,
                )
            )
    except (IndexError, UnicodeDecodeError, ValueError) as exc:
        raise ParseError(f"truncated or corrupt quote: {exc}") from exc
    if pos != len(raw):
        raise ParseError("trailing bytes after quote")
    if len(certs) != 3:
        raise ParseError(f"quote chain must have 3 certificates, got {len(certs)}")
    return Quote(report=report, signature=signature, cert_chain=CertChain(certs=tuple(certs)))
