"""Verifier side of remote attestation.

A Verifier owns the nonce lifecycle (fresh, single-use, expiring) and
appraises quotes against a trust policy plus locally cached platform
metadata (vendor root, TCB floor, certificate revocations). Checks run in
a fixed order so the reason code of a rejection is deterministic:

  1. certificate chain (root match, signatures leaf-up, revocation)
  2. quote signature over the canonical report bytes
  3. nonce freshness and single use
  4. TCB floor
  5. VMPL cap
  6. ReportData binding recomputed from expected values
  7. trust-set membership (measurement, then image)

A quote failing several checks is rejected either way; the order only
pins which reason is surfaced. The transitive flow additionally validates
an agent quote whose ReportData binds the agent to one specific app
domain, so a swapped app or a rolled-back agent image shows up as a
binding mismatch.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass

from .errors import ParseError, RoleMismatchError
from .measurement import PlatformProfile, ReasonCode, TrustPolicy
from .primitives import verify
from .teesim import (
    NONCE_LEN,
    CertChain,
    CertRole,
    DomainRole,
    Platform,
    Quote,
    report_binding,
)

METADATA_VERSION = 1
DEFAULT_NONCE_WINDOW_SECONDS = 300.0


@dataclass(frozen=True)
class AttestationRequest:
    nonce: bytes
    issued_at: float
    target_domain_id: bytes


@dataclass(frozen=True)
class PlatformMetadata:
    """Locally cached platform trust data consulted during verification."""

    tcb_floor: int
    revoked_serials: frozenset[int]
    vendor_root_public: bytes


def with_published_revocations(meta: PlatformMetadata, platform: Platform) -> PlatformMetadata:
    """Merge the vendor's current revocations for this platform.

    Models the metadata-service fetch verifiers do before appraisal; a
    platform whose leaf was revoked after the metadata file was written is
    still caught.
    """
    if not platform.published_revocations:
        return meta
    return PlatformMetadata(
        tcb_floor=meta.tcb_floor,
        revoked_serials=meta.revoked_serials | frozenset(platform.published_revocations),
        vendor_root_public=meta.vendor_root_public,
    )


@dataclass(frozen=True)
class Verdict:
    result: str  # "ACCEPTED" or "REJECTED"
    reason: ReasonCode
    attested_public_key: bytes | None = None

    @property
    def accepted(self) -> bool:
        return self.result == "ACCEPTED"


def _accept(public_key: bytes) -> Verdict:
    return Verdict(result="ACCEPTED", reason=ReasonCode.OK, attested_public_key=public_key)


def _reject(reason: ReasonCode) -> Verdict:
    return Verdict(result="REJECTED", reason=reason)


def verify_chain(chain: CertChain, meta: PlatformMetadata) -> ReasonCode:
    """Appraise a quoting chain; OK or the first failing reason.

    Order: root anchor match, link signatures leaf-up, then revocation.
    """
    root, intermediate, leaf = chain.certs
    if (
        root.role is not CertRole.ROOT
        or intermediate.role is not CertRole.INTERMEDIATE
        or leaf.role is not CertRole.LEAF
    ):
        return ReasonCode.BAD_CHAIN
    if root.public != meta.vendor_root_public:
        return ReasonCode.BAD_CHAIN
    if not verify(intermediate.public, leaf.signing_preimage(), leaf.issuer_signature):
        return ReasonCode.BAD_CHAIN
    if not verify(root.public, intermediate.signing_preimage(), intermediate.issuer_signature):
        return ReasonCode.BAD_CHAIN
    if not verify(root.public, root.signing_preimage(), root.issuer_signature):
        return ReasonCode.BAD_CHAIN
    for cert in chain.certs:
        if cert.serial in meta.revoked_serials:
            return ReasonCode.REVOKED_CERT
    return ReasonCode.OK


class Verifier:
    """Stateful verifier: nonce table plus the appraisal procedures."""

    def __init__(
        self,
        nonce_window: float = DEFAULT_NONCE_WINDOW_SECONDS,
        clock=time.monotonic,
        rand=secrets.token_bytes,
    ):
        self._nonce_window = nonce_window
        self._clock = clock
        self._rand = rand
        self._lock = threading.Lock()
        self._issued: dict[bytes, AttestationRequest] = {}
        self._consumed: set[bytes] = set()

    def new_request(self, target_domain_id: bytes) -> AttestationRequest:
        """Issue a fresh single-use challenge for one target domain."""
        with self._lock:
            while True:
                nonce = self._rand(NONCE_LEN)
                if nonce not in self._issued:
                    break
            request = AttestationRequest(
                nonce=nonce, issued_at=self._clock(), target_domain_id=target_domain_id
            )
            self._issued[nonce] = request
            return request

    def _check_freshness(self, request: AttestationRequest, nonce_echo: bytes) -> ReasonCode:
        with self._lock:
            if request.nonce in self._consumed:
                return ReasonCode.NONCE_REUSE
            if nonce_echo != request.nonce:
                return ReasonCode.STALE_NONCE
            if self._clock() - request.issued_at > self._nonce_window:
                return ReasonCode.STALE_NONCE
            self._consumed.add(request.nonce)
            return ReasonCode.OK

    def _appraise(
        self,
        quote: Quote,
        nonce: bytes,
        expected_pk: bytes,
        expected_img: bytes,
        domain_id: bytes,
        policy: TrustPolicy,
        meta: PlatformMetadata,
        role: DomainRole | None = None,
        agent_public: bytes | None = None,
        agent_image: bytes | None = None,
    ) -> ReasonCode:
        """All quote checks except nonce consumption, in the fixed order."""
        chain_verdict = verify_chain(quote.cert_chain, meta)
        if chain_verdict is not ReasonCode.OK:
            return chain_verdict
        if not verify(
            quote.cert_chain.leaf.public, quote.report.canonical_bytes(), quote.signature
        ):
            return ReasonCode.BAD_SIGNATURE
        if quote.report.nonce_echo != nonce:
            return ReasonCode.STALE_NONCE
        if quote.report.tcb_version < policy.min_tcb_version:
            return ReasonCode.TCB_BELOW_FLOOR
        if quote.report.tcb_version < meta.tcb_floor:
            return ReasonCode.TCB_BELOW_FLOOR
        if quote.report.vmpl > policy.min_vmpl_allowed:
            return ReasonCode.VMPL_TOO_HIGH
        expected_rd = report_binding(
            quote.report.profile,
            nonce,
            expected_pk,
            expected_img,
            domain_id,
            role=role,
            agent_public=agent_public,
            agent_image=agent_image,
        )
        if quote.report.report_data != expected_rd:
            return ReasonCode.REPORT_DATA_MISMATCH
        if quote.report.measurement_digest not in policy.trusted_measurements:
            return ReasonCode.UNKNOWN_MEASUREMENT
        if expected_img not in policy.trusted_images:
            return ReasonCode.UNKNOWN_IMAGE
        return ReasonCode.OK

    def verify_quote(
        self,
        quote: Quote,
        request: AttestationRequest,
        expected_pk: bytes,
        expected_img: bytes,
        policy: TrustPolicy,
        meta: PlatformMetadata,
    ) -> Verdict:
        """Appraise a single quote against one unconsumed request."""
        chain_verdict = verify_chain(quote.cert_chain, meta)
        if chain_verdict is not ReasonCode.OK:
            return _reject(chain_verdict)
        if not verify(
            quote.cert_chain.leaf.public, quote.report.canonical_bytes(), quote.signature
        ):
            return _reject(ReasonCode.BAD_SIGNATURE)
        freshness = self._check_freshness(request, quote.report.nonce_echo)
        if freshness is not ReasonCode.OK:
            return _reject(freshness)
        outcome = self._appraise(
            quote,
            request.nonce,
            expected_pk,
            expected_img,
            request.target_domain_id,
            policy,
            meta,
        )
        if outcome is not ReasonCode.OK:
            return _reject(outcome)
        return _accept(expected_pk)

    def attest_transitive(
        self,
        agent_quote: Quote,
        app_quote: Quote,
        request: AttestationRequest,
        expected_agent_pk: bytes,
        expected_app_pk: bytes,
        expected_agent_img: bytes,
        expected_app_img: bytes,
        policy: TrustPolicy,
        meta: PlatformMetadata,
    ) -> Verdict:
        """Validate an app quote through its fronting agent.

        The agent's ReportData must bind all four expected values, which
        pins the agent to this exact app identity and image lineage.
        """
        if (
            agent_quote.report.profile is not PlatformProfile.PROCESS
            or app_quote.report.profile is not PlatformProfile.PROCESS
        ):
            raise RoleMismatchError("transitive attestation needs two process-profile quotes")
        app_verdict = self.verify_quote(
            app_quote, request, expected_app_pk, expected_app_img, policy, meta
        )
        if not app_verdict.accepted:
            return app_verdict
        agent_outcome = self._appraise(
            agent_quote,
            request.nonce,
            expected_app_pk,
            expected_app_img,
            request.target_domain_id,
            policy,
            meta,
            role=DomainRole.AGENT,
            agent_public=expected_agent_pk,
            agent_image=expected_agent_img,
        )
        if agent_outcome is not ReasonCode.OK:
            return _reject(agent_outcome)
        if expected_agent_img not in policy.trusted_images:
            return _reject(ReasonCode.UNKNOWN_IMAGE)
        return _accept(expected_app_pk)


def load_metadata(document: bytes) -> PlatformMetadata:
    """Parse the versioned JSON metadata document."""
    try:
        obj = json.loads(document.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"metadata is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("metadata root must be an object")
    if obj.get("version") != METADATA_VERSION:
        raise ParseError(f"unsupported metadata version {obj.get('version')!r}", field="version")
    if "vendor_root_public" not in obj:
        raise ParseError("missing required key", field="vendor_root_public")
    if not isinstance(obj.get("tcb_floor"), int):
        raise ParseError("must be an integer", field="tcb_floor")
    serials = obj.get("revoked_serials", [])
    if not isinstance(serials, list) or not all(isinstance(s, int) for s in serials):
        raise ParseError("must be a list of integers", field="revoked_serials")
    try:
        vendor_root = bytes.fromhex(obj["vendor_root_public"])
    except (TypeError, ValueError):
        raise ParseError("invalid hex", field="vendor_root_public") from None
    if len(vendor_root) != 32:
        raise ParseError("must be 32 bytes of hex", field="vendor_root_public")
    return PlatformMetadata(
        tcb_floor=obj["tcb_floor"],
        revoked_serials=frozenset(serials),
        vendor_root_public=vendor_root,
    )


def save_metadata(meta: PlatformMetadata) -> bytes:
    obj = {
        "version": METADATA_VERSION,
        "tcb_floor": meta.tcb_floor,
        "revoked_serials": sorted(meta.revoked_serials),
        "vendor_root_public": meta.vendor_root_public.hex(),
    }
    return json.dumps(obj, indent=2, sort_keys=True).encode("utf-8") + b"\n"
