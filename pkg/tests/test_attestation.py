"""Verifier behavior: chains, quote appraisal, transitive flow, nonces."""

from __future__ import annotations

import secrets

import pytest

from ccplane.attestation import (
    PlatformMetadata,
    Verifier,
    load_metadata,
    save_metadata,
    verify_chain,
    with_published_revocations,
)
from ccplane.errors import ParseError, RoleMismatchError
from ccplane.measurement import (
    ComponentValue,
    Manifest,
    PlatformProfile,
    ReasonCode,
    TrustPolicy,
)
from ccplane.primitives import signing_keypair_from_seed
from ccplane.teesim import (
    CertChain,
    Certificate,
    DomainRole,
    Fault,
    bind_agent,
    create_platform,
    generate_report,
    inject_fault,
    launch_domain,
    quote_report,
)


class Flow:
    """Honest single-domain attestation flow for one profile."""

    def __init__(self, profile: PlatformProfile, tcb: int = 3, vmpl: int = 0):
        self.vendor = signing_keypair_from_seed(secrets.token_bytes(32))
        self.platform = create_platform(profile, tcb, self.vendor)
        names = (
            ("app-code", "config")
            if profile is PlatformProfile.PROCESS
            else ("firmware", "initrd", "kernel", "config")
        )
        self.manifest = Manifest(
            components=tuple(ComponentValue(n, secrets.token_bytes(32)) for n in names),
            profile=profile,
        )
        self.image = secrets.token_bytes(32)
        role = DomainRole.APP if profile is PlatformProfile.PROCESS else None
        self.domain = launch_domain(self.platform, self.manifest, self.image, role=role, vmpl=vmpl)
        self.policy = TrustPolicy(
            trusted_measurements=frozenset({self.domain.measurement.digest}),
            trusted_images=frozenset({self.image}),
            min_tcb_version=1,
        )
        self.meta = PlatformMetadata(
            tcb_floor=1, revoked_serials=frozenset(), vendor_root_public=self.vendor.public
        )
        self.verifier = Verifier()

    def attest(self, verifier=None, request=None, policy=None, meta=None, expected_img=None):
        verifier = verifier or self.verifier
        request = request or verifier.new_request(self.domain.domain_id)
        quote = quote_report(self.platform, generate_report(self.domain, request.nonce))
        return verifier.verify_quote(
            quote,
            request,
            self.domain.identity_keys.public,
            expected_img if expected_img is not None else self.image,
            policy or self.policy,
            meta or self.meta,
        )


class TestVerifyChain:
    def test_honest_chain_passes(self, profile):
        flow = Flow(profile)
        assert verify_chain(flow.platform.cert_chain, flow.meta) is ReasonCode.OK

    def test_revoked_leaf(self):
        flow = Flow(PlatformProfile.VM_SEV)
        meta = PlatformMetadata(
            tcb_floor=1,
            revoked_serials=frozenset({flow.platform.cert_chain.leaf.serial}),
            vendor_root_public=flow.vendor.public,
        )
        assert verify_chain(flow.platform.cert_chain, meta) is ReasonCode.REVOKED_CERT

    def test_flipped_intermediate_signature(self):
        flow = Flow(PlatformProfile.VM_TDX)
        inject_fault(flow.platform, Fault.BREAK_CHAIN_SIGNATURE)
        assert verify_chain(flow.platform.cert_chain, flow.meta) is ReasonCode.BAD_CHAIN

    def test_wrong_vendor_root(self):
        flow = Flow(PlatformProfile.VM_TDX)
        other = signing_keypair_from_seed(secrets.token_bytes(32))
        meta = PlatformMetadata(
            tcb_floor=1, revoked_serials=frozenset(), vendor_root_public=other.public
        )
        assert verify_chain(flow.platform.cert_chain, meta) is ReasonCode.BAD_CHAIN

    def test_published_revocations_merge(self):
        flow = Flow(PlatformProfile.VM_SEV)
        inject_fault(flow.platform, Fault.REVOKE_LEAF)
        merged = with_published_revocations(flow.meta, flow.platform)
        assert verify_chain(flow.platform.cert_chain, merged) is ReasonCode.REVOKED_CERT

    def test_misordered_roles(self):
        flow = Flow(PlatformProfile.VM_TDX)
        certs = flow.platform.cert_chain.certs
        shuffled = CertChain(certs=(certs[1], certs[0], certs[2]))
        assert verify_chain(shuffled, flow.meta) is ReasonCode.BAD_CHAIN


class TestNewRequest:
    def test_nonces_unique(self):
        verifier = Verifier()
        nonces = {verifier.new_request(bytes(32)).nonce for _ in range(10_000)}
        assert len(nonces) == 10_000

    def test_fields(self):
        verifier = Verifier()
        target = secrets.token_bytes(32)
        request = verifier.new_request(target)
        assert request.target_domain_id == target
        assert len(request.nonce) == 32


class TestVerifyQuote:
    def test_honest_accepted(self, profile):
        flow = Flow(profile)
        verdict = flow.attest()
        assert verdict.accepted
        assert verdict.reason is ReasonCode.OK
        assert verdict.attested_public_key == flow.domain.identity_keys.public

    def test_replay_against_fresh_request_is_stale(self, profile):
        flow = Flow(profile)
        first = flow.verifier.new_request(flow.domain.domain_id)
        quote = quote_report(flow.platform, generate_report(flow.domain, first.nonce))
        assert flow.verifier.verify_quote(
            quote, first, flow.domain.identity_keys.public, flow.image, flow.policy, flow.meta
        ).accepted
        fresh = flow.verifier.new_request(flow.domain.domain_id)
        verdict = flow.verifier.verify_quote(
            quote, fresh, flow.domain.identity_keys.public, flow.image, flow.policy, flow.meta
        )
        assert verdict.reason is ReasonCode.STALE_NONCE

    def test_nonce_reuse(self):
        flow = Flow(PlatformProfile.VM_TDX)
        request = flow.verifier.new_request(flow.domain.domain_id)
        assert flow.attest(request=request).accepted
        verdict = flow.attest(request=request)
        assert verdict.reason is ReasonCode.NONCE_REUSE

    def test_expired_request(self):
        now = [0.0]
        verifier = Verifier(nonce_window=300.0, clock=lambda: now[0])
        flow = Flow(PlatformProfile.VM_SEV)
        request = verifier.new_request(flow.domain.domain_id)
        now[0] = 301.0
        verdict = flow.attest(verifier=verifier, request=request)
        assert verdict.reason is ReasonCode.STALE_NONCE

    def test_expected_img_mismatch(self):
        flow = Flow(PlatformProfile.VM_TDX)
        verdict = flow.attest(expected_img=secrets.token_bytes(32))
        assert verdict.reason is ReasonCode.REPORT_DATA_MISMATCH

    def test_tcb_below_policy_floor(self):
        flow = Flow(PlatformProfile.VM_SEV, tcb=0)
        verdict = flow.attest()
        assert verdict.reason is ReasonCode.TCB_BELOW_FLOOR

    def test_vmpl_too_high(self):
        flow = Flow(PlatformProfile.VM_SEV, vmpl=2)
        verdict = flow.attest()
        assert verdict.reason is ReasonCode.VMPL_TOO_HIGH

    def test_unknown_measurement(self):
        flow = Flow(PlatformProfile.VM_TDX)
        policy = TrustPolicy(
            trusted_measurements=frozenset(), trusted_images=frozenset({flow.image}),
            min_tcb_version=1,
        )
        verdict = flow.attest(policy=policy)
        assert verdict.reason is ReasonCode.UNKNOWN_MEASUREMENT

    def test_unknown_image(self):
        flow = Flow(PlatformProfile.VM_SEV)
        policy = TrustPolicy(
            trusted_measurements=frozenset({flow.domain.measurement.digest}),
            trusted_images=frozenset(),
            min_tcb_version=1,
        )
        verdict = flow.attest(policy=policy)
        assert verdict.reason is ReasonCode.UNKNOWN_IMAGE

    def test_bad_signature_from_forged_key(self):
        flow = Flow(PlatformProfile.VM_TDX)
        inject_fault(flow.platform, Fault.FORGE_QUOTING_KEY)
        verdict = flow.attest()
        assert verdict.reason is ReasonCode.BAD_SIGNATURE

    def test_multiple_simultaneous_faults_still_rejected(self):
        # Reason codes depend on check order, but rejection must not.
        import itertools

        faults = [Fault.DOWNGRADE_TCB, Fault.BREAK_CHAIN_SIGNATURE, Fault.FORGE_QUOTING_KEY]
        for ordering in itertools.permutations(faults):
            flow = Flow(PlatformProfile.VM_TDX)
            for fault in ordering:
                inject_fault(flow.platform, fault, tcb_value=0)
            assert not flow.attest().accepted


class TestTransitive:
    def _pair(self):
        vendor_root = signing_keypair_from_seed(secrets.token_bytes(32))
        platform = create_platform(PlatformProfile.PROCESS, 3, vendor_root)
        config = ComponentValue("config", secrets.token_bytes(16))
        agent_manifest = Manifest(
            components=(ComponentValue("agent-code", secrets.token_bytes(40)), config),
            profile=PlatformProfile.PROCESS,
        )
        app_manifest = Manifest(
            components=(ComponentValue("app-code", secrets.token_bytes(40)), config),
            profile=PlatformProfile.PROCESS,
        )
        agent_img, app_img = secrets.token_bytes(32), secrets.token_bytes(32)
        agent = launch_domain(platform, agent_manifest, agent_img, role=DomainRole.AGENT)
        app = launch_domain(platform, app_manifest, app_img, role=DomainRole.APP)
        bind_agent(agent, app)
        policy = TrustPolicy(
            trusted_measurements=frozenset(
                {agent.measurement.digest, app.measurement.digest}
            ),
            trusted_images=frozenset({agent_img, app_img}),
            min_tcb_version=1,
        )
        meta = PlatformMetadata(
            tcb_floor=1, revoked_serials=frozenset(), vendor_root_public=vendor_root.public
        )
        return platform, agent, app, policy, meta

    def test_honest_pair_accepted(self):
        platform, agent, app, policy, meta = self._pair()
        verifier = Verifier()
        request = verifier.new_request(app.domain_id)
        agent_quote = quote_report(platform, generate_report(agent, request.nonce))
        app_quote = quote_report(platform, generate_report(app, request.nonce))
        verdict = verifier.attest_transitive(
            agent_quote,
            app_quote,
            request,
            expected_agent_pk=agent.identity_keys.public,
            expected_app_pk=app.identity_keys.public,
            expected_agent_img=agent.image,
            expected_app_img=app.image,
            policy=policy,
            meta=meta,
        )
        assert verdict.accepted
        assert verdict.attested_public_key == app.identity_keys.public

    def test_swapped_app_binding_rejected(self):
        # Agent's quote binds one specific app; substituting another app's
        # key must surface as a binding mismatch.
        platform, agent, app, policy, meta = self._pair()
        other_app = launch_domain(
            platform,
            Manifest(
                components=(
                    ComponentValue("app-code", secrets.token_bytes(40)),
                    ComponentValue("config", secrets.token_bytes(16)),
                ),
                profile=PlatformProfile.PROCESS,
            ),
            app.image,
            role=DomainRole.APP,
        )
        policy = TrustPolicy(
            trusted_measurements=policy.trusted_measurements
            | {other_app.measurement.digest},
            trusted_images=policy.trusted_images,
            min_tcb_version=policy.min_tcb_version,
        )
        verifier = Verifier()
        request = verifier.new_request(other_app.domain_id)
        agent_quote = quote_report(platform, generate_report(agent, request.nonce))
        swapped_quote = quote_report(platform, generate_report(other_app, request.nonce))
        verdict = verifier.attest_transitive(
            agent_quote,
            swapped_quote,
            request,
            expected_agent_pk=agent.identity_keys.public,
            expected_app_pk=other_app.identity_keys.public,
            expected_agent_img=agent.image,
            expected_app_img=other_app.image,
            policy=policy,
            meta=meta,
        )
        assert verdict.reason is ReasonCode.REPORT_DATA_MISMATCH

    def test_rolled_back_agent_image_rejected(self):
        platform, agent, app, policy, meta = self._pair()
        verifier = Verifier()
        request = verifier.new_request(app.domain_id)
        stale_quote = quote_report(platform, generate_report(agent, request.nonce))
        app_quote = quote_report(platform, generate_report(app, request.nonce))
        current_agent_img = secrets.token_bytes(32)  # agent image has moved on
        policy = TrustPolicy(
            trusted_measurements=policy.trusted_measurements,
            trusted_images=policy.trusted_images | {current_agent_img},
            min_tcb_version=policy.min_tcb_version,
        )
        verdict = verifier.attest_transitive(
            stale_quote,
            app_quote,
            request,
            expected_agent_pk=agent.identity_keys.public,
            expected_app_pk=app.identity_keys.public,
            expected_agent_img=current_agent_img,
            expected_app_img=app.image,
            policy=policy,
            meta=meta,
        )
        assert verdict.reason is ReasonCode.REPORT_DATA_MISMATCH

    def test_wrong_profile_raises(self):
        flow = Flow(PlatformProfile.VM_TDX)
        verifier = Verifier()
        request = verifier.new_request(flow.domain.domain_id)
        quote = quote_report(flow.platform, generate_report(flow.domain, request.nonce))
        with pytest.raises(RoleMismatchError):
            verifier.attest_transitive(
                quote, quote, request,
                expected_agent_pk=bytes(32), expected_app_pk=bytes(32),
                expected_agent_img=bytes(32), expected_app_img=bytes(32),
                policy=flow.policy, meta=flow.meta,
            )


class TestMetadataDocuments:
    def test_roundtrip(self):
        meta = PlatformMetadata(
            tcb_floor=4,
            revoked_serials=frozenset({5, 77}),
            vendor_root_public=secrets.token_bytes(32),
        )
        assert load_metadata(save_metadata(meta)) == meta

    def test_missing_vendor_root(self):
        with pytest.raises(ParseError):
            load_metadata(b'{"version":1,"tcb_floor":0,"revoked_serials":[]}')

    def test_empty_revocations_valid(self):
        doc = '{"version":1,"tcb_floor":0,"revoked_serials":[],"vendor_root_public":"%s"}' % (
            "ab" * 32
        )
        meta = load_metadata(doc.encode())
        assert meta.revoked_serials == frozenset()
