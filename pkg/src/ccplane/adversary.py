"""Scripted host-root adversary and the threat-to-defense matrix.

Each scenario exercises one threat class against a fresh, isolated
deployment context and records the first defensive signal plus whether
any sentinel secret ever crossed an untrusted surface. Memory disclosure
cannot be modeled as raw DRAM reads here; its observable analogue is an
attacker that captures every byte handed to transports and persisted
files and checks for sentinel plaintext. Misconfiguration maps to the
TCB audit: the trusted set must carry no auxiliary host services.

The matrix runs the built-in library for every requested profile and is
reproducible byte-for-byte under a fixed seed.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

from . import channel as chan
from .attestation import PlatformMetadata, Verifier
from .ccm import (
    DeploymentSpec,
    Manager,
    Workload,
    agent_image_digest,
    expected_measurements,
    policy_for_spec,
)
from .errors import (
    AttestationRejectedError,
    CcplaneError,
    ChannelError,
    ScenarioSetupError,
)
from .measurement import ComponentValue, Manifest, PlatformProfile, TrustPolicy
from .primitives import KeyPair, hash_data, signing_keypair_from_seed
from .rng import seeded_rand
from .teesim import (
    DomainRole,
    Fault,
    Platform,
    bind_agent,
    create_platform,
    generate_report,
    inject_fault,
    launch_domain,
    quote_report,
)

AUXILIARY_SERVICES = frozenset(
    {"container-engine", "host-agent", "init-system", "package-manager", "container-daemon"}
)


class ThreatClass(enum.Enum):
    MEMORY_DISCLOSURE = "MemoryDisclosure"
    CODE_TAMPER = "CodeTamper"
    CROSS_CONTAINER_LATERAL = "CrossContainerLateral"
    VMM_INTERFERENCE = "VmmInterference"
    MISCONFIG = "Misconfig"
    REPLAY = "Replay"
    ROLLBACK = "Rollback"
    CHAIN_BREAK = "ChainBreak"
    TCB_DOWNGRADE = "TcbDowngrade"


class RecordingTransport(chan.Transport):
    """Tap that captures every byte the host side sends or receives."""

    def __init__(self, inner: chan.Transport, log: list[bytes]):
        self._inner = inner
        self.log = log
        self.sent_frames: list[bytes] = []

    def send_all(self, data: bytes) -> None:
        self.log.append(bytes(data))
        self.sent_frames.append(bytes(data))
        self._inner.send_all(data)

    def recv_exact(self, n: int) -> bytes:
        data = self._inner.recv_exact(n)
        self.log.append(bytes(data))
        return data

    def close(self) -> None:
        self._inner.close()


class TamperingTransport(RecordingTransport):
    """Tap that flips one ciphertext bit in a chosen outbound frame."""

    def __init__(self, inner: chan.Transport, log: list[bytes]):
        super().__init__(inner, log)
        self.armed = False

    def send_all(self, data: bytes) -> None:
        if self.armed and len(data) > 40:
            # Flip a bit beyond the header so the outer MAC check trips.
            index = len(data) - 40
            data = data[:index] + bytes([data[index] ^ 0x01]) + data[index + 1 :]
            self.armed = False
        super().send_all(data)


@dataclass
class AttackContext:
    """Fresh isolated deployment material for one scenario run."""

    profile: PlatformProfile
    rand: object
    vendor_root: KeyPair
    platform: Platform
    spec: DeploymentSpec
    policy: TrustPolicy
    meta: PlatformMetadata
    manager: Manager
    sentinel: bytes
    observed_bytes: list[bytes] = field(default_factory=list)
    host_taps: list[RecordingTransport] = field(default_factory=list)


@dataclass(frozen=True)
class Outcome:
    scenario: str
    threat_class: ThreatClass
    profile: PlatformProfile
    expected_defense: str
    observed: str
    leaked: bool
    passed: bool


@dataclass(frozen=True)
class AttackScenario:
    name: str
    threat_class: ThreatClass
    expected_defense: str
    run: object  # callable(AttackContext) -> str, the observed signal

    def expected_for(self, profile: PlatformProfile) -> str:
        if isinstance(self.expected_defense, dict):
            return self.expected_defense[profile]
        return self.expected_defense


def _spec_for(profile: PlatformProfile, rand, secret_value: bytes) -> DeploymentSpec:
    if profile is PlatformProfile.PROCESS:
        names = ("agent-code", "app-code", "config")
    else:
        names = ("firmware", "initrd", "kernel", "config")
    components = tuple(ComponentValue(name=n, payload=rand(64)) for n in names)
    return DeploymentSpec(
        name=f"attack-target-{profile.value}",
        profile=profile,
        image=rand(32),
        boot_artifacts=Manifest(components=components, profile=profile),
        workload=Workload.SHORT_TERM,
        secrets=(("sentinel", secret_value),),
        policy_path="attack-policy",
        require_transitive=False,
    )


def build_context(
    profile: PlatformProfile, rand, tamper: bool = False
) -> AttackContext:
    """Stand up one isolated platform, spec, policy, and tapped manager."""
    try:
        sentinel = rand(64)
        vendor_root = signing_keypair_from_seed(rand(32))
        platform = create_platform(profile, tcb_version=3, vendor_root=vendor_root, rand=rand)
        spec = _spec_for(profile, rand, sentinel)
        policy = policy_for_spec(spec, min_tcb_version=1)
        meta = PlatformMetadata(
            tcb_floor=1, revoked_serials=frozenset(), vendor_root_public=vendor_root.public
        )
    except CcplaneError as exc:
        raise ScenarioSetupError(str(exc)) from exc

    observed: list[bytes] = []
    taps: list[RecordingTransport] = []

    def hook(transport: chan.Transport, side: str) -> chan.Transport:
        if side != "host":
            return transport
        tap = TamperingTransport(transport, observed) if tamper else RecordingTransport(
            transport, observed
        )
        taps.append(tap)
        return tap

    manager = Manager(verifier=Verifier(rand=rand), rand=rand, transport_hook=hook)
    return AttackContext(
        profile=profile,
        rand=rand,
        vendor_root=vendor_root,
        platform=platform,
        spec=spec,
        policy=policy,
        meta=meta,
        manager=manager,
        sentinel=sentinel,
        observed_bytes=observed,
        host_taps=taps,
    )


def _signal_of(exc: CcplaneError) -> str:
    if isinstance(exc, AttestationRejectedError):
        return exc.reason.value
    return type(exc).__name__.removesuffix("Error")


# -- scenario bodies -------------------------------------------------------


def _run_memory_disclosure(ctx: AttackContext) -> str:
    container = ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    probe = ctx.rand(48)
    ctx.manager.exec_workload(container, probe)
    surface = b"".join(ctx.observed_bytes)
    if ctx.sentinel in surface or probe in surface:
        return "plaintext-exposed"
    return "no-plaintext-leak"


def _run_code_tamper(ctx: AttackContext) -> str:
    inject_fault(ctx.platform, Fault.TAMPER_MANIFEST)
    try:
        ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    except CcplaneError as exc:
        return _signal_of(exc)
    return "undetected"


def _run_cross_container_lateral(ctx: AttackContext) -> str:
    victim_rand = seeded_rand(int.from_bytes(ctx.rand(8), "big"))
    bystander_ctx = build_context(ctx.profile, victim_rand)
    bystander = bystander_ctx.manager.deploy(
        bystander_ctx.spec, bystander_ctx.platform, bystander_ctx.policy, bystander_ctx.meta
    )
    before = bystander.state_fingerprint()
    target = ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    inject_fault(ctx.platform, Fault.TAMPER_MANIFEST, domain=target.domain)
    try:
        ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    except AttestationRejectedError:
        pass
    after = bystander.state_fingerprint()
    if before != after:
        return "spread"
    out = bystander_ctx.manager.exec_workload(bystander, b"still-alive")
    if out != hash_data(b"still-alive") + b"still-alive":
        return "spread"
    return "contained"


def _run_vmm_interference(ctx: AttackContext) -> str:
    container = ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    for tap in ctx.host_taps:
        if isinstance(tap, TamperingTransport):
            tap.armed = True
    try:
        ctx.manager.exec_workload(container, b"interfere-with-me")
    except ChannelError as exc:
        return _signal_of(exc)
    return "undetected"


def _run_misconfig(ctx: AttackContext) -> str:
    audit = ctx.manager.tcb_audit(ctx.spec).tee_in_container
    if audit.trusted_components & AUXILIARY_SERVICES:
        return "auxiliary-in-tcb"
    return "minimal-tcb"


def _run_replay(ctx: AttackContext) -> str:
    container = ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    ctx.manager.exec_workload(container, b"replay-target")
    tap = ctx.host_taps[0]
    captured = tap.sent_frames[-1]  # the host-to-domain exec frame
    tap.send_all(captured)
    try:
        container.domain_channel.recv()
    except ChannelError as exc:
        return _signal_of(exc)
    return "undetected"


def _run_rollback(ctx: AttackContext) -> str:
    if ctx.profile is PlatformProfile.PROCESS:
        return _run_rollback_process(ctx)
    return _run_rollback_vm(ctx)


def _run_rollback_process(ctx: AttackContext) -> str:
    # Present an agent quote bound to a superseded agent image.
    by_name = {c.name: c for c in ctx.spec.boot_artifacts.components}
    old_agent_code = ComponentValue("agent-code", ctx.rand(64))
    old_manifest = Manifest(
        components=(old_agent_code, by_name["config"]), profile=PlatformProfile.PROCESS
    )
    app_manifest = Manifest(
        components=(by_name["app-code"], by_name["config"]), profile=PlatformProfile.PROCESS
    )
    old_agent = launch_domain(
        ctx.platform, old_manifest, hash_data(old_agent_code.payload), role=DomainRole.AGENT
    )
    app = launch_domain(ctx.platform, app_manifest, ctx.spec.image, role=DomainRole.APP)
    bind_agent(old_agent, app)
    verifier = ctx.manager.verifier
    request = verifier.new_request(app.domain_id)
    stale_agent_quote = quote_report(ctx.platform, generate_report(old_agent, request.nonce))
    app_quote = quote_report(ctx.platform, generate_report(app, request.nonce))
    current_agent_img = agent_image_digest(ctx.spec)
    measurements = expected_measurements(ctx.spec)
    policy = TrustPolicy(
        trusted_measurements=ctx.policy.trusted_measurements
        | {old_agent.measurement.digest, measurements["workload"].digest},
        trusted_images=ctx.policy.trusted_images | {hash_data(old_agent_code.payload)},
        min_tcb_version=ctx.policy.min_tcb_version,
    )
    verdict = verifier.attest_transitive(
        stale_agent_quote,
        app_quote,
        request,
        expected_agent_pk=old_agent.identity_keys.public,
        expected_app_pk=app.identity_keys.public,
        expected_agent_img=current_agent_img,
        expected_app_img=ctx.spec.image,
        policy=policy,
        meta=ctx.meta,
    )
    return verdict.reason.value if not verdict.accepted else "undetected"


def _run_rollback_vm(ctx: AttackContext) -> str:
    # Launch from a superseded image while policy trusts only the current one.
    old_image = ctx.rand(32)
    domain = launch_domain(ctx.platform, ctx.spec.boot_artifacts, old_image)
    verifier = ctx.manager.verifier
    request = verifier.new_request(domain.domain_id)
    quote = quote_report(ctx.platform, generate_report(domain, request.nonce))
    expected_img = domain.image if ctx.profile is PlatformProfile.VM_SEV else ctx.spec.image
    verdict = verifier.verify_quote(
        quote, request, domain.identity_keys.public, expected_img, ctx.policy, ctx.meta
    )
    return verdict.reason.value if not verdict.accepted else "undetected"


def _run_chain_break(ctx: AttackContext) -> str:
    inject_fault(ctx.platform, Fault.BREAK_CHAIN_SIGNATURE)
    try:
        ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    except CcplaneError as exc:
        return _signal_of(exc)
    return "undetected"


def _run_tcb_downgrade(ctx: AttackContext) -> str:
    inject_fault(ctx.platform, Fault.DOWNGRADE_TCB, tcb_value=ctx.policy.min_tcb_version - 1)
    try:
        ctx.manager.deploy(ctx.spec, ctx.platform, ctx.policy, ctx.meta)
    except CcplaneError as exc:
        return _signal_of(exc)
    return "undetected"


SCENARIOS: tuple[AttackScenario, ...] = (
    AttackScenario(
        name="memory-disclosure",
        threat_class=ThreatClass.MEMORY_DISCLOSURE,
        expected_defense="no-plaintext-leak",
        run=_run_memory_disclosure,
    ),
    AttackScenario(
        name="code-tamper",
        threat_class=ThreatClass.CODE_TAMPER,
        expected_defense="UnknownMeasurement",
        run=_run_code_tamper,
    ),
    AttackScenario(
        name="cross-container-lateral",
        threat_class=ThreatClass.CROSS_CONTAINER_LATERAL,
        expected_defense="contained",
        run=_run_cross_container_lateral,
    ),
    AttackScenario(
        name="vmm-interference",
        threat_class=ThreatClass.VMM_INTERFERENCE,
        expected_defense="MacFailure",
        run=_run_vmm_interference,
    ),
    AttackScenario(
        name="misconfig",
        threat_class=ThreatClass.MISCONFIG,
        expected_defense="minimal-tcb",
        run=_run_misconfig,
    ),
    AttackScenario(
        name="replay",
        threat_class=ThreatClass.REPLAY,
        expected_defense="ReplayOrGap",
        run=_run_replay,
    ),
    AttackScenario(
        name="rollback",
        threat_class=ThreatClass.ROLLBACK,
        expected_defense={
            PlatformProfile.PROCESS: "ReportDataMismatch",
            PlatformProfile.VM_TDX: "ReportDataMismatch",
            PlatformProfile.VM_SEV: "UnknownImage",
        },
        run=_run_rollback,
    ),
    AttackScenario(
        name="chain-break",
        threat_class=ThreatClass.CHAIN_BREAK,
        expected_defense="BadChain",
        run=_run_chain_break,
    ),
    AttackScenario(
        name="tcb-downgrade",
        threat_class=ThreatClass.TCB_DOWNGRADE,
        expected_defense="TcbBelowFloor",
        run=_run_tcb_downgrade,
    ),
)


def _leak_check(ctx: AttackContext) -> bool:
    surface = b"".join(ctx.observed_bytes)
    if ctx.sentinel in surface:
        return True
    # Gating check: no secret may sit in a domain that was never accepted.
    for container in ctx.manager.containers.values():
        if container.domain_secrets and (
            container.verdict is None or not container.verdict.accepted
        ):
            return True
    return False


def run_scenario(
    scenario: AttackScenario, profile: PlatformProfile, seed: int = 0
) -> Outcome:
    """Execute one scenario in a fresh context and grade the outcome."""
    rand = seeded_rand(seed, stream=f"{scenario.name}:{profile.value}".encode())
    tamper = scenario.threat_class is ThreatClass.VMM_INTERFERENCE
    ctx = build_context(profile, rand, tamper=tamper)
    observed = scenario.run(ctx)
    leaked = _leak_check(ctx)
    expected = scenario.expected_for(profile)
    return Outcome(
        scenario=scenario.name,
        threat_class=scenario.threat_class,
        profile=profile,
        expected_defense=expected,
        observed=observed,
        leaked=leaked,
        passed=(observed == expected) and not leaked,
    )


@dataclass(frozen=True)
class MatrixReport:
    seed: int
    outcomes: tuple[Outcome, ...]

    @property
    def all_passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    def to_json(self) -> str:
        cells = [
            {
                "scenario": o.scenario,
                "threat_class": o.threat_class.value,
                "profile": o.profile.value,
                "expected": o.expected_defense,
                "observed": o.observed,
                "leaked": o.leaked,
                "passed": o.passed,
            }
            for o in self.outcomes
        ]
        return json.dumps(
            {
                "seed": self.seed,
                "cells": cells,
                "total": len(cells),
                "passed": sum(1 for o in self.outcomes if o.passed),
            },
            indent=2,
            sort_keys=True,
        )

    def to_text(self) -> str:
        header = f"{'scenario':<26}{'profile':<10}{'expected':<22}{'observed':<22}{'result':<8}"
        lines = [header, "-" * len(header)]
        for o in self.outcomes:
            lines.append(
                f"{o.scenario:<26}{o.profile.value:<10}{o.expected_defense:<22}"
                f"{o.observed:<22}{'pass' if o.passed else 'FAIL':<8}"
            )
        lines.append(
            f"{sum(1 for o in self.outcomes if o.passed)}/{len(self.outcomes)} cells passed"
        )
        return "\n".join(lines)


def run_matrix(profiles: list[PlatformProfile], seed: int = 0) -> MatrixReport:
    """Run the full scenario library over each profile."""
    outcomes = []
    for profile in profiles:
        for scenario in SCENARIOS:
            outcomes.append(run_scenario(scenario, profile, seed=seed))
    return MatrixReport(seed=seed, outcomes=tuple(outcomes))
