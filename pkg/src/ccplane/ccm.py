"""Confidential container manager: lifecycle orchestration.

Parses deployment specs, boots a per-container trust domain through the
measured pipeline (firmware, initrd, kernel, config for VM profiles; an
agent and an app enclave for the process profile), gates every secret on
an ACCEPTED attestation verdict, provisions over the attested secure
channel, and runs the workload stub. The manager itself, the simulated
container engine, and the transport all stay outside the trusted set;
the TCB audit makes that boundary explicit and contrasts it with a
container-in-TEE layout where the engine and host agent would be
measured into the trusted domain.

The in-domain workload is a deterministic stub: for input ``x`` it
returns ``sha256(x) || x``, which keeps end-to-end flows assertable.
"""

from __future__ import annotations

import enum
import json
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import channel as chan
from .attestation import (
    PlatformMetadata,
    Verdict,
    Verifier,
    with_published_revocations,
)
from .errors import (
    AttestationRejectedError,
    BootFailureError,
    ChannelError,
    InvalidSpecError,
    NotRunningError,
    ParseError,
    RootfsUnsealFailureError,
    SealFailureError,
)
from .keyhier import SealedBlob, unseal
from .measurement import (
    ComponentValue,
    Manifest,
    PlatformProfile,
    TrustPolicy,
    extend,
    measure,
)
from .primitives import exchange_keypair_from_seed, hash_data
from .teesim import (
    DomainRole,
    Platform,
    TrustDomain,
    bind_agent,
    generate_report,
    launch_domain,
    quote_report,
)

SPEC_VERSION = 1

VM_BOOT_ORDER = ("firmware", "initrd", "kernel", "config")
PROCESS_ARTIFACTS = ("agent-code", "app-code", "config")

# Synthetic footprints for components a container-in-TEE design would pull
# into the trusted domain; used only by the comparison audit.
SIM_CONTAINER_ENGINE_BYTES = 48 << 20
SIM_HOST_AGENT_BYTES = 6 << 20

UNTRUSTED_COMPONENTS = frozenset({"container-engine", "host-agent", "transport", "verifier"})

_MSG_SECRET = 0x01
_MSG_PROVISION_DONE = 0x02
_MSG_EXEC_INPUT = 0x03
_MSG_EXEC_OUTPUT = 0x04


class Workload(enum.Enum):
    SHORT_TERM = "short"
    LONG_TERM = "long"


class ContainerState(enum.Enum):
    CREATED = "Created"
    BOOTING = "Booting"
    ATTESTING = "Attesting"
    PROVISIONED = "Provisioned"
    RUNNING = "Running"
    STOPPED = "Stopped"
    FAILED = "Failed"


_TRANSITIONS = {
    ContainerState.CREATED: {ContainerState.BOOTING, ContainerState.FAILED},
    ContainerState.BOOTING: {ContainerState.ATTESTING, ContainerState.FAILED},
    ContainerState.ATTESTING: {ContainerState.PROVISIONED, ContainerState.FAILED},
    ContainerState.PROVISIONED: {ContainerState.RUNNING, ContainerState.FAILED},
    ContainerState.RUNNING: {ContainerState.STOPPED, ContainerState.FAILED},
    ContainerState.STOPPED: set(),
    ContainerState.FAILED: set(),
}


@dataclass(frozen=True)
class DeploymentSpec:
    """Everything needed to deploy one confidential container."""

    name: str
    profile: PlatformProfile
    image: bytes
    boot_artifacts: Manifest
    workload: Workload = Workload.SHORT_TERM
    encrypted_rootfs: bytes | None = None
    secrets: tuple[tuple[str, bytes], ...] = ()
    policy_path: str | None = None
    metadata_path: str | None = None
    require_transitive: bool = False

    def __post_init__(self):
        if len(self.image) != 32:
            raise InvalidSpecError("image", "image digest must be 32 bytes")
        if self.workload is Workload.LONG_TERM and self.encrypted_rootfs is None:
            raise InvalidSpecError("encrypted_rootfs", "long-term workloads need a sealed rootfs")
        if self.secrets and not self.policy_path:
            raise InvalidSpecError("policy_path", "secrets require a trust policy")
        if self.require_transitive and self.profile is not PlatformProfile.PROCESS:
            raise InvalidSpecError(
                "require_transitive", "transitive attestation only applies to the process profile"
            )
        names = set(self.boot_artifacts.names())
        required = (
            set(PROCESS_ARTIFACTS)
            if self.profile is PlatformProfile.PROCESS
            else set(VM_BOOT_ORDER)
        )
        if names != required:
            raise InvalidSpecError(
                "boot_artifacts",
                f"profile {self.profile.value} needs artifacts {sorted(required)}, got {sorted(names)}",
            )


def parse_spec(document: bytes, base_dir: Path | str | None = None) -> DeploymentSpec:
    """Parse the deployment spec JSON; artifact paths are read as raw bytes.

    Relative paths resolve against ``base_dir`` (normally the directory
    containing the spec file).
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        obj = json.loads(document.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"deployment spec is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("deployment spec root must be an object")
    if obj.get("version") != SPEC_VERSION:
        raise ParseError(f"unsupported spec version {obj.get('version')!r}", field="version")
    for required in ("name", "profile", "image", "boot_artifacts", "workload"):
        if required not in obj:
            raise ParseError("missing required key", field=required)
    profile = PlatformProfile.from_string(obj["profile"])
    try:
        image = bytes.fromhex(obj["image"])
    except (TypeError, ValueError):
        raise ParseError("invalid hex", field="image") from None
    if len(image) != 32:
        raise ParseError("image digest must be 64 hex chars", field="image")
    try:
        workload = Workload(obj["workload"])
    except ValueError:
        raise ParseError(f"unknown workload {obj['workload']!r}", field="workload") from None

    if not isinstance(obj["boot_artifacts"], list) or not obj["boot_artifacts"]:
        raise ParseError("must be a non-empty list", field="boot_artifacts")
    components = []
    for entry in obj["boot_artifacts"]:
        if not isinstance(entry, dict) or "name" not in entry or "path" not in entry:
            raise ParseError("each artifact needs name and path", field="boot_artifacts")
        path = base / entry["path"]
        try:
            payload = path.read_bytes()
        except OSError as exc:
            raise ParseError(f"cannot read artifact: {exc}", field="boot_artifacts") from exc
        components.append(ComponentValue(name=entry["name"], payload=payload))

    rootfs = None
    if obj.get("encrypted_rootfs"):
        try:
            rootfs = (base / obj["encrypted_rootfs"]).read_bytes()
        except OSError as exc:
            raise ParseError(f"cannot read rootfs: {exc}", field="encrypted_rootfs") from exc

    secrets_list = []
    for entry in obj.get("secrets", []):
        if not isinstance(entry, dict) or "name" not in entry or "hex" not in entry:
            raise ParseError("each secret needs name and hex", field="secrets")
        try:
            secrets_list.append((entry["name"], bytes.fromhex(entry["hex"])))
        except ValueError:
            raise ParseError("invalid secret hex", field="secrets") from None
    if secrets_list and not obj.get("policy_path"):
        raise InvalidSpecError("policy_path", "secrets require a trust policy")

    def resolved(key: str) -> str | None:
        return str(base / obj[key]) if obj.get(key) else None

    try:
        return DeploymentSpec(
            name=str(obj["name"]),
            profile=profile,
            image=image,
            boot_artifacts=Manifest(components=tuple(components), profile=profile),
            workload=workload,
            encrypted_rootfs=rootfs,
            secrets=tuple(secrets_list),
            policy_path=resolved("policy_path"),
            metadata_path=resolved("metadata_path"),
            require_transitive=bool(obj.get("require_transitive", False)),
        )
    except InvalidSpecError:
        raise


def expected_measurements(spec: DeploymentSpec) -> dict[str, object]:
    """Launch measurements this spec will produce, for policy authoring.

    Returns the workload domain measurement under "workload" and, for the
    process profile, the agent enclave measurement under "agent".
    """
    by_name = {c.name: c for c in spec.boot_artifacts.components}
    if spec.profile is PlatformProfile.PROCESS:
        agent = Manifest(
            components=(by_name["agent-code"], by_name["config"]),
            profile=PlatformProfile.PROCESS,
        )
        app = Manifest(
            components=(by_name["app-code"], by_name["config"]),
            profile=PlatformProfile.PROCESS,
        )
        return {"workload": measure(app), "agent": measure(agent)}
    ordered = tuple(by_name[name] for name in VM_BOOT_ORDER)
    return {"workload": measure(Manifest(components=ordered, profile=spec.profile))}


def agent_image_digest(spec: DeploymentSpec) -> bytes | None:
    """Image identity of the agent enclave (digest of its code artifact)."""
    if spec.profile is not PlatformProfile.PROCESS:
        return None
    by_name = {c.name: c for c in spec.boot_artifacts.components}
    return hash_data(by_name["agent-code"].payload)


def policy_for_spec(spec: DeploymentSpec, min_tcb_version: int = 0) -> TrustPolicy:
    """A minimal trust policy that accepts exactly this spec's identities."""
    measurements = expected_measurements(spec)
    trusted_measurements = {m.digest for m in measurements.values()}
    trusted_images = {spec.image}
    agent_img = agent_image_digest(spec)
    if agent_img is not None:
        trusted_images.add(agent_img)
    return TrustPolicy(
        trusted_measurements=frozenset(trusted_measurements),
        trusted_images=frozenset(trusted_images),
        min_tcb_version=min_tcb_version,
    )


@dataclass(frozen=True)
class TcbAudit:
    deployment_name: str
    trusted_components: frozenset[str]
    untrusted_components: frozenset[str]
    trusted_byte_count: int


@dataclass(frozen=True)
class AuditComparison:
    tee_in_container: TcbAudit
    container_in_tee: TcbAudit


@dataclass
class Container:
    container_id: bytes
    name: str
    spec: DeploymentSpec
    platform: Platform = field(repr=False)
    state: ContainerState = ContainerState.CREATED
    failure_reason: str | None = None
    domain: TrustDomain | None = None
    agent_domain: TrustDomain | None = None
    verdict: Verdict | None = None
    host_channel: chan.SecureChannel | None = field(default=None, repr=False)
    domain_channel: chan.SecureChannel | None = field(default=None, repr=False)
    domain_secrets: dict[str, bytes] = field(default_factory=dict, repr=False)
    rootfs_payload: bytes | None = field(default=None, repr=False)
    boot_log: list[str] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)

    def state_fingerprint(self) -> bytes:
        """Canonical byte snapshot of externally observable container state."""
        snapshot = {
            "id": self.container_id.hex(),
            "state": self.state.value,
            "failure": self.failure_reason,
            "measurement": self.domain.measurement.digest.hex() if self.domain else None,
            "identity": self.domain.identity_keys.public.hex() if self.domain else None,
            "secrets": sorted(
                (name, hash_data(value).hex()) for name, value in self.domain_secrets.items()
            ),
            "rootfs": hash_data(self.rootfs_payload).hex() if self.rootfs_payload else None,
            "send_seq": self.host_channel.state.send_seq if self.host_channel else None,
            "recv_seq": self.host_channel.state.recv_seq if self.host_channel else None,
            "boot_log": self.boot_log,
        }
        return json.dumps(snapshot, sort_keys=True).encode("utf-8")


class Manager:
    """Drives containers through their lifecycle on simulated platforms."""

    def __init__(
        self,
        verifier: Verifier | None = None,
        rand=secrets.token_bytes,
        transport_hook=None,
    ):
        self._verifier = verifier or Verifier(rand=rand)
        self._rand = rand
        # Hook wraps the untrusted host-side transport; used by the
        # adversary harness to observe or corrupt bytes in transit.
        self._transport_hook = transport_hook
        self._lock = threading.RLock()
        self.containers: dict[bytes, Container] = {}

    @property
    def verifier(self) -> Verifier:
        return self._verifier

    def _set_state(self, container: Container, state: ContainerState) -> None:
        if state not in _TRANSITIONS[container.state]:
            raise BootFailureError(
                f"illegal transition {container.state.value} -> {state.value}"
            )
        container.state = state
        container.events.append(("state", state.value))

    def _fail(self, container: Container, reason: str) -> None:
        if container.state not in (ContainerState.STOPPED, ContainerState.FAILED):
            container.state = ContainerState.FAILED
            container.failure_reason = reason
            container.events.append(("state", "Failed", reason))

    # -- boot -----------------------------------------------------------

    def _boot_vm(self, container: Container, platform: Platform) -> TrustDomain:
        by_name = {c.name: c for c in container.spec.boot_artifacts.components}
        ordered = tuple(by_name[name] for name in VM_BOOT_ORDER)
        manifest = Manifest(components=ordered, profile=container.spec.profile)
        # Walk the boot pipeline one measured stage at a time; the fold of
        # extend over the stages must equal the one-shot measurement.
        running = measure(Manifest(components=ordered[:1], profile=container.spec.profile))
        container.boot_log.append(f"measured {ordered[0].name}")
        for component in ordered[1:]:
            running = extend(running, component)
            container.boot_log.append(f"measured {component.name}")
        domain = launch_domain(platform, manifest, container.spec.image)
        if domain.manifest == manifest and running.digest != domain.measurement.digest:
            raise BootFailureError("boot pipeline measurement mismatch")
        return domain

    def _boot_process(self, container: Container, platform: Platform) -> TrustDomain:
        by_name = {c.name: c for c in container.spec.boot_artifacts.components}
        agent_manifest = Manifest(
            components=(by_name["agent-code"], by_name["config"]),
            profile=PlatformProfile.PROCESS,
        )
        app_manifest = Manifest(
            components=(by_name["app-code"], by_name["config"]),
            profile=PlatformProfile.PROCESS,
        )
        agent_image = hash_data(by_name["agent-code"].payload)
        agent = launch_domain(platform, agent_manifest, agent_image, role=DomainRole.AGENT)
        container.boot_log.append("launched agent enclave")
        app = launch_domain(platform, app_manifest, container.spec.image, role=DomainRole.APP)
        container.boot_log.append("launched app enclave")
        bind_agent(agent, app)
        container.agent_domain = agent
        return app

    # -- attestation ----------------------------------------------------

    def _attest(
        self,
        container: Container,
        platform: Platform,
        policy: TrustPolicy,
        meta: PlatformMetadata,
    ) -> Verdict:
        meta = with_published_revocations(meta, platform)
        domain = container.domain
        assert domain is not None
        request = self._verifier.new_request(domain.domain_id)
        if container.spec.require_transitive:
            agent = container.agent_domain
            assert agent is not None
            agent_quote = quote_report(platform, generate_report(agent, request.nonce))
            app_quote = quote_report(platform, generate_report(domain, request.nonce))
            verdict = self._verifier.attest_transitive(
                agent_quote,
                app_quote,
                request,
                expected_agent_pk=agent.identity_keys.public,
                expected_app_pk=domain.identity_keys.public,
                expected_agent_img=agent.image,
                expected_app_img=container.spec.image,
                policy=policy,
                meta=meta,
            )
        else:
            quote = quote_report(platform, generate_report(domain, request.nonce))
            # TDX-style and process reports bind the image inside ReportData,
            # so the verifier checks its own out-of-band expectation. The
            # SEV-style report does not; there the domain attaches its image
            # hash and the trust set must vouch for it.
            if domain.profile is PlatformProfile.VM_SEV:
                expected_img = domain.image
            else:
                expected_img = container.spec.image
            verdict = self._verifier.verify_quote(
                quote, request, domain.identity_keys.public, expected_img, policy, meta
            )
        container.verdict = verdict
        container.events.append(("verdict", verdict.result, verdict.reason.value))
        return verdict

    # -- provisioning over the secure channel ---------------------------

    def _wrap(self, transport: chan.Transport, side: str) -> chan.Transport:
        if self._transport_hook is None:
            return transport
        return self._transport_hook(transport, side)

    def _provision(self, container: Container, verdict: Verdict) -> None:
        domain = container.domain
        assert domain is not None and verdict.attested_public_key is not None
        host_keys = exchange_keypair_from_seed(self._rand(32))
        host_raw, domain_raw = chan.InProcessTransport.pair()
        host_transport = self._wrap(host_raw, "host")
        domain_transport = self._wrap(domain_raw, "domain")

        failures: list[Exception] = []

        def domain_side() -> None:
            try:
                endpoint = chan.establish(
                    domain.identity_keys,
                    host_keys.public,
                    domain.measurement,
                    chan.Role.RESPONDER,
                    domain_transport,
                )
                container.domain_channel = endpoint
                while True:
                    message = endpoint.recv()
                    if not message:
                        raise ChannelError("empty provisioning message")
                    if message[0] == _MSG_PROVISION_DONE:
                        return
                    if message[0] != _MSG_SECRET:
                        raise ChannelError(f"unexpected provisioning message {message[0]}")
                    name_len = int.from_bytes(message[1:3], "big")
                    name = message[3 : 3 + name_len].decode("utf-8")
                    container.domain_secrets[name] = message[3 + name_len :]
                    container.events.append(("secret-provisioned", name))
            except Exception as exc:  # surfaced to the deploy caller below
                failures.append(exc)

        worker = threading.Thread(target=domain_side, daemon=True)
        worker.start()
        try:
            container.host_channel = chan.establish(
                host_keys,
                verdict.attested_public_key,
                domain.measurement,
                chan.Role.INITIATOR,
                host_transport,
            )
            for name, value in container.spec.secrets:
                raw_name = name.encode("utf-8")
                container.host_channel.send(
                    bytes([_MSG_SECRET]) + len(raw_name).to_bytes(2, "big") + raw_name + value
                )
            container.host_channel.send(bytes([_MSG_PROVISION_DONE]))
        finally:
            worker.join(timeout=10.0)
        if failures:
            raise failures[0]
        if worker.is_alive():
            raise ChannelError("domain provisioning did not finish")

    # -- public operations ----------------------------------------------

    def deploy(
        self,
        spec: DeploymentSpec,
        platform: Platform,
        policy: TrustPolicy,
        meta: PlatformMetadata,
        container_id: bytes | None = None,
    ) -> Container:
        """Run the full pipeline; returns a Running container.

        No secret leaves the manager before an ACCEPTED verdict for this
        exact domain; a rejected attestation fails the container with the
        verdict's reason and provisions nothing.
        """
        if spec.profile != platform.profile:
            raise InvalidSpecError("profile", "spec profile does not match platform")
        container = Container(
            container_id=container_id or self._rand(32),
            name=spec.name,
            spec=spec,
            platform=platform,
        )
        with self._lock:
            self.containers[container.container_id] = container
        try:
            self._set_state(container, ContainerState.BOOTING)
            if spec.profile is PlatformProfile.PROCESS:
                container.domain = self._boot_process(container, platform)
            else:
                container.domain = self._boot_vm(container, platform)
            self._set_state(container, ContainerState.ATTESTING)
            verdict = self._attest(container, platform, policy, meta)
            if not verdict.accepted:
                self._fail(container, verdict.reason.value)
                raise AttestationRejectedError(verdict.reason, container)
            if spec.workload is Workload.LONG_TERM:
                assert spec.encrypted_rootfs is not None
                try:
                    blob = SealedBlob.from_bytes(spec.encrypted_rootfs)
                    container.rootfs_payload = unseal(
                        platform.root, container.domain.ctx, blob
                    )
                    container.boot_log.append("mounted long-term rootfs")
                except SealFailureError as exc:
                    self._fail(container, "RootfsUnsealFailure")
                    raise RootfsUnsealFailureError(str(exc)) from exc
            # Secrets may only ever be observable at Provisioned or later.
            self._set_state(container, ContainerState.PROVISIONED)
            self._provision(container, verdict)
            self._set_state(container, ContainerState.RUNNING)
            return container
        except AttestationRejectedError:
            raise
        except Exception as exc:
            self._fail(container, type(exc).__name__)
            raise

    def reattest(
        self, container: Container, policy: TrustPolicy, meta: PlatformMetadata
    ) -> Verdict:
        """Re-run attestation for a live container without changing its state."""
        return self._attest(container, container.platform, policy, meta)

    def _domain_step(self, container: Container) -> None:
        endpoint = container.domain_channel
        assert endpoint is not None
        message = endpoint.recv()
        if not message or message[0] != _MSG_EXEC_INPUT:
            raise ChannelError("unexpected workload message")
        payload = message[1:]
        endpoint.send(bytes([_MSG_EXEC_OUTPUT]) + hash_data(payload) + payload)

    def exec_workload(self, container: Container, data: bytes) -> bytes:
        """Round-trip one input through the in-domain workload stub."""
        if container.state is not ContainerState.RUNNING:
            raise NotRunningError(f"container is {container.state.value}")
        assert container.host_channel is not None
        container.host_channel.send(bytes([_MSG_EXEC_INPUT]) + data)
        self._domain_step(container)
        response = container.host_channel.recv()
        if not response or response[0] != _MSG_EXEC_OUTPUT:
            raise ChannelError("unexpected workload response")
        return response[1:]

    def teardown(self, container: Container) -> None:
        """Stop the container and erase all channel and secret state."""
        if container.state is ContainerState.STOPPED:
            return
        if container.host_channel is not None:
            container.host_channel.close()
        if container.domain_channel is not None:
            container.domain_channel.close()
        container.domain_secrets.clear()
        container.rootfs_payload = None
        if container.state is not ContainerState.FAILED:
            if container.state is ContainerState.RUNNING:
                self._set_state(container, ContainerState.STOPPED)
            else:
                container.state = ContainerState.STOPPED
                container.events.append(("state", "Stopped"))

    def tcb_audit(self, target: Container | DeploymentSpec) -> AuditComparison:
        """Audit what this deployment trusts, next to a container-in-TEE layout."""
        spec = target.spec if isinstance(target, Container) else target
        trusted = frozenset(spec.boot_artifacts.names()) | {"workload"}
        byte_count = spec.boot_artifacts.payload_bytes()
        ours = TcbAudit(
            deployment_name=spec.name,
            trusted_components=trusted,
            untrusted_components=UNTRUSTED_COMPONENTS,
            trusted_byte_count=byte_count,
        )
        comparison = TcbAudit(
            deployment_name=spec.name,
            trusted_components=trusted | {"container-engine", "host-agent"},
            untrusted_components=UNTRUSTED_COMPONENTS - {"container-engine", "host-agent"},
            trusted_byte_count=byte_count + SIM_CONTAINER_ENGINE_BYTES + SIM_HOST_AGENT_BYTES,
        )
        return AuditComparison(tee_in_container=ours, container_in_tee=comparison)
