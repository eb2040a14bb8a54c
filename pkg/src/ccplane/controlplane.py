"""High-level facade over the whole stack: one object per state directory.

The HTTP service and the CLI are both thin clients of this class; every
operation takes and returns JSON-friendly values. Platforms persist
across processes through the state store; containers are rehydrated by
replaying their recorded deployment (including a fresh attestation, so
secret gating survives restarts and a platform faulted in the meantime
fails honestly).
"""

from __future__ import annotations

import secrets
from pathlib import Path

from . import bench as bench_mod
from .adversary import run_matrix
from .attestation import PlatformMetadata, Verifier, load_metadata
from .ccm import (
    Container,
    DeploymentSpec,
    Manager,
    Workload,
    agent_image_digest,
    expected_measurements,
    parse_spec,
)
from .errors import AttestationRejectedError, NotRunningError, ParseError
from .keyhier import SealedBlob, seal, unseal
from .measurement import (
    ComponentValue,
    Manifest,
    PlatformProfile,
    TrustPolicy,
    load_policy,
)
from .rng import seeded_rand
from .statestore import StateStore
from .teesim import Fault, Platform, create_platform, inject_fault


class ControlPlane:
    def __init__(self, state_dir: Path | str, seed: int | None = None):
        self.seed = seed
        rand = secrets.token_bytes
        self.store = StateStore(state_dir, rand=rand)
        if seed is not None:
            counter = self.store.next_seed_counter()
            rand = seeded_rand(seed, stream=counter.to_bytes(8, "big"))
            self.store.set_rand(rand)
        self._rand = rand
        self.manager = Manager(verifier=Verifier(rand=rand), rand=rand)
        self._platforms: dict[bytes, Platform] = {}

    def close(self) -> None:
        self.store.close()

    def __enter__(self) -> "ControlPlane":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- platforms --------------------------------------------------------

    def _platform(self, platform_id: bytes) -> Platform:
        if platform_id not in self._platforms:
            self._platforms[platform_id] = self.store.load_platform(platform_id)
        return self._platforms[platform_id]

    def platform_create(self, profile: str, tcb: int) -> dict:
        prof = PlatformProfile.from_string(profile)
        vendor = self.store.vendor_root(prof)
        platform = create_platform(prof, tcb_version=tcb, vendor_root=vendor, rand=self._rand)
        self._platforms[platform.id] = platform
        self.store.save_platform(platform)
        return {
            "platform_id": platform.id.hex(),
            "profile": prof.value,
            "tcb_version": platform.tcb_version,
            "vendor_root_public": vendor.public.hex(),
            "leaf_serial": platform.cert_chain.leaf.serial,
        }

    def platform_list(self) -> list[dict]:
        out = []
        for pid in self.store.list_platform_ids():
            platform = self._platform(pid)
            vendor = self.store.vendor_root(platform.profile)
            out.append(
                {
                    "platform_id": pid.hex(),
                    "profile": platform.profile.value,
                    "tcb_version": platform.tcb_version,
                    "vendor_root_public": vendor.public.hex(),
                    "leaf_serial": platform.cert_chain.leaf.serial,
                }
            )
        return out

    # -- deployment ---------------------------------------------------------

    @staticmethod
    def _load_policy_meta(spec: DeploymentSpec) -> tuple[TrustPolicy, PlatformMetadata]:
        if not spec.policy_path or not spec.metadata_path:
            raise ParseError("deployment needs policy_path and metadata_path", field="policy_path")
        policy = load_policy(Path(spec.policy_path).read_bytes())
        meta = load_metadata(Path(spec.metadata_path).read_bytes())
        return policy, meta

    @staticmethod
    def _materialize(spec: DeploymentSpec) -> dict:
        return {
            "name": spec.name,
            "profile": spec.profile.value,
            "image": spec.image.hex(),
            "components": [
                {"name": c.name, "payload": c.payload.hex()}
                for c in spec.boot_artifacts.components
            ],
            "workload": spec.workload.value,
            "encrypted_rootfs": spec.encrypted_rootfs.hex() if spec.encrypted_rootfs else None,
            "secrets": [{"name": n, "hex": v.hex()} for n, v in spec.secrets],
            "require_transitive": spec.require_transitive,
        }

    @staticmethod
    def _dematerialize(record: dict) -> DeploymentSpec:
        profile = PlatformProfile.from_string(record["profile"])
        components = tuple(
            ComponentValue(name=c["name"], payload=bytes.fromhex(c["payload"]))
            for c in record["components"]
        )
        return DeploymentSpec(
            name=record["name"],
            profile=profile,
            image=bytes.fromhex(record["image"]),
            boot_artifacts=Manifest(components=components, profile=profile),
            workload=Workload(record["workload"]),
            encrypted_rootfs=(
                bytes.fromhex(record["encrypted_rootfs"]) if record["encrypted_rootfs"] else None
            ),
            secrets=tuple((s["name"], bytes.fromhex(s["hex"])) for s in record["secrets"]),
            policy_path="<stored>",
            require_transitive=record["require_transitive"],
        )

    def _verdict_info(self, container: Container) -> dict:
        verdict = container.verdict
        return {
            "container_id": container.container_id.hex(),
            "state": container.state.value,
            "result": verdict.result if verdict else "REJECTED",
            "reason": verdict.reason.value if verdict else "unknown",
        }

    def deploy_spec(
        self,
        spec: DeploymentSpec,
        platform_id: bytes,
        policy: TrustPolicy,
        meta: PlatformMetadata,
        policy_doc: bytes,
        meta_doc: bytes,
        container_id: bytes | None = None,
    ) -> dict:
        platform = self._platform(platform_id)
        try:
            container = self.manager.deploy(
                spec, platform, policy, meta, container_id=container_id
            )
        except AttestationRejectedError as exc:
            self.store.save_platform(platform)
            info = self._verdict_info(exc.container)
            info["error"] = "AttestationRejected"
            return info
        self.store.save_platform(platform)
        self.store.save_container(
            container.container_id,
            {
                "platform_id": platform_id.hex(),
                "spec": self._materialize(spec),
                "policy_doc": policy_doc.decode("utf-8"),
                "metadata_doc": meta_doc.decode("utf-8"),
                "state": "Running",
                "faults": [],
            },
        )
        return self._verdict_info(container)

    def deploy_path(self, spec_path: Path | str, platform_id_hex: str) -> dict:
        spec_path = Path(spec_path)
        spec = parse_spec(spec_path.read_bytes(), base_dir=spec_path.parent)
        policy, meta = self._load_policy_meta(spec)
        return self.deploy_spec(
            spec,
            bytes.fromhex(platform_id_hex),
            policy,
            meta,
            policy_doc=Path(spec.policy_path).read_bytes(),
            meta_doc=Path(spec.metadata_path).read_bytes(),
        )

    def _live_container(self, container_id: bytes) -> Container:
        container = self.manager.containers.get(container_id)
        if container is not None:
            return container
        record = self.store.load_container(container_id)
        spec = self._dematerialize(record["spec"])
        platform = self._platform(bytes.fromhex(record["platform_id"]))
        if record.get("state") == "Stopped":
            # Torn down in an earlier process; there is nothing to revive.
            from .ccm import ContainerState

            container = Container(
                container_id=container_id,
                name=spec.name,
                spec=spec,
                platform=platform,
                state=ContainerState.STOPPED,
            )
            self.manager.containers[container_id] = container
            return container
        policy = load_policy(record["policy_doc"].encode("utf-8"))
        meta = load_metadata(record["metadata_doc"].encode("utf-8"))
        container = self.manager.deploy(spec, platform, policy, meta, container_id=container_id)
        for fault_name in record.get("faults", []):
            inject_fault(platform, Fault(fault_name), domain=container.domain)
        return container

    # -- per-container operations ------------------------------------------

    def attest(self, container_id_hex: str) -> dict:
        container = self._live_container(bytes.fromhex(container_id_hex))
        if container.domain is None:
            raise NotRunningError("container is Stopped")
        record = self.store.load_container(container.container_id)
        policy = load_policy(record["policy_doc"].encode("utf-8"))
        meta = load_metadata(record["metadata_doc"].encode("utf-8"))
        verdict = self.manager.reattest(container, policy, meta)
        return {
            "container_id": container.container_id.hex(),
            "result": verdict.result,
            "reason": verdict.reason.value,
            "attested_public_key": (
                verdict.attested_public_key.hex() if verdict.attested_public_key else None
            ),
        }

    def exec_workload(self, container_id_hex: str, data: bytes) -> bytes:
        container = self._live_container(bytes.fromhex(container_id_hex))
        return self.manager.exec_workload(container, data)

    def teardown(self, container_id_hex: str) -> dict:
        container_id = bytes.fromhex(container_id_hex)
        record = self.store.load_container(container_id)
        container = self.manager.containers.get(container_id)
        if container is not None:
            self.manager.teardown(container)
        record["state"] = "Stopped"
        self.store.save_container(container_id, record)
        return {"container_id": container_id_hex, "state": "Stopped"}

    def seal_data(self, container_id_hex: str, label: str, plaintext: bytes) -> bytes:
        container = self._live_container(bytes.fromhex(container_id_hex))
        if container.domain is None:
            raise NotRunningError("container is Stopped")
        blob = seal(
            container.platform.root, container.domain.ctx, label, plaintext, rand=self._rand
        )
        return blob.to_bytes()

    def unseal_data(self, container_id_hex: str, blob_bytes: bytes) -> bytes:
        container = self._live_container(bytes.fromhex(container_id_hex))
        if container.domain is None:
            raise NotRunningError("container is Stopped")
        return unseal(container.platform.root, container.domain.ctx, SealedBlob.from_bytes(blob_bytes))

    def inject(self, target_id_hex: str, fault_name: str, value: int | None = None) -> dict:
        fault = Fault.from_string(fault_name)
        target_id = bytes.fromhex(target_id_hex)
        if target_id in self._platforms or target_id in set(self.store.list_platform_ids()):
            platform = self._platform(target_id)
            inject_fault(platform, fault, tcb_value=value)
            self.store.save_platform(platform)
            return {"target": "platform", "fault": fault.value}
        container = self._live_container(target_id)
        inject_fault(container.platform, fault, domain=container.domain, tcb_value=value)
        self.store.save_platform(container.platform)
        if fault in (Fault.TAMPER_MANIFEST, Fault.SWAP_IMAGE):
            # Domain-level faults must outlive this process.
            record = self.store.load_container(target_id)
            record.setdefault("faults", []).append(fault.value)
            self.store.save_container(target_id, record)
        return {"target": "container", "fault": fault.value}

    # -- reports --------------------------------------------------------------

    def matrix(self, profiles: list[str], seed: int | None = None) -> dict:
        profs = [PlatformProfile.from_string(p) for p in profiles]
        if seed is None:
            seed = self.seed if self.seed is not None else 0
        report = run_matrix(profs, seed=seed)
        return {
            "json": report.to_json(),
            "text": report.to_text(),
            "all_passed": report.all_passed,
        }

    def tcb_report(self, spec_path: Path | str) -> dict:
        spec_path = Path(spec_path)
        spec = parse_spec(spec_path.read_bytes(), base_dir=spec_path.parent)
        comparison = self.manager.tcb_audit(spec)
        ours, theirs = comparison.tee_in_container, comparison.container_in_tee
        measurements = expected_measurements(spec)
        identities = {
            "workload_measurement": measurements["workload"].digest.hex(),
            "image": spec.image.hex(),
        }
        if "agent" in measurements:
            identities["agent_measurement"] = measurements["agent"].digest.hex()
            agent_img = agent_image_digest(spec)
            assert agent_img is not None
            identities["agent_image"] = agent_img.hex()
        return {
            "deployment": spec.name,
            **identities,
            "tee_in_container": {
                "trusted_components": sorted(ours.trusted_components),
                "untrusted_components": sorted(ours.untrusted_components),
                "trusted_byte_count": ours.trusted_byte_count,
            },
            "container_in_tee": {
                "trusted_components": sorted(theirs.trusted_components),
                "untrusted_components": sorted(theirs.untrusted_components),
                "trusted_byte_count": theirs.trusted_byte_count,
            },
        }

    def bench_channel(self, size: int, count: int) -> dict:
        result = bench_mod.bench_channel(size, count)
        return {"json": result.to_json()}

    def bench_attest(self, profile: str, count: int) -> dict:
        result = bench_mod.bench_attest(PlatformProfile.from_string(profile), count)
        return {"json": result.to_json()}

    def bench_seal(self, size: int, count: int) -> dict:
        result = bench_mod.bench_seal(size, count)
        return {"json": result.to_json()}
