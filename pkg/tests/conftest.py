from __future__ import annotations

from pathlib import Path

import pytest

from ccplane.attestation import PlatformMetadata, Verifier
from ccplane.ccm import DeploymentSpec, Manager, Workload, policy_for_spec
from ccplane.measurement import ComponentValue, Manifest, PlatformProfile
from ccplane.primitives import signing_keypair_from_seed
from ccplane.rng import seeded_rand
from ccplane.teesim import create_platform

TESTDATA = Path(__file__).resolve().parent.parent / "testdata"


def read_vectors(relative: str) -> list[list[str]]:
    """Parse a tab-separated golden vector file, skipping comment lines."""
    rows = []
    for line in (TESTDATA / relative).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        rows.append(line.split("\t"))
    return rows


class DeployEnv:
    """One isolated platform + spec + policy + metadata, ready to deploy."""

    def __init__(self, profile: PlatformProfile, seed: int, secrets=(), transitive=False):
        self.rand = seeded_rand(seed, stream=f"env:{profile.value}".encode())
        self.vendor_root = signing_keypair_from_seed(self.rand(32))
        self.platform = create_platform(
            profile, tcb_version=2, vendor_root=self.vendor_root, rand=self.rand
        )
        names = (
            ("agent-code", "app-code", "config")
            if profile is PlatformProfile.PROCESS
            else ("firmware", "initrd", "kernel", "config")
        )
        self.spec = DeploymentSpec(
            name=f"env-{profile.value}",
            profile=profile,
            image=self.rand(32),
            boot_artifacts=Manifest(
                components=tuple(ComponentValue(n, self.rand(48)) for n in names),
                profile=profile,
            ),
            workload=Workload.SHORT_TERM,
            secrets=tuple(secrets),
            policy_path="inline" if secrets else None,
            require_transitive=transitive,
        )
        self.policy = policy_for_spec(self.spec, min_tcb_version=1)
        self.meta = PlatformMetadata(
            tcb_floor=1,
            revoked_serials=frozenset(),
            vendor_root_public=self.vendor_root.public,
        )
        self.manager = Manager(verifier=Verifier(rand=self.rand), rand=self.rand)

    def deploy(self):
        return self.manager.deploy(self.spec, self.platform, self.policy, self.meta)


@pytest.fixture
def deploy_env():
    return DeployEnv


@pytest.fixture(params=list(PlatformProfile), ids=lambda p: p.value)
def profile(request) -> PlatformProfile:
    return request.param


def make_file_deployment(
    base: Path,
    profile: PlatformProfile,
    vendor_root_public_hex: str,
    name: str = "filedeploy",
    tcb_floor: int = 1,
    with_secret: bool = True,
) -> Path:
    """Write a complete spec + artifacts + policy + metadata tree; returns spec path."""
    import json

    from ccplane.ccm import agent_image_digest, expected_measurements, parse_spec

    base.mkdir(parents=True, exist_ok=True)
    if profile is PlatformProfile.PROCESS:
        artifacts = {"agent-code": "agent.bin", "app-code": "app.bin", "config": "cfg"}
    else:
        artifacts = {
            "firmware": "fw.bin",
            "initrd": "initrd.img",
            "kernel": "kernel.bin",
            "config": "cfg",
        }
    for filename in artifacts.values():
        (base / filename).write_bytes(hash_data_for(filename, name))
    image_hex = hash_data_for("image", name).hex()
    spec_doc = {
        "version": 1,
        "name": name,
        "profile": profile.value,
        "image": image_hex,
        "boot_artifacts": [{"name": k, "path": v} for k, v in artifacts.items()],
        "workload": "short",
        "policy_path": "policy.json",
        "metadata_path": "metadata.json",
    }
    if with_secret:
        spec_doc["secrets"] = [{"name": "api-key", "hex": hash_data_for("secret", name).hex()}]
    spec_path = base / "spec.json"
    spec_path.write_text(json.dumps(spec_doc, indent=2))

    spec = parse_spec(spec_path.read_bytes(), base_dir=base)
    measurements = expected_measurements(spec)
    trusted_measurements = sorted(m.digest.hex() for m in measurements.values())
    trusted_images = [image_hex]
    agent_img = agent_image_digest(spec)
    if agent_img is not None:
        trusted_images.append(agent_img.hex())
    (base / "policy.json").write_text(
        json.dumps(
            {
                "version": 1,
                "trusted_measurements": trusted_measurements,
                "trusted_images": sorted(trusted_images),
                "min_tcb_version": tcb_floor,
                "revoked_cert_serials": [],
                "min_vmpl_allowed": 0,
            }
        )
    )
    (base / "metadata.json").write_text(
        json.dumps(
            {
                "version": 1,
                "tcb_floor": tcb_floor,
                "revoked_serials": [],
                "vendor_root_public": vendor_root_public_hex,
            }
        )
    )
    return spec_path


def hash_data_for(kind: str, name: str) -> bytes:
    import hashlib

    return hashlib.sha256(f"{kind}:{name}".encode()).digest()
