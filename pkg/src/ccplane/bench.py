"""Desk-scale micro-benchmarks of artifact-internal costs.

These characterize the simulator itself (channel throughput, attestation
latency, seal rate). They make no claim about hardware TEE performance
and never assert absolute numbers; consumers should only rely on
completion and relative sanity.
"""

from __future__ import annotations

import json
import platform as _platform
import secrets
import time
from dataclasses import dataclass

from .attestation import PlatformMetadata, Verifier
from .channel import InProcessTransport, Role, establish
from .keyhier import DerivationContext, new_root_secret, seal, unseal
from .measurement import ComponentValue, Manifest, Measurement, PlatformProfile, TrustPolicy
from .primitives import exchange_keypair_from_seed, hash_data, signing_keypair_from_seed
from .teesim import create_platform, generate_report, launch_domain, quote_report

MIN_SAMPLES = 100


@dataclass(frozen=True)
class BenchResult:
    name: str
    ops_per_second: float
    bytes_per_second: float
    samples: int
    p50_us: float
    p95_us: float
    environment: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "ops_per_second": round(self.ops_per_second, 2),
                "bytes_per_second": round(self.bytes_per_second, 2),
                "samples": self.samples,
                "p50_us": round(self.p50_us, 2),
                "p95_us": round(self.p95_us, 2),
                "environment": self.environment,
            },
            sort_keys=True,
        )


def _environment() -> str:
    return f"python-{_platform.python_version()}/{_platform.system().lower()}-{_platform.machine()}"


def _result(name: str, latencies: list[float], payload_bytes: int) -> BenchResult:
    ordered = sorted(latencies)
    total = sum(ordered)
    count = len(ordered)
    ops = count / total if total > 0 else float("inf")
    return BenchResult(
        name=name,
        ops_per_second=ops,
        bytes_per_second=ops * payload_bytes,
        samples=count,
        p50_us=ordered[count // 2] * 1e6,
        p95_us=ordered[min(count - 1, int(count * 0.95))] * 1e6,
        environment=_environment(),
    )


def _require_count(count: int) -> None:
    if count < MIN_SAMPLES:
        raise ValueError(f"count must be at least {MIN_SAMPLES}")


def bench_channel(frame_size: int, count: int) -> BenchResult:
    """Round-trip ``count`` frames of ``frame_size`` bytes over one channel."""
    _require_count(count)
    a_keys = exchange_keypair_from_seed(secrets.token_bytes(32))
    b_keys = exchange_keypair_from_seed(secrets.token_bytes(32))
    m = Measurement(digest=hash_data(b"bench"), profile=PlatformProfile.VM_TDX)
    t_a, t_b = InProcessTransport.pair()
    import threading

    side_b = {}

    def responder():
        side_b["chan"] = establish(b_keys, a_keys.public, m, Role.RESPONDER, t_b)

    worker = threading.Thread(target=responder)
    worker.start()
    chan_a = establish(a_keys, b_keys.public, m, Role.INITIATOR, t_a)
    worker.join()
    chan_b = side_b["chan"]

    payload = secrets.token_bytes(frame_size)
    latencies = []
    for _ in range(count):
        started = time.perf_counter()
        chan_a.send(payload)
        received = chan_b.recv()
        latencies.append(time.perf_counter() - started)
        assert len(received) == frame_size
    return _result(f"channel-{frame_size}B", latencies, frame_size)


def bench_attest(profile: PlatformProfile, count: int) -> BenchResult:
    """Full quote generation plus verification, ``count`` times."""
    _require_count(count)
    vendor = signing_keypair_from_seed(secrets.token_bytes(32))
    platform = create_platform(profile, tcb_version=1, vendor_root=vendor)
    names = (
        ("agent-code", "app-code", "config")
        if profile is PlatformProfile.PROCESS
        else ("firmware", "initrd", "kernel", "config")
    )
    manifest = Manifest(
        components=tuple(ComponentValue(n, secrets.token_bytes(32)) for n in names),
        profile=profile,
    )
    image = secrets.token_bytes(32)
    role = None
    if profile is PlatformProfile.PROCESS:
        from .teesim import DomainRole

        role = DomainRole.APP
    domain = launch_domain(platform, manifest, image, role=role)
    policy = TrustPolicy(
        trusted_measurements=frozenset({domain.measurement.digest}),
        trusted_images=frozenset({image}),
        min_tcb_version=0,
    )
    meta = PlatformMetadata(
        tcb_floor=0, revoked_serials=frozenset(), vendor_root_public=vendor.public
    )
    verifier = Verifier()
    latencies = []
    for _ in range(count):
        started = time.perf_counter()
        request = verifier.new_request(domain.domain_id)
        quote = quote_report(platform, generate_report(domain, request.nonce))
        verdict = verifier.verify_quote(
            quote, request, domain.identity_keys.public, image, policy, meta
        )
        latencies.append(time.perf_counter() - started)
        assert verdict.accepted
    return _result(f"attest-{profile.value}", latencies, 0)


def bench_seal(size: int, count: int) -> BenchResult:
    """Seal plus unseal of ``size`` bytes, ``count`` times."""
    _require_count(count)
    root = new_root_secret(secrets.token_bytes(32))
    ctx = DerivationContext(
        measurement=Measurement(digest=hash_data(b"bench-seal"), profile=PlatformProfile.VM_SEV),
        security_version=1,
        domain_identity=secrets.token_bytes(32),
    )
    payload = secrets.token_bytes(size)
    latencies = []
    for _ in range(count):
        started = time.perf_counter()
        blob = seal(root, ctx, "bench", payload)
        recovered = unseal(root, ctx, blob)
        latencies.append(time.perf_counter() - started)
        assert recovered == payload
    return _result(f"seal-{size}B", latencies, size)
