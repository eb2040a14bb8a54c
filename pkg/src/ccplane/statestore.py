"""On-disk state for the control plane: platforms, containers, vendor roots.

A platform's fused secret and quoting private key must survive process
restarts without ever being written in plaintext, so the store encrypts
them under a per-state-dir keyfile created with owner-only permissions.
This is a deliberate simulator concession: real fused secrets never leave
the silicon at all. Everything else in the store is public state.

The directory is guarded by an advisory lock file so concurrent commands
do not interleave writes.
"""

from __future__ import annotations

import fcntl
import json
import os
import secrets
from pathlib import Path

from .errors import CcplaneError, ParseError
from .keyhier import RootSecret
from .measurement import PlatformProfile
from .primitives import (
    KeyPair,
    SymmetricKey,
    aead_open,
    aead_seal,
    signing_keypair_from_seed,
)
from .teesim import CertChain, Certificate, CertRole, Fault, Platform

_KEYFILE = "store.key"
_LOCKFILE = ".lock"
_PLATFORMS = "platforms.json"
_CONTAINERS = "containers.json"
_VENDOR_ROOTS = "vendor_roots.json"
_SEEDSTATE = "seedstate"


class StoreLockedError(CcplaneError):
    """Another process holds the state-dir lock."""


class StateStore:
    def __init__(self, state_dir: Path | str, rand=secrets.token_bytes):
        self.root = Path(state_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self._rand = rand
        self._lock_handle = open(self.root / _LOCKFILE, "a+")
        try:
            fcntl.flock(self._lock_handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._lock_handle.close()
            raise StoreLockedError(f"state dir {self.root} is locked by another process") from None
        self._store_key = self._load_or_create_keyfile()

    def set_rand(self, rand) -> None:
        """Swap the byte source, e.g. for a seeded deterministic run."""
        self._rand = rand

    def close(self) -> None:
        try:
            fcntl.flock(self._lock_handle.fileno(), fcntl.LOCK_UN)
        finally:
            self._lock_handle.close()

    def __enter__(self) -> "StateStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- keyfile ----------------------------------------------------------

    def _load_or_create_keyfile(self) -> SymmetricKey:
        path = self.root / _KEYFILE
        if not path.exists():
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
            try:
                os.write(fd, self._rand(16).hex().encode("ascii"))
            finally:
                os.close(fd)
        raw = bytes.fromhex(path.read_text().strip())
        if len(raw) != 16:
            raise ParseError("store keyfile must hold 16 bytes of hex")
        return SymmetricKey(data=raw, purpose="state-store")

    def _encrypt(self, payload: dict, aad: bytes) -> dict:
        nonce = self._rand(12)
        raw = json.dumps(payload, sort_keys=True).encode("utf-8")
        ciphertext, tag = aead_seal(self._store_key, nonce, raw, aad)
        return {"nonce": nonce.hex(), "ct": ciphertext.hex(), "tag": tag.hex()}

    def _decrypt(self, sealed: dict, aad: bytes) -> dict:
        raw = aead_open(
            self._store_key,
            bytes.fromhex(sealed["nonce"]),
            bytes.fromhex(sealed["ct"]),
            bytes.fromhex(sealed["tag"]),
            aad,
        )
        return json.loads(raw.decode("utf-8"))

    # -- generic json documents -------------------------------------------

    def _read(self, name: str) -> dict:
        path = self.root / name
        if not path.exists():
            return {}
        return json.loads(path.read_text())

    def _write(self, name: str, obj: dict) -> None:
        path = self.root / name
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        tmp.replace(path)

    # -- seed counter -------------------------------------------------------

    def next_seed_counter(self) -> int:
        path = self.root / _SEEDSTATE
        counter = int(path.read_text().strip()) if path.exists() else 0
        path.write_text(str(counter + 1))
        return counter

    # -- vendor roots -------------------------------------------------------

    def vendor_root(self, profile: PlatformProfile) -> KeyPair:
        """Per-profile simulated vendor CA key, created on first use."""
        doc = self._read(_VENDOR_ROOTS)
        entry = doc.get(profile.value)
        if entry is None:
            keys = signing_keypair_from_seed(self._rand(32))
            doc[profile.value] = {
                "public": keys.public.hex(),
                "sealed": self._encrypt(
                    {"private": keys.private.hex()}, aad=b"vendor:" + profile.value.encode()
                ),
            }
            self._write(_VENDOR_ROOTS, doc)
            return keys
        private = bytes.fromhex(
            self._decrypt(entry["sealed"], aad=b"vendor:" + profile.value.encode())["private"]
        )
        return KeyPair(public=bytes.fromhex(entry["public"]), private=private)

    # -- platforms ----------------------------------------------------------

    @staticmethod
    def _cert_to_dict(cert: Certificate) -> dict:
        return {
            "subject": cert.subject,
            "serial": cert.serial,
            "public": cert.public.hex(),
            "signature": cert.issuer_signature.hex(),
            "role": cert.role.value,
        }

    @staticmethod
    def _cert_from_dict(obj: dict) -> Certificate:
        return Certificate(
            subject=obj["subject"],
            serial=obj["serial"],
            public=bytes.fromhex(obj["public"]),
            issuer_signature=bytes.fromhex(obj["signature"]),
            role=CertRole(obj["role"]),
        )

    def save_platform(self, platform: Platform) -> None:
        doc = self._read(_PLATFORMS)
        pid = platform.id.hex()
        doc[pid] = {
            "profile": platform.profile.value,
            "tcb_version": platform.tcb_version,
            "chain": [self._cert_to_dict(c) for c in platform.cert_chain.certs],
            "published_revocations": sorted(platform.published_revocations),
            "pending_faults": [f.value for f in platform.pending_faults],
            "quoting_public": platform.quoting_identity.public.hex(),
            "sealed": self._encrypt(
                {
                    "root_secret": platform.root.data.hex(),
                    "quoting_private": platform.quoting_identity.private.hex(),
                },
                aad=b"platform:" + platform.id,
            ),
        }
        self._write(_PLATFORMS, doc)

    def load_platform(self, platform_id: bytes) -> Platform:
        doc = self._read(_PLATFORMS)
        entry = doc.get(platform_id.hex())
        if entry is None:
            raise ParseError(f"unknown platform {platform_id.hex()}")
        sealed = self._decrypt(entry["sealed"], aad=b"platform:" + platform_id)
        quoting = KeyPair(
            public=bytes.fromhex(entry["quoting_public"]),
            private=bytes.fromhex(sealed["quoting_private"]),
        )
        certs = tuple(self._cert_from_dict(c) for c in entry["chain"])
        return Platform(
            id=platform_id,
            profile=PlatformProfile.from_string(entry["profile"]),
            root=RootSecret(data=bytes.fromhex(sealed["root_secret"]), platform_id=platform_id),
            tcb_version=entry["tcb_version"],
            quoting_identity=quoting,
            cert_chain=CertChain(certs=certs),
            published_revocations=set(entry["published_revocations"]),
            pending_faults=[Fault(f) for f in entry["pending_faults"]],
        )

    def list_platform_ids(self) -> list[bytes]:
        return [bytes.fromhex(pid) for pid in sorted(self._read(_PLATFORMS))]

    # -- containers -----------------------------------------------------------

    def save_container(self, container_id: bytes, record: dict) -> None:
        doc = self._read(_CONTAINERS)
        doc[container_id.hex()] = record
        self._write(_CONTAINERS, doc)

    def load_container(self, container_id: bytes) -> dict:
        doc = self._read(_CONTAINERS)
        entry = doc.get(container_id.hex())
        if entry is None:
            raise ParseError(f"unknown container {container_id.hex()}")
        return entry

    def list_container_ids(self) -> list[bytes]:
        return [bytes.fromhex(cid) for cid in sorted(self._read(_CONTAINERS))]
