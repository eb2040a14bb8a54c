"""Primitive operations against frozen golden vectors and their contracts."""

from __future__ import annotations

import secrets

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccplane.errors import AuthFailureError, BadLengthError, InvalidPointError, MalformedKeyError
from ccplane.primitives import (
    KeyPair,
    SymmetricKey,
    aead_open,
    aead_seal,
    ecdh,
    exchange_keypair_from_seed,
    hash_data,
    kdf,
    mac,
    mac_verify,
    sign,
    signing_keypair_from_seed,
    verify,
)

from conftest import read_vectors


def key16(raw=None):
    return SymmetricKey(data=raw or secrets.token_bytes(16), purpose="test")


def key32(raw=None):
    return SymmetricKey(data=raw or secrets.token_bytes(32), purpose="test")


class TestGoldenVectors:
    def test_sha256(self):
        for name, message, digest in read_vectors("primitives/sha256.vec"):
            assert hash_data(bytes.fromhex(message)).hex() == digest, name

    def test_hmac_sha256(self):
        for name, key, message, tag in read_vectors("primitives/hmac_sha256.vec"):
            got = mac(SymmetricKey(bytes.fromhex(key), "vec"), bytes.fromhex(message))
            assert got.hex() == tag, name

    def test_hkdf(self):
        for name, secret, context, label, out_len, okm in read_vectors("primitives/hkdf.vec"):
            got = kdf(
                bytes.fromhex(secret),
                bytes.fromhex(context),
                bytes.fromhex(label).decode("ascii"),
                int(out_len),
            )
            assert got.hex() == okm, name

    def test_aead_gcm(self):
        for name, key, nonce, plaintext, aad, ciphertext, tag in read_vectors(
            "primitives/aead_gcm.vec"
        ):
            ct, t = aead_seal(
                SymmetricKey(bytes.fromhex(key), "vec"),
                bytes.fromhex(nonce),
                bytes.fromhex(plaintext),
                bytes.fromhex(aad),
            )
            assert ct.hex() == ciphertext and t.hex() == tag, name
            recovered = aead_open(
                SymmetricKey(bytes.fromhex(key), "vec"),
                bytes.fromhex(nonce),
                bytes.fromhex(ciphertext),
                bytes.fromhex(tag),
                bytes.fromhex(aad),
            )
            assert recovered.hex() == plaintext, name

    def test_x25519(self):
        for name, a_priv, a_pub, b_priv, b_pub, shared in read_vectors("primitives/x25519.vec"):
            pair_a = exchange_keypair_from_seed(bytes.fromhex(a_priv))
            pair_b = exchange_keypair_from_seed(bytes.fromhex(b_priv))
            assert pair_a.public.hex() == a_pub, name
            assert pair_b.public.hex() == b_pub, name
            assert ecdh(pair_a.private, pair_b.public).hex() == shared, name
            assert ecdh(pair_b.private, pair_a.public).hex() == shared, name

    def test_ed25519(self):
        for name, private, public, message, signature in read_vectors("primitives/ed25519.vec"):
            pair = signing_keypair_from_seed(bytes.fromhex(private))
            assert pair.public.hex() == public, name
            assert sign(pair.private, bytes.fromhex(message)).hex() == signature, name
            assert verify(pair.public, bytes.fromhex(message), bytes.fromhex(signature)), name


class TestHash:
    def test_deterministic(self):
        data = secrets.token_bytes(100)
        assert hash_data(data) == hash_data(data)

    def test_append_changes_digest(self):
        data = secrets.token_bytes(64)
        assert hash_data(data) != hash_data(data + b"\x00")

    def test_length(self):
        assert len(hash_data(b"")) == 32


class TestMac:
    def test_deterministic(self):
        k, d = key32(), secrets.token_bytes(50)
        assert mac(k, d) == mac(k, d)

    def test_distinct_keys_distinct_macs(self):
        d = secrets.token_bytes(50)
        for _ in range(50):
            assert mac(key32(), d) != mac(key32(), d)

    def test_verify_helper(self):
        k, d = key32(), b"payload"
        tag = mac(k, d)
        assert mac_verify(k, d, tag)
        assert not mac_verify(k, d, tag[:-1] + bytes([tag[-1] ^ 1]))


class TestKdf:
    def test_label_separation(self):
        s, c = secrets.token_bytes(32), secrets.token_bytes(16)
        assert kdf(s, c, "seal", 32) != kdf(s, c, "session", 32)

    def test_context_separation(self):
        s = secrets.token_bytes(32)
        assert kdf(s, b"ctx-1", "seal", 32) != kdf(s, b"ctx-2", "seal", 32)

    def test_deterministic(self):
        s, c = secrets.token_bytes(32), secrets.token_bytes(16)
        assert kdf(s, c, "seal", 32) == kdf(s, c, "seal", 32)

    @pytest.mark.parametrize("out_len", [15, 65, 0, 128])
    def test_bad_length(self, out_len):
        with pytest.raises(BadLengthError):
            kdf(b"secret", b"ctx", "label", out_len)

    @pytest.mark.parametrize("out_len", [16, 33, 64])
    def test_output_length(self, out_len):
        assert len(kdf(b"secret", b"ctx", "label", out_len)) == out_len


class TestAead:
    @given(
        plaintext=st.binary(max_size=2048),
        assoc=st.binary(max_size=256),
    )
    @settings(max_examples=60, deadline=None)
    def test_roundtrip(self, plaintext, assoc):
        k, nonce = key16(), secrets.token_bytes(12)
        ct, tag = aead_seal(k, nonce, plaintext, assoc)
        assert len(ct) == len(plaintext)
        assert aead_open(k, nonce, ct, tag, assoc) == plaintext

    def test_flipped_tag_fails(self):
        k, nonce = key16(), secrets.token_bytes(12)
        ct, tag = aead_seal(k, nonce, b"data", b"ad")
        with pytest.raises(AuthFailureError):
            aead_open(k, nonce, ct, tag[:-1] + bytes([tag[-1] ^ 1]), b"ad")

    def test_wrong_assoc_data_fails(self):
        k, nonce = key16(), secrets.token_bytes(12)
        ct, tag = aead_seal(k, nonce, b"data", b"ad")
        with pytest.raises(AuthFailureError):
            aead_open(k, nonce, ct, tag, b"xd")

    def test_wrong_key_fails(self):
        nonce = secrets.token_bytes(12)
        ct, tag = aead_seal(key16(), nonce, b"data", b"ad")
        with pytest.raises(AuthFailureError):
            aead_open(key16(), nonce, ct, tag, b"ad")

    def test_largest_frame_payload_roundtrips(self):
        # Contract upper bound: 1 MiB plaintext with 4 KiB associated data.
        k, nonce = key16(), secrets.token_bytes(12)
        plaintext = secrets.token_bytes(1 << 20)
        assoc = secrets.token_bytes(4 << 10)
        ct, tag = aead_seal(k, nonce, plaintext, assoc)
        assert aead_open(k, nonce, ct, tag, assoc) == plaintext

    def test_single_bit_mutations_always_fail(self):
        # Module invariant: 10,000 randomized single-bit mutations across
        # ciphertext, tag, and associated data all raise.
        import random

        rng = random.Random(1234)
        k, nonce = key16(), secrets.token_bytes(12)
        assoc = secrets.token_bytes(32)
        plaintext = secrets.token_bytes(256)
        ct, tag = aead_seal(k, nonce, plaintext, assoc)
        for _ in range(10_000):
            target = rng.randrange(3)
            blob = [bytearray(ct), bytearray(tag), bytearray(assoc)][target]
            index = rng.randrange(len(blob))
            blob[index] ^= 1 << rng.randrange(8)
            mutated = [bytes(b) for b in (ct, tag, assoc)]
            mutated[target] = bytes(blob)
            with pytest.raises(AuthFailureError):
                aead_open(k, nonce, mutated[0], mutated[1], mutated[2])


class TestSignatures:
    def test_roundtrip(self):
        pair = signing_keypair_from_seed(secrets.token_bytes(32))
        message = secrets.token_bytes(80)
        assert verify(pair.public, message, sign(pair.private, message))

    def test_flipped_message_fails(self):
        pair = signing_keypair_from_seed(secrets.token_bytes(32))
        message = bytearray(secrets.token_bytes(80))
        signature = sign(pair.private, bytes(message))
        message[0] ^= 1
        assert not verify(pair.public, bytes(message), signature)

    def test_wrong_public_key_fails(self):
        pair = signing_keypair_from_seed(secrets.token_bytes(32))
        other = signing_keypair_from_seed(secrets.token_bytes(32))
        message = b"message"
        assert not verify(other.public, message, sign(pair.private, message))

    def test_malformed_key(self):
        with pytest.raises(MalformedKeyError):
            sign(b"short", b"message")
        with pytest.raises(MalformedKeyError):
            verify(b"short", b"message", b"sig")


class TestEcdh:
    def test_symmetry_many_pairs(self):
        # Module invariant: symmetry over 1,000 random keypair pairs.
        for _ in range(1_000):
            a = exchange_keypair_from_seed(secrets.token_bytes(32))
            b = exchange_keypair_from_seed(secrets.token_bytes(32))
            assert ecdh(a.private, b.public) == ecdh(b.private, a.public)

    def test_third_party_differs(self):
        a = exchange_keypair_from_seed(secrets.token_bytes(32))
        b = exchange_keypair_from_seed(secrets.token_bytes(32))
        c = exchange_keypair_from_seed(secrets.token_bytes(32))
        assert ecdh(a.private, b.public) != ecdh(a.private, c.public)

    def test_invalid_point(self):
        a = exchange_keypair_from_seed(secrets.token_bytes(32))
        with pytest.raises(InvalidPointError):
            ecdh(a.private, bytes(32))


class TestTypes:
    def test_symmetric_key_length(self):
        with pytest.raises(BadLengthError):
            SymmetricKey(data=b"short", purpose="p")
        with pytest.raises(BadLengthError):
            SymmetricKey(data=bytes(32), purpose="")

    def test_keypair_parts(self):
        with pytest.raises(MalformedKeyError):
            KeyPair(public=bytes(31), private=bytes(32))

    def test_private_part_not_in_repr(self):
        pair = signing_keypair_from_seed(secrets.token_bytes(32))
        assert pair.private.hex() not in repr(pair)
        key = SymmetricKey(data=secrets.token_bytes(32), purpose="seal")
        assert key.data.hex() not in repr(key)
