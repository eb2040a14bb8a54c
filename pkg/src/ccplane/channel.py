"""Attested secure channel between the untrusted host side and a trust domain.

The handshake binds the channel to an attested peer identity: the shared
secret comes from a key exchange against the peer's attested public key,
and every directional key is derived with the workload domain's
measurement as context, so two endpoints that disagree about the peer's
identity or measurement derive different keys and fail key confirmation.

Each frame carries an AEAD ciphertext (header as associated data) plus an
outer MAC over the entire preceding frame, an encrypt-then-MAC composition
with independently derived keys:

  "ARCF" || version u8 || direction u8 || seq u64 BE || aead-nonce(12) ||
  ct-len u32 BE || ciphertext || aead-tag(16) || outer-mac(32)

  outer-mac = HMAC(mac-key, header || aead-nonce || ciphertext || aead-tag)

The AEAD nonce is the direction byte repeated four times followed by the
sequence number, so frames are deterministic given keys and sequence.
Replay protection is strict exact-sequence: the receiver accepts only the
next expected number, so any duplication, drop, or reorder is detected at
the first deviation.
"""

from __future__ import annotations

import enum
import queue
import socket
import threading
from dataclasses import dataclass, field

from .errors import (
    AeadFailureError,
    AuthFailureError,
    ChannelError,
    ConnectFailureError,
    FrameTooLargeError,
    HandshakeIdentityMismatchError,
    MacFailureError,
    MalformedFrameError,
    ReplayOrGapError,
    SequenceExhaustedError,
)
from .measurement import Measurement
from .primitives import (
    AEAD_TAG_LEN,
    KeyPair,
    SymmetricKey,
    aead_open,
    aead_seal,
    ecdh,
    kdf,
    mac,
    mac_verify,
)

FRAME_MAGIC = b"ARCF"
FRAME_VERSION = 1
HEADER_LEN = 4 + 1 + 1 + 8
MAX_PLAINTEXT = 1 << 20
MAX_SEQ = (1 << 64) - 1

_CONFIRM_CONTEXT = b"key-confirm"


class Role(enum.Enum):
    INITIATOR = 0
    RESPONDER = 1


class TransportKind(enum.Enum):
    IN_PROCESS = "in-process"
    LOOPBACK_SOCKET = "loopback-socket"


class Transport:
    """Ordered duplex byte stream; both concrete kinds implement this."""

    def send_all(self, data: bytes) -> None:
        raise NotImplementedError

    def recv_exact(self, n: int) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    """Queue-pair endpoint modeling a host-guest socket without a network stack."""

    def __init__(self, timeout: float = 10.0):
        self._rx: queue.Queue[bytes] = queue.Queue()
        self._peer: "InProcessTransport | None" = None
        self._buffer = bytearray()
        self._timeout = timeout
        self._closed = False

    @classmethod
    def pair(cls, timeout: float = 10.0) -> "tuple[InProcessTransport, InProcessTransport]":
        a, b = cls(timeout), cls(timeout)
        a._peer, b._peer = b, a
        return a, b

    def send_all(self, data: bytes) -> None:
        if self._closed or self._peer is None:
            raise ChannelError("transport is closed")
        self._peer._rx.put(bytes(data))

    def recv_exact(self, n: int) -> bytes:
        while len(self._buffer) < n:
            if self._closed:
                raise ChannelError("transport is closed")
            try:
                chunk = self._rx.get(timeout=self._timeout)
            except queue.Empty:
                raise ChannelError("transport receive timed out") from None
            self._buffer.extend(chunk)
        out = bytes(self._buffer[:n])
        del self._buffer[:n]
        return out

    def close(self) -> None:
        self._closed = True


_registry_lock = threading.Lock()
_registry: dict[str, InProcessTransport] = {}


class LoopbackTransport(Transport):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.settimeout(10.0)

    def send_all(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ChannelError(f"socket send failed: {exc}") from exc

    def recv_exact(self, n: int) -> bytes:
        chunks = bytearray()
        while len(chunks) < n:
            try:
                chunk = self._sock.recv(n - len(chunks))
            except OSError as exc:
                raise ChannelError(f"socket receive failed: {exc}") from exc
            if not chunk:
                raise ChannelError("socket closed mid-message")
            chunks.extend(chunk)
        return bytes(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def accept_transport(kind: TransportKind, address) -> Transport:
    """Listen-side connect; returns a connected duplex stream.

    In-process endpoints rendezvous through a named registry: accept
    registers the peer side for a later open. Socket endpoints bind the
    loopback port and block for one connection.
    """
    if kind is TransportKind.IN_PROCESS:
        ours, theirs = InProcessTransport.pair()
        with _registry_lock:
            if address in _registry:
                raise ConnectFailureError(f"in-process name {address!r} already registered")
            _registry[address] = theirs
        return ours
    try:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(("127.0.0.1", int(address)))
        listener.listen(1)
        conn, _ = listener.accept()
        listener.close()
        return LoopbackTransport(conn)
    except OSError as exc:
        raise ConnectFailureError(f"loopback accept failed: {exc}") from exc


def open_transport(kind: TransportKind, address) -> Transport:
    """Dial-side connect; fails if no peer is waiting at the address."""
    if kind is TransportKind.IN_PROCESS:
        with _registry_lock:
            endpoint = _registry.pop(address, None)
        if endpoint is None:
            raise ConnectFailureError(f"no in-process endpoint registered at {address!r}")
        return endpoint
    try:
        sock = socket.create_connection(("127.0.0.1", int(address)), timeout=10.0)
        return LoopbackTransport(sock)
    except OSError as exc:
        raise ConnectFailureError(f"loopback connect failed: {exc}") from exc


@dataclass
class HandshakeState:
    """Directional keys and sequence counters for one established channel."""

    local_keys: KeyPair = field(repr=False)
    peer_public: bytes
    send_key: SymmetricKey = field(repr=False)
    recv_key: SymmetricKey = field(repr=False)
    mac_send_key: SymmetricKey = field(repr=False)
    mac_recv_key: SymmetricKey = field(repr=False)
    send_direction: int = 0
    recv_direction: int = 1
    send_seq: int = 0
    recv_seq: int = 0
    closed: bool = False

    def close(self) -> None:
        """Drop key material; the endpoint is unusable afterwards."""
        self.closed = True
        zero16 = SymmetricKey(data=bytes(16), purpose="erased")
        zero32 = SymmetricKey(data=bytes(32), purpose="erased")
        self.send_key = self.recv_key = zero16
        self.mac_send_key = self.mac_recv_key = zero32


def _derive_state(
    local: KeyPair, peer_public: bytes, peer_measurement: Measurement, role: Role
) -> HandshakeState:
    shared = ecdh(local.private, peer_public)
    digest = peer_measurement.digest
    c2s_enc = SymmetricKey(kdf(shared, digest, "c2s-enc", 16), "c2s-enc")
    s2c_enc = SymmetricKey(kdf(shared, digest, "s2c-enc", 16), "s2c-enc")
    c2s_mac = SymmetricKey(kdf(shared, digest, "c2s-mac", 32), "c2s-mac")
    s2c_mac = SymmetricKey(kdf(shared, digest, "s2c-mac", 32), "s2c-mac")
    if role is Role.INITIATOR:
        return HandshakeState(
            local_keys=local,
            peer_public=peer_public,
            send_key=c2s_enc,
            recv_key=s2c_enc,
            mac_send_key=c2s_mac,
            mac_recv_key=s2c_mac,
            send_direction=0,
            recv_direction=1,
        )
    return HandshakeState(
        local_keys=local,
        peer_public=peer_public,
        send_key=s2c_enc,
        recv_key=c2s_enc,
        mac_send_key=s2c_mac,
        mac_recv_key=c2s_mac,
        send_direction=1,
        recv_direction=0,
    )


def _confirm_tag(state: HandshakeState, role: Role, peer_measurement: Measurement) -> bytes:
    if role is Role.INITIATOR:
        initiator_pub, responder_pub = state.local_keys.public, state.peer_public
    else:
        initiator_pub, responder_pub = state.peer_public, state.local_keys.public
    transcript = (
        _CONFIRM_CONTEXT
        + bytes([state.send_direction])
        + initiator_pub
        + responder_pub
        + peer_measurement.digest
    )
    return mac(state.mac_send_key, transcript)


def _expected_peer_confirm(
    state: HandshakeState, role: Role, peer_measurement: Measurement
) -> bytes:
    if role is Role.INITIATOR:
        initiator_pub, responder_pub = state.local_keys.public, state.peer_public
    else:
        initiator_pub, responder_pub = state.peer_public, state.local_keys.public
    transcript = (
        _CONFIRM_CONTEXT
        + bytes([state.recv_direction])
        + initiator_pub
        + responder_pub
        + peer_measurement.digest
    )
    return mac(state.mac_recv_key, transcript)


def handshake(
    local: KeyPair,
    peer_attested_public: bytes,
    peer_measurement: Measurement,
    role: Role,
    transport: Transport,
) -> HandshakeState:
    """Establish directional keys bound to the attested peer identity.

    The caller must have obtained ``peer_attested_public`` from an
    ACCEPTED attestation verdict. Key confirmation MACs the transcript in
    both directions; a peer that holds a different key or believes a
    different measurement fails here. The responder confirms first; an
    initiator that cannot verify it answers with an abort token so neither
    side blocks on a peer that already gave up.
    """
    state = _derive_state(local, peer_attested_public, peer_measurement, role)
    ours = _confirm_tag(state, role, peer_measurement)
    if role is Role.RESPONDER:
        transport.send_all(ours)
        theirs = transport.recv_exact(32)
        if theirs != _expected_peer_confirm(state, role, peer_measurement):
            raise HandshakeIdentityMismatchError("initiator key confirmation failed")
    else:
        theirs = transport.recv_exact(32)
        if theirs != _expected_peer_confirm(state, role, peer_measurement):
            transport.send_all(bytes(32))
            raise HandshakeIdentityMismatchError("responder key confirmation failed")
        transport.send_all(ours)
    return state


def _frame_header(direction: int, seq: int) -> bytes:
    return FRAME_MAGIC + bytes([FRAME_VERSION, direction]) + seq.to_bytes(8, "big")


def _frame_nonce(direction: int, seq: int) -> bytes:
    return bytes([direction] * 4) + seq.to_bytes(8, "big")


def encode_frame(state: HandshakeState, plaintext: bytes) -> bytes:
    """Seal one frame and advance the send sequence."""
    if state.closed:
        raise ChannelError("channel endpoint is closed")
    if len(plaintext) > MAX_PLAINTEXT:
        raise FrameTooLargeError(f"plaintext exceeds {MAX_PLAINTEXT} bytes")
    if state.send_seq > MAX_SEQ:
        raise SequenceExhaustedError("send sequence exhausted")
    header = _frame_header(state.send_direction, state.send_seq)
    nonce = _frame_nonce(state.send_direction, state.send_seq)
    ciphertext, tag = aead_seal(state.send_key, nonce, plaintext, header)
    outer = mac(state.mac_send_key, header + nonce + ciphertext + tag)
    state.send_seq += 1
    return header + nonce + len(ciphertext).to_bytes(4, "big") + ciphertext + tag + outer


def decode_frame(state: HandshakeState, raw: bytes) -> bytes:
    """Verify and open one frame: outer MAC, then AEAD, then sequence."""
    if state.closed:
        raise ChannelError("channel endpoint is closed")
    if len(raw) < HEADER_LEN + 12 + 4 + AEAD_TAG_LEN + 32:
        raise MalformedFrameError("frame too short")
    if raw[:4] != FRAME_MAGIC:
        raise MalformedFrameError("bad frame magic")
    if raw[4] != FRAME_VERSION:
        raise MalformedFrameError(f"unsupported frame version {raw[4]}")
    direction = raw[5]
    seq = int.from_bytes(raw[6:14], "big")
    nonce = raw[14:26]
    ct_len = int.from_bytes(raw[26:30], "big")
    end = 30 + ct_len + AEAD_TAG_LEN + 32
    if end != len(raw):
        raise MalformedFrameError("frame length does not match declared ciphertext length")
    ciphertext = raw[30 : 30 + ct_len]
    tag = raw[30 + ct_len : 30 + ct_len + AEAD_TAG_LEN]
    outer = raw[30 + ct_len + AEAD_TAG_LEN : end]
    header = raw[:HEADER_LEN]
    if not mac_verify(state.mac_recv_key, header + nonce + ciphertext + tag, outer):
        raise MacFailureError("outer frame MAC failed")
    if direction != state.recv_direction or nonce != _frame_nonce(direction, seq):
        raise MalformedFrameError("frame direction or nonce inconsistent with header")
    try:
        plaintext = aead_open(state.recv_key, nonce, ciphertext, tag, header)
    except AuthFailureError as exc:
        raise AeadFailureError("frame AEAD failed after MAC verified") from exc
    if seq != state.recv_seq:
        raise ReplayOrGapError(f"expected frame {state.recv_seq}, got {seq}")
    state.recv_seq += 1
    return plaintext


class SecureChannel:
    """One endpoint: a handshake state bound to a transport."""

    def __init__(self, state: HandshakeState, transport: Transport):
        self.state = state
        self.transport = transport

    def send(self, plaintext: bytes) -> None:
        self.transport.send_all(encode_frame(self.state, plaintext))

    def recv_raw(self) -> bytes:
        """Read exactly one frame's bytes off the transport."""
        prefix = self.transport.recv_exact(HEADER_LEN + 12 + 4)
        if prefix[:4] != FRAME_MAGIC:
            raise MalformedFrameError("bad frame magic")
        ct_len = int.from_bytes(prefix[26:30], "big")
        if ct_len > MAX_PLAINTEXT + AEAD_TAG_LEN:
            raise MalformedFrameError("declared ciphertext length too large")
        rest = self.transport.recv_exact(ct_len + AEAD_TAG_LEN + 32)
        return prefix + rest

    def recv(self) -> bytes:
        return decode_frame(self.state, self.recv_raw())

    def close(self) -> None:
        self.state.close()
        self.transport.close()


def establish(
    local: KeyPair,
    peer_attested_public: bytes,
    peer_measurement: Measurement,
    role: Role,
    transport: Transport,
) -> SecureChannel:
    return SecureChannel(
        handshake(local, peer_attested_public, peer_measurement, role, transport), transport
    )
