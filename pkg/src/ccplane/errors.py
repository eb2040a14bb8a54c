"""Exception hierarchy shared across the control plane."""

from __future__ import annotations


class CcplaneError(Exception):
    """Base class for every error raised by this package."""


# --- primitives ---

class BadLengthError(CcplaneError):
    """A byte-string input has a length outside its contract."""


class AuthFailureError(CcplaneError):
    """AEAD tag verification failed: tampering or wrong key/nonce/AD."""


class MalformedKeyError(CcplaneError):
    """Key material has the wrong length or structure."""


class InvalidPointError(CcplaneError):
    """Key-exchange input is not a usable public value."""


# --- measurement ---

class EmptyManifestError(CcplaneError):
    """A measurement was requested over an empty manifest."""


class ParseError(CcplaneError):
    """A persisted document failed to parse; carries field context."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{message} (field: {field})")
        self.field = field


# --- keyhier ---

class SealFailureError(CcplaneError):
    """Unseal under a mismatched context, root, or tampered blob."""


class MalformedBlobError(CcplaneError):
    """Sealed blob bytes do not parse as the expected layout."""


# --- teesim ---

class BadNonceError(CcplaneError):
    """Attestation nonce is not exactly 32 bytes."""


class ForeignReportError(CcplaneError):
    """A platform was asked to quote a report from another platform."""


class UnknownFaultError(CcplaneError):
    """Fault name does not map to a supported injection."""


# --- channel ---

class ChannelError(CcplaneError):
    """Base for secure-channel failures."""


class HandshakeIdentityMismatchError(ChannelError):
    """Peer key confirmation failed: wrong key or measurement binding."""


class FrameTooLargeError(ChannelError):
    """Plaintext exceeds the 1 MiB frame limit."""


class SequenceExhaustedError(ChannelError):
    """The 64-bit send sequence would wrap."""


class MacFailureError(ChannelError):
    """Outer frame MAC did not verify."""


class AeadFailureError(ChannelError):
    """Inner AEAD open failed after the outer MAC verified."""


class ReplayOrGapError(ChannelError):
    """Frame sequence number is not the next expected value."""


class MalformedFrameError(ChannelError):
    """Frame bytes do not parse as the wire layout."""


class ConnectFailureError(ChannelError):
    """Transport endpoint could not be connected."""


# --- ccm ---

class InvalidSpecError(CcplaneError):
    """Deployment spec violates a structural invariant."""

    def __init__(self, field: str, message: str | None = None):
        super().__init__(message or f"invalid deployment spec field: {field}")
        self.field = field


class AttestationRejectedError(CcplaneError):
    """Deployment attestation returned REJECTED; carries the reason code."""

    def __init__(self, reason, container=None):
        super().__init__(f"attestation rejected: {getattr(reason, 'value', reason)}")
        self.reason = reason
        self.container = container


class RootfsUnsealFailureError(CcplaneError):
    """Encrypted rootfs could not be unsealed inside the domain."""


class BootFailureError(CcplaneError):
    """Domain boot pipeline failed before attestation."""


class NotRunningError(CcplaneError):
    """Operation requires a container in the Running state."""


# --- attestation / adversary ---

class RoleMismatchError(CcplaneError):
    """Transitive attestation was given quotes of the wrong kind."""


class ScenarioSetupError(CcplaneError):
    """Attack scenario could not set up its deployment context."""
