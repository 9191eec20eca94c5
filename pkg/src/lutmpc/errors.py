"""Typed errors raised by the protocol engine."""


class LutMpcError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(LutMpcError, ValueError):
    """Value outside the representable fixed-point range."""


class TagMismatch(LutMpcError):
    """Shares with different modulus tags were combined."""


class TripleReuse(LutMpcError):
    """A Beaver or matrix triple was used twice."""


class PeerTimeout(LutMpcError):
    """The peer did not answer in time or closed the channel."""


class DimensionMismatch(LutMpcError, ValueError):
    """Operand shapes do not fit together."""


class MissingKey(LutMpcError, KeyError):
    """A derived lookup key is not present in the table."""

    def __str__(self):
        return Exception.__str__(self)


class TableExhausted(LutMpcError):
    """Every single-use table of a set has been consumed."""


class BudgetExhausted(LutMpcError):
    """The current multi-use table has no privacy budget left."""


class NoTablesLeft(LutMpcError):
    """All multi-use tables of a set are spent."""


class InvalidPoint(LutMpcError, ValueError):
    """An elliptic-curve point is off the curve, the identity, or malformed."""


class InsufficientSamples(LutMpcError):
    """Too few observations for a leakage estimate."""


class OfflineUnderprovisioned(LutMpcError):
    """The offline bundle ran out of correlated randomness."""


class CorruptBundle(LutMpcError):
    """A bundle file is truncated or fails its checksum."""


class VersionMismatch(LutMpcError):
    """A bundle or table file has an unsupported format version."""


class FrameCorrupt(LutMpcError):
    """A received frame is malformed, truncated or fails its checksum."""


class ConfigInvalid(LutMpcError, ValueError):
    """A run configuration is inconsistent."""


class ConnectionFailed(LutMpcError):
    """A TCP endpoint could not be reached."""
