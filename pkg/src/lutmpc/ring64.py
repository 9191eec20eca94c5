"""Arithmetic in Z_{2^64} with two's-complement fixed-point encoding.

Ring values are held either as Python ints in ``[0, 2^64)`` or as numpy
``uint64`` arrays. numpy already wraps unsigned arithmetic modulo 2^64, so
vectorised add, sub and mul need no extra reduction.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, RangeError

RING_BITS = 64
RING_SIZE = 1 << RING_BITS
RING_MASK = RING_SIZE - 1


@dataclass(frozen=True)
class FixedCfg:
    """Bit layout of a fixed-point number.

    The sign bit is counted inside ``int_bits``, so a layout with
    ``int_bits=3`` covers the real interval [-4, 4).
    """

    int_bits: int
    frac_bits: int
    total_bits: int

    def __post_init__(self):
        if self.frac_bits < 0 or self.int_bits < 1:
            raise ConfigInvalid(f"bad bit split {self}")
        if self.int_bits + self.frac_bits != self.total_bits:
            raise ConfigInvalid(f"int_bits + frac_bits != total_bits in {self}")
        if not 1 <= self.total_bits <= RING_BITS:
            raise ConfigInvalid(f"total_bits must lie in [1, 64], got {self.total_bits}")

    @property
    def scale(self):
        return 1 << self.frac_bits

    @property
    def raw_min(self):
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self):
        """Largest raw integer (inclusive)."""
        return (1 << (self.total_bits - 1)) - 1

    @property
    def grid_size(self):
        return 1 << self.total_bits

    def grid_raw(self):
        """All raw signed grid values in ascending order, as int64."""
        return np.arange(self.raw_min, self.raw_max + 1, dtype=np.int64)

    def grid_real(self):
        return self.grid_raw() / self.scale


# Layouts used by the activation tables and the 64-bit working values.
SIGMOID_CFG = FixedCfg(3, 13, 16)
DRELU_CFG = FixedCfg(4, 1, 5)
EXP_CFG = FixedCfg(6, 10, 16)
INVERSE_CFG = FixedCfg(14, 2, 16)
RING_CFG = FixedCfg(51, 13, 64)
FRAC_BITS = 13


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def to_ring(raw):
    """Map signed integers (int or int64 array) to their ring representative."""
    if isinstance(raw, (int, np.integer)):
        return int(raw) & RING_MASK
    return np.asarray(raw, dtype=np.int64).view(np.uint64)


def to_signed(e):
    """Interpret ring values as signed 64-bit integers."""
    if isinstance(e, (int, np.integer)):
        e = int(e) & RING_MASK
        return e - RING_SIZE if e >> 63 else e
    return np.asarray(e, dtype=np.uint64).view(np.int64)


def encode_fixed(x, cfg):
    """Encode real ``x`` as a two's-complement ring element.

    Args:
        x: float or array of floats.
        cfg: target layout.

    Returns:
        int for scalar input, uint64 array otherwise.

    Raises:
        RangeError: if the rounded value does not fit ``cfg``.
    """
    scalar = np.ndim(x) == 0
    v = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise RangeError("non-finite value")
    raw = _round_half_away(v * cfg.scale)
    if raw.size and (raw.min() < cfg.raw_min or raw.max() > cfg.raw_max):
        raise RangeError(f"value outside {cfg}")
    if scalar:
        return int(raw) & RING_MASK
    return raw.astype(np.int64).view(np.uint64)


def decode_fixed(e, cfg):
    """Decode a ring element (or array) to float using ``cfg.frac_bits``."""
    s = to_signed(e)
    if isinstance(s, int):
        return s / cfg.scale
    return s.astype(np.float64) / cfg.scale


def in_grid(e, cfg):
    """True where the signed value of ``e`` lies in the range of ``cfg``."""
    s = to_signed(e)
    return (s >= cfg.raw_min) & (s <= cfg.raw_max)


def trunc_raw(v, t, party):
    """Local share truncation on raw ring values (int or uint64 array)."""
    if not 0 <= t < RING_BITS:
        raise ValueError("truncation width must be in [0, 64)")
    if isinstance(v, (int, np.integer)):
        v = int(v) & RING_MASK
        if party == 0:
            return v >> t
        return (-(((-v) & RING_MASK) >> t)) & RING_MASK
    v = np.asarray(v, dtype=np.uint64)
    if party == 0:
        return v >> np.uint64(t)
    return np.uint64(0) - ((np.uint64(0) - v) >> np.uint64(t))


def truncate_share(s, t, party):
    """Truncate one party's share by ``t`` bits.

    Party 0 keeps ``floor(s / 2^t)``; party 1 keeps
    ``n - floor((n - s) / 2^t)``. Accepts raw ring values or a ``Share``.
    """
    if hasattr(s, "value"):
        return s.replace(trunc_raw(s.value, t, party))
    return trunc_raw(s, t, party)


def floor_shift(raw_signed, t):
    """Plaintext reference of truncation: arithmetic right shift."""
    if isinstance(raw_signed, (int, np.integer)):
        return int(raw_signed) >> t
    return np.asarray(raw_signed, dtype=np.int64) >> np.int64(t)


def shift_round(raw_signed, t, rounding="floor"):
    """Plaintext model of a ``t``-bit truncation under a rounding rule.

    ``"floor"`` is the exact arithmetic shift and ``"nearest"`` rounds half
    up. A numpy Generator selects stochastic rounding: the floor plus one
    with probability equal to the discarded fraction, which is the
    distribution of share truncation on uniformly random shares.
    """
    x = np.asarray(raw_signed, dtype=np.int64)
    if t == 0 or (isinstance(rounding, str) and rounding == "floor"):
        return x >> np.int64(t)
    if isinstance(rounding, str):
        if rounding != "nearest":
            raise ValueError(f"unknown rounding {rounding!r}")
        return (x + np.int64(1 << (t - 1))) >> np.int64(t)
    low = (x & np.int64((1 << t) - 1)).view(np.uint64)
    draw = rounding.integers(0, 1 << t, size=x.shape, dtype=np.uint64)
    return (x >> np.int64(t)) + (draw < low)
