"""Activation protocols built from table lookups and Beaver products.

Every table returns values with ``FRAC_BITS`` fractional bits in the 64-bit
ring, except DReLU, which returns a plain 0/1 ring value.
"""

import decimal
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigInvalid, MissingKey
from .ring64 import (DRELU_CFG, EXP_CFG, FRAC_BITS, INVERSE_CFG, SIGMOID_CFG, FixedCfg,
                     encode_fixed, shift_round, trunc_raw)
from .sharing import beaver_mul
from .tables_multi import MultiTableSet, query_multi
from .tables_single import query_single


class FuncId(IntEnum):
    SIGMOID = 1
    DRELU = 2
    EXP = 3
    INVERSE = 4
    IDENTITY = 15


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _drelu_repr(y):
    # y carries one fractional bit of floor(x + 1 - 2^-13); y >= 1 iff x > 0
    return (y >= 1.0).astype(np.float64)


def _exp_raw(x, frac_bits=FRAC_BITS):
    """exp(x) * 2^frac_bits rounded to nearest, exact where float64 exp is not."""
    ctx = decimal.Context(prec=40, rounding=decimal.ROUND_HALF_UP)
    scale = decimal.Decimal(1 << frac_bits)
    out = [int((ctx.exp(decimal.Decimal(float(v))) * scale).to_integral_value(
        rounding=decimal.ROUND_HALF_UP, context=ctx)) for v in np.ravel(x)]
    return np.array(out, dtype=np.int64).reshape(np.shape(x))


def _inverse(x):
    return 1.0 / np.maximum(x, 0.25)


@dataclass(frozen=True)
class FuncTableSpec:
    """A univariate function tabulated over the grid of ``in_cfg``.

    ``out_frac`` is the number of fractional bits of the stored outputs.
    ``shift`` is subtracted from the input before ``fn`` is applied.
    ``fn_raw``, when given, returns the rounded outputs as integers directly
    and replaces ``fn`` for table generation.
    """

    func_id: int
    in_cfg: FixedCfg
    fn: Callable
    out_frac: int = FRAC_BITS
    shift: float = 0.0
    fn_raw: Callable = None

    def quantized(self, x_real):
        """Reference outputs for real inputs, as ring values."""
        if self.fn_raw is not None:
            x = np.asarray(x_real, dtype=np.float64) - self.shift
            return np.asarray(self.fn_raw(x, self.out_frac), dtype=np.int64).view(np.uint64)
        y = self.fn(np.asarray(x_real, dtype=np.float64) - self.shift)
        return encode_fixed(y, FixedCfg(64 - self.out_frac, self.out_frac, 64))

    def table_values(self):
        return _table_values(self)


@lru_cache(maxsize=64)
def _table_values(spec):
    vals = spec.quantized(spec.in_cfg.grid_real())
    vals.setflags(write=False)
    return vals


SIGMOID = FuncTableSpec(FuncId.SIGMOID, SIGMOID_CFG, _sigmoid)
DRELU = FuncTableSpec(FuncId.DRELU, DRELU_CFG, _drelu_repr, out_frac=0)
EXP = FuncTableSpec(FuncId.EXP, EXP_CFG, np.exp, fn_raw=_exp_raw)
INVERSE = FuncTableSpec(FuncId.INVERSE, INVERSE_CFG, _inverse)

# Truncation widths that move a 13-fractional-bit value onto each grid.
DRELU_TRUNC = FRAC_BITS - DRELU_CFG.frac_bits
EXP_TRUNC = FRAC_BITS - EXP_CFG.frac_bits
INVERSE_TRUNC = FRAC_BITS - INVERSE_CFG.frac_bits


class Lookup:
    """Table access for one function, in single-use or multi-use mode.

    Multi-use lookups also pull one noise share and one conversion pair per
    query from ``provider``.
    """

    def __init__(self, tset, provider=None):
        self.tset = tset
        self.provider = provider
        self.multi = isinstance(tset, MultiTableSet) or getattr(tset, "multi", False)

    @property
    def func_id(self):
        return self.tset.func_id

    def __call__(self, session, x):
        xv = np.asarray(x, dtype=np.uint64)
        if getattr(self.tset, "dry", False):
            # consumption dry run: account the query, return placeholder shares
            self.tset.record(xv.size)
            if self.multi:
                self.provider.noise(self.tset.func_id, xv.size)
                self.provider.conversion(xv.size, self.tset.cfg.grid_size)
            return np.zeros(xv.shape, dtype=np.uint64)
        if not self.multi:
            return query_single(session, xv, self.tset)
        noise = self.provider.noise(self.tset.func_id, xv.size)
        pair = self.provider.conversion(xv.size, self.tset.cfg.grid_size)
        return query_multi(session, xv, self.tset, noise, pair)


def drelu(session, x_share, lookup):
    """Shares of 1 where x > 0 and 0 elsewhere (one lookup).

    Party 1 adds ``2^13 - 1``, both truncate to one fractional bit, and the
    32-entry table answers whether the result is at least 1.

    Inputs must lie in [-9, 6.5) for the truncated value to stay on the
    table grid; outside it the lookup raises ``MissingKey``. Inputs in
    (-0.5, 0] may come out as 1 when the truncation rounds up.
    """
    xv = np.asarray(x_share, dtype=np.uint64)
    if session.party == 1:
        xv = xv + np.uint64((1 << FRAC_BITS) - 1)
    y = trunc_raw(xv, DRELU_TRUNC, session.party)
    return lookup(session, y)


def relu(session, x_share, drelu_share, triple):
    """max(0, x) as x * DReLU(x) with one Beaver product."""
    return beaver_mul(session, x_share, drelu_share, triple)


def sigmoid(session, x_share, lookup):
    """Sigmoid of a 13-fractional-bit share (one lookup)."""
    return lookup(session, x_share)


def softmax(session, x_shares, exp_lookup, inv_lookup, triple, in_trunc=EXP_TRUNC):
    """Row-wise softmax of shared logits.

    Args:
        x_shares: ``(rows, d)`` shares; ``in_trunc`` bits are dropped before
            the EXP lookup (3 for 13-fractional-bit inputs).
        triple: Beaver triple with ``a`` of shape ``(rows, d)`` and ``b`` of
            shape ``(rows, 1)``, so each row opens its inverse only once.

    Returns:
        ``(rows, d)`` shares with 13 fractional bits.
    """
    xv = np.asarray(x_shares, dtype=np.uint64)
    if xv.ndim == 1:
        xv = xv[None, :]
    p = session.party
    e = exp_lookup(session, trunc_raw(xv, in_trunc, p) if in_trunc else xv)
    s = e.sum(axis=1, dtype=np.uint64, keepdims=True)
    inv = inv_lookup(session, trunc_raw(s, INVERSE_TRUNC, p))
    prod = beaver_mul(session, e, inv, triple)
    return trunc_raw(prod, FRAC_BITS, p)


def softmax_reference(x_real, in_frac=EXP_CFG.frac_bits):
    """Plaintext softmax following the protocol's quantisation pipeline."""
    raw = np.asarray(np.round(np.asarray(x_real) * (1 << in_frac)), dtype=np.int64)
    return softmax_fixed(raw, 0)


def softmax_fixed(raw_in, in_trunc, rounding="floor"):
    """Fixed-point softmax on signed raw inputs, truncating where the protocol does."""
    raw = shift_round(np.atleast_2d(np.asarray(raw_in, dtype=np.int64)), in_trunc, rounding)
    e = lookup_plain(EXP, raw).astype(np.int64)
    s = e.sum(axis=1, keepdims=True)
    inv = lookup_plain(INVERSE, shift_round(s, INVERSE_TRUNC, rounding)).astype(np.int64)
    prod = (e.view(np.uint64) * inv.view(np.uint64)).view(np.int64)
    return shift_round(prod, FRAC_BITS, rounding)


def lookup_plain(spec, raw):
    """Plaintext table evaluation on signed raw grid values."""
    raw = np.asarray(raw, dtype=np.int64)
    cfg = spec.in_cfg
    if raw.size and (raw.min() < cfg.raw_min or raw.max() > cfg.raw_max):
        raise MissingKey(f"input outside the {FuncId(spec.func_id).name} table range")
    return spec.table_values()[raw - cfg.raw_min]


def drelu_plain(raw13, rounding="floor"):
    """Plaintext DReLU via the reduced representation.

    With floor rounding this is exactly ``x > 0``; other rounding rules model
    the truncation band of the protocol just below zero.
    """
    y = shift_round(np.asarray(raw13, dtype=np.int64) + ((1 << FRAC_BITS) - 1), DRELU_TRUNC,
                    rounding)
    return lookup_plain(DRELU, y)


def spec_by_id(func_id):
    for spec in (SIGMOID, DRELU, EXP, INVERSE):
        if spec.func_id == func_id:
            return spec
    raise ConfigInvalid(f"unknown function id {func_id}")
