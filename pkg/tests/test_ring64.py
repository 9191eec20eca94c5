import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lutmpc.errors import ConfigInvalid, RangeError
from lutmpc.ring64 import (DRELU_CFG, EXP_CFG, INVERSE_CFG, RING_CFG, SIGMOID_CFG, FixedCfg,
                           decode_fixed, encode_fixed, floor_shift, in_grid, shift_round,
                           to_ring, to_signed, trunc_raw, truncate_share)

i64 = st.integers(-(1 << 63), (1 << 63) - 1)


def test_layouts():
    assert (SIGMOID_CFG.raw_min, SIGMOID_CFG.raw_max) == (-32768, 32767)
    assert DRELU_CFG.grid_size == 32
    assert EXP_CFG.scale == 1024 and INVERSE_CFG.scale == 4
    assert RING_CFG.total_bits == 64
    assert SIGMOID_CFG.grid_real()[0] == -4.0


@pytest.mark.parametrize("args", [(0, 13, 13), (3, 13, 17), (40, 30, 70), (3, -1, 2)])
def test_bad_layout(args):
    with pytest.raises(ConfigInvalid):
        FixedCfg(*args)


@given(i64)
def test_signed_roundtrip(v):
    assert to_signed(to_ring(v)) == v
    arr = np.array([v], dtype=np.int64)
    assert to_signed(to_ring(arr))[0] == v


@given(st.integers(SIGMOID_CFG.raw_min, SIGMOID_CFG.raw_max))
def test_encode_decode_grid(raw):
    x = raw / SIGMOID_CFG.scale
    e = encode_fixed(x, SIGMOID_CFG)
    assert to_signed(e) == raw
    assert decode_fixed(e, SIGMOID_CFG) == x
    assert in_grid(e, SIGMOID_CFG)


def test_encode_rounds_half_away():
    cfg = FixedCfg(4, 1, 5)
    assert to_signed(encode_fixed(0.25, cfg)) == 1
    assert to_signed(encode_fixed(-0.25, cfg)) == -1
    assert to_signed(encode_fixed(np.array([0.24, -0.24]), cfg)).tolist() == [0, 0]


def test_encode_range():
    with pytest.raises(RangeError):
        encode_fixed(4.0, SIGMOID_CFG)
    with pytest.raises(RangeError):
        encode_fixed(np.array([0.0, np.nan]), SIGMOID_CFG)
    assert to_signed(encode_fixed(-4.0, SIGMOID_CFG)) == -32768


@settings(max_examples=300)
@given(st.integers(-(1 << 40), 1 << 40), st.integers(0, (1 << 64) - 1), st.integers(1, 20))
def test_share_truncation_off_by_one(x, r, t):
    s0 = r
    s1 = (x - r) % (1 << 64)
    got = to_signed((truncate_share(s0, t, 0) + truncate_share(s1, t, 1)) % (1 << 64))
    # fails only when r - x wraps, i.e. r within |x| of 0 or 2^64
    if (1 << 41) <= r <= (1 << 64) - (1 << 41):
        assert got - (x >> t) in (0, 1)


def test_truncation_arrays_match_scalars(rng):
    v = rng.integers(0, 1 << 64, size=50, dtype=np.uint64)
    for party in (0, 1):
        arr = trunc_raw(v, 13, party)
        assert [int(a) for a in arr] == [trunc_raw(int(x), 13, party) for x in v]
    with pytest.raises(ValueError):
        trunc_raw(v, 64, 0)


def test_stochastic_truncation_rate():
    # P(floor+1) equals the discarded fraction
    rng = np.random.default_rng(5)
    x, t, n = -12345, 4, 100_000
    r = rng.integers(0, 1 << 64, size=n, dtype=np.uint64)
    s1 = np.uint64(x & ((1 << 64) - 1)) - r
    got = to_signed(trunc_raw(r, t, 0) + trunc_raw(s1, t, 1)) - (x >> t)
    frac = (x % (1 << t)) / (1 << t)
    assert set(np.unique(got).tolist()) <= {0, 1}
    assert abs(got.mean() - frac) < 0.01


@given(st.lists(i64.map(lambda v: v >> 2), min_size=1, max_size=20), st.integers(1, 12))
def test_shift_round_modes(xs, t):
    x = np.array(xs, dtype=np.int64)
    fl = floor_shift(x, t)
    assert np.array_equal(shift_round(x, t, "floor"), fl)
    near = shift_round(x, t, "nearest")
    assert np.all((near - fl >= 0) & (near - fl <= 1))
    sto = shift_round(x, t, np.random.default_rng(0))
    assert np.all((sto - fl >= 0) & (sto - fl <= 1))
    exact = (x & ((1 << t) - 1)) == 0
    assert np.array_equal(sto[exact], fl[exact])
    with pytest.raises(ValueError):
        shift_round(x, t, "bogus")
