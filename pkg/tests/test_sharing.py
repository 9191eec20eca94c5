import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lutmpc import ec
from lutmpc.csp_offline import Dealer
from lutmpc.errors import DimensionMismatch, TagMismatch, TripleReuse
from lutmpc.net import run_parties
from lutmpc.ring64 import to_signed
from lutmpc.sharing import (Modulus, Share, beaver_matmul, beaver_mul, make_shares,
                            make_shares_mod, masked_matmul, open_values, reconstruct,
                            share_convert)


@given(st.integers(0, (1 << 64) - 1), st.integers(0, 2**32))
def test_make_reconstruct(x, seed):
    s0, s1 = make_shares(x, np.random.default_rng(seed))
    assert reconstruct(s0, s1) == x
    assert (s0.party, s1.party) == (0, 1)


def test_share_arrays_and_mod(rng):
    x = rng.integers(0, 1 << 64, size=(3, 4), dtype=np.uint64)
    s0, s1 = make_shares(x, rng)
    assert np.array_equal(reconstruct(s0, s1), x)
    r0, r1 = make_shares_mod([5, ec.N - 1], ec.N, rng)
    a = Share(r0, 0, Modulus.CURVE_N)
    b = Share(r1, 1, Modulus.CURVE_N)
    assert reconstruct(a, b) == [5, ec.N - 1]
    with pytest.raises(TagMismatch):
        reconstruct(s0, b)


def test_open_and_beaver(pair, rng):
    dealer = Dealer(3)
    x = rng.integers(-1000, 1000, size=(4, 5))
    y = rng.integers(-1000, 1000, size=(4, 1))
    xs = dealer.share_data(0, x)
    ys = dealer.share_data(1, y)
    p = [dealer.provider(i) for i in (0, 1)]

    def party(i):
        def run(s):
            t = p[i].beaver((4, 5), (4, 1))
            z = beaver_mul(s, xs[i], ys[i], t)
            with pytest.raises(TripleReuse):
                beaver_mul(s, xs[i], ys[i], t)
            return z, open_values(s, xs[i])
        return run

    (z0, o0), (z1, o1) = run_parties(party(0), party(1), pair)
    assert np.array_equal(to_signed(z0 + z1), x * y)
    assert np.array_equal(to_signed(o0), x) and np.array_equal(o0, o1)
    assert pair[0].stats.rounds == 2


def test_beaver_matmul(pair, rng):
    dealer = Dealer(4)
    a = rng.integers(-50, 50, size=(3, 6))
    b = rng.integers(-50, 50, size=(6, 2))
    sa, sb = dealer.share_data(0, a), dealer.share_data(1, b)
    p = [dealer.provider(i) for i in (0, 1)]
    out = run_parties(lambda s: beaver_matmul(s, sa[0], sb[0], p[0].matmul((3, 6), (6, 2))),
                      lambda s: beaver_matmul(s, sa[1], sb[1], p[1].matmul((3, 6), (6, 2))), pair)
    assert np.array_equal(to_signed(out[0] + out[1]), a @ b)
    with pytest.raises(DimensionMismatch):
        p[0].matmul((3, 6), (5, 2))


def test_masked_matmul(pair, rng):
    dealer = Dealer(5)
    X = rng.integers(-100, 100, size=(10, 4))
    w = rng.integers(-100, 100, size=(4, 1))
    d = rng.integers(-100, 100, size=(3, 1))
    xs, ws, ds = dealer.share_data(0, X), dealer.share_data(1, w), dealer.share_data(2, d)
    rows = [2, 5, 7]
    p = [dealer.provider(i) for i in (0, 1)]

    def party(i):
        def run(s):
            mid, U = p[i].data_mask(X.shape)
            E = open_values(s, xs[i] - U)
            mt = p[i].batch_triple(mid, rows, 1, 1)
            f = masked_matmul(s, xs[i][rows], ws[i], mt, E[rows])
            b = masked_matmul(s, xs[i][rows], ds[i], mt, E[rows], backward=True)
            with pytest.raises(TripleReuse):
                masked_matmul(s, xs[i][rows], ws[i], mt, E[rows])
            return f, b
        return run

    (f0, b0), (f1, b1) = run_parties(party(0), party(1), pair)
    assert np.array_equal(to_signed(f0 + f1), X[rows] @ w)
    assert np.array_equal(to_signed(b0 + b1), X[rows].T @ d)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, (1 << 16) - 1), min_size=1, max_size=8), st.integers(0, 1000))
def test_share_convert(xs, seed):
    from lutmpc.net import loopback_pair

    dealer = Dealer(seed)
    x = np.array(xs, dtype=np.int64)
    s = dealer.share_data(0, x)
    p = [dealer.provider(i) for i in (0, 1)]
    pair = loopback_pair(10.0)
    try:
        out = run_parties(lambda ss: share_convert(ss, s[0], p[0].conversion(len(xs), 1 << 16)),
                          lambda ss: share_convert(ss, s[1], p[1].conversion(len(xs), 1 << 16)),
                          pair)
    finally:
        for ss in pair:
            ss.close()
    assert reconstruct(out[0], out[1]) == xs
