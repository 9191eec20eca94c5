"""Acceptance criteria, one test per criterion.

Each test records a single ``CRITERION n: PASS|FAIL`` line (collected in the
terminal summary). Tolerances are pinned here and not tuned per run.
"""

import hashlib
import math
import os
import socket
import time

import mpmath
import numpy as np
import pytest

from lutmpc import datasets, ec
from lutmpc.activations import (DRELU, EXP, INVERSE, SIGMOID, FuncTableSpec, drelu,
                                lookup_plain, relu, softmax)
from lutmpc.csp_offline import Dealer, LookupMode, plan_run
from lutmpc.dxpriv import GeometricParams, audit_trace, mechanism_trace, sample_geometric
from lutmpc.errors import (BudgetExhausted, FrameCorrupt, InvalidPoint, LutMpcError, MissingKey,
                           NoTablesLeft, OfflineUnderprovisioned, TableExhausted, TripleReuse)
from lutmpc.ml_train import (TrainConfig, accuracy, batch_schedule, encode_features,
                             encode_labels, init_weights, offline_program, oracle_step,
                             plaintext_oracle_train, share_dataset, train, train_plain_data)
from lutmpc.net import (Frame, MemoryChannel, MsgType, Session, SocketChannel, decode_frame,
                        loopback_pair, run_parties)
from lutmpc.ring64 import FixedCfg, to_signed
from lutmpc.sharing import beaver_mul
from lutmpc.tables_multi import (AccessTrace, BudgetState, derive_sc, gen_multi_tables,
                                 kappa_key, query_multi, rebase_offset)
from lutmpc.tables_single import gen_single_tables, query_single

# pinned tolerances
C1_MAX_SECONDS = 120
C5_P0_TOL = 0.01
C5_TRIALS = 100_000
C5_RATIO_SLACK = 1.05
C5_MIN_COUNT = 10_000
C6_LSB = 1
C6_MAX_SECONDS = 600
C7_POINTS = 1.5
C10_CASES = 10_000

# sha256 of the little-endian int64 tables computed by the oracles below
FROZEN = {
    "sigmoid": "8e1a0d18f8237a56356872d86c8d32068fe9685d18ff3a8a600be24aa829a614",
    "exp": "a815417efe3ea0d03c0973d2ea7ef2afefd9b0b56e90659aa0e8859ef756bc40",
    "inverse": "531391397896b75fb2d7a230e42ee605806a464fb030fb3d8e43b3529a7f3d39",
    "drelu": "21be7134a13d354c23fb8a4e436e9af8a9e30b6c7478de6272df2aba42fea908",
}


def _digest(values):
    return hashlib.sha256(np.asarray(values, dtype="<i8").tobytes()).hexdigest()


def _oracle_tables():
    """Quantized reference functions computed with 40-digit arithmetic."""
    mpmath.mp.dps = 40
    half = mpmath.mpf(1) / 2
    grid = range(-32768, 32768)
    sig = [int(mpmath.floor(8192 / (1 + mpmath.exp(-mpmath.mpf(r) / 8192)) + half))
           for r in grid]
    exp = [int(mpmath.floor(8192 * mpmath.exp(mpmath.mpf(r) / 1024) + half)) for r in grid]
    # 1/x rounded half up; inputs at or below 1/4 use 1/4
    inv = [32768 if r <= 1 else (2 * 32768 + r) // (2 * r) for r in grid]
    dre = [int(r >= 2) for r in range(-16, 16)]
    return {"sigmoid": sig, "exp": exp, "inverse": inv, "drelu": dre}


def _lookup_all(dealer, spec, x, pair):
    s = dealer.share_data(0, x)
    t = [dealer.table_set(i, spec) for i in (0, 1)]
    out = run_parties(lambda ss: query_single(ss, s[0], t[0]),
                      lambda ss: query_single(ss, s[1], t[1]), pair)
    return to_signed(out[0] + out[1])


def _close(pair):
    for s in pair:
        s.close()


# 1 ---------------------------------------------------------------------------

def test_c1_exhaustive_tables(criterion):
    t0 = time.perf_counter()
    oracle = _oracle_tables()
    frozen_ok = all(_digest(oracle[k]) == FROZEN[k] for k in FROZEN)
    dealer = Dealer(101)
    details, ok = [], frozen_ok
    for name, spec in (("sigmoid", SIGMOID), ("drelu", DRELU), ("exp", EXP),
                       ("inverse", INVERSE)):
        pair = loopback_pair(120.0)
        try:
            got = _lookup_all(dealer, spec, spec.in_cfg.grid_raw(), pair)
        finally:
            _close(pair)
        match = float(np.mean(got == np.array(oracle[name])))
        ok &= match == 1.0
        details.append(f"{name}={match:.0%}")
    # materialised tables (as written to a bundle) for the 32-entry DReLU grid
    sets = gen_single_tables(DRELU, 32, (b"\x11" * 32, b"\x22" * 32), b"\x33" * 32)
    pair = loopback_pair(60.0)
    try:
        x = DRELU.in_cfg.grid_raw()
        r = np.random.default_rng(0).integers(0, 1 << 64, size=32, dtype=np.uint64)
        out = run_parties(lambda ss: query_single(ss, r, sets[0]),
                          lambda ss: query_single(ss, x.view(np.uint64) - r, sets[1]), pair)
    finally:
        _close(pair)
    mat_ok = np.array_equal(to_signed(out[0] + out[1]), oracle["drelu"])
    secs = time.perf_counter() - t0
    ok &= mat_ok and secs < C1_MAX_SECONDS
    criterion(1, ok, f"{' '.join(details)} materialised_drelu={mat_ok} "
                     f"frozen_oracle={frozen_ok} seconds={secs:.1f}")


# 2 ---------------------------------------------------------------------------

def test_c2_alternate_drelu(criterion, pair):
    raw = np.arange(-(1 << 15), 1 << 15, dtype=np.int64)
    y = (raw + (1 << 13) - 1) >> 12
    in_grid = bool(y.min() >= DRELU.in_cfg.raw_min and y.max() <= DRELU.in_cfg.raw_max)
    plain = lookup_plain(DRELU, y).view(np.int64)
    plain_bad = int(np.sum(plain != (raw > 0)))
    size = DRELU.table_values().size
    reduction = (1 << 16) // size
    dealer = Dealer(102)
    s = dealer.share_data(0, raw)
    p = [dealer.provider(i) for i in (0, 1)]
    out = run_parties(lambda ss: drelu(ss, s[0], p[0].lookup(DRELU)),
                      lambda ss: drelu(ss, s[1], p[1].lookup(DRELU)), pair)
    got = to_signed(out[0] + out[1])
    band = (raw > -(1 << 12)) & (raw <= 0)
    wrong = got != (raw > 0)
    outside = int(np.sum(wrong & ~band))
    ok = in_grid and plain_bad == 0 and size == 32 and reduction == 1 << 11 and outside == 0
    criterion(2, ok, f"encodings=65536 plain_mismatches={plain_bad} table_entries={size} "
                     f"reduction=2^{reduction.bit_length() - 1} protocol_mismatches_outside_band="
                     f"{outside} inside_band={int(np.sum(wrong & band))}")


# 3 ---------------------------------------------------------------------------

def _measure(mode, build, seed):
    """Run ``build(session, provider)`` on both parties and return party 0's delta stats."""
    dealer = Dealer(seed, mode)
    p = [dealer.provider(i) for i in (0, 1)]
    pair = loopback_pair(120.0)
    try:
        def side(i):
            def run(ss):
                with ss.measure() as m:
                    build(ss, p[i], dealer, i)
                return m
            return run
        m0, _ = run_parties(side(0), side(1), pair)
    finally:
        _close(pair)
    return m0


def test_c3_round_and_byte_accounting(criterion):
    n, rows, d = 64, 4, 10
    rng = np.random.default_rng(3)
    x = rng.integers(-(1 << 14), 1 << 14, size=n)
    logits = rng.integers(-4 * 8192, 4 * 8192, size=(rows, d))
    single = LookupMode()
    multi = LookupMode.multi(epsilon=math.inf, r_multi=1000)

    def lookup_op(spec):
        def op(ss, prov, dealer, i):
            prov.lookup(spec)(ss, dealer.share_data(0, x)[i])
        return op

    def drelu_op(ss, prov, dealer, i):
        drelu(ss, dealer.share_data(0, x)[i], prov.lookup(DRELU))

    def relu_op(ss, prov, dealer, i):
        xs = dealer.share_data(0, x)[i]
        relu(ss, xs, drelu(ss, xs, prov.lookup(DRELU)), prov.beaver(x.shape))

    def softmax_op(ss, prov, dealer, i):
        softmax(ss, dealer.share_data(0, logits)[i], prov.lookup(EXP), prov.lookup(INVERSE),
                prov.beaver((rows, d), (rows, 1)))

    checks = []

    def check(name, got, want):
        checks.append((name, got == want, f"{name}={got}" + ("" if got == want else f"!={want}")))

    for label, mode, rounds, per_q in (("single", single, 1, 8), ("multi", multi, 3, 8 + 2 * 33)):
        for opname, op in (("lookup", lookup_op(EXP)), ("sigmoid", lookup_op(SIGMOID)),
                           ("drelu", drelu_op)):
            m = _measure(mode, op, 30)
            check(f"{label}_{opname}_rounds", m.rounds, rounds)
            check(f"{label}_{opname}_bytes_per_query", m.payload_sent / n, per_q)
        m = _measure(mode, relu_op, 31)
        check(f"{label}_relu_extra_rounds", m.rounds - rounds, 1)
        m = _measure(mode, softmax_op, 32)
        check(f"{label}_softmax_rounds", m.rounds, 3 if label == "single" else 7)
        if label == "single":
            check("single_softmax_bytes_per_row", m.payload_sent / rows, 8 * (1 + 2 * d))
    ok = all(c[1] for c in checks)
    criterion(3, ok, " ".join(c[2] for c in checks))


# 4 ---------------------------------------------------------------------------

TOY16 = FuncTableSpec(93, FixedCfg(4, 0, 4), lambda v: v * 0.25)
KEYS = (1234567, 7654321, 1111111, 2222222)


def _multi_run(sets, x, mode, seed):
    dealer = Dealer(seed, mode)
    s = dealer.share_data(0, np.asarray(x, dtype=np.int64))
    prov = [dealer.provider(i) for i in (0, 1)]
    n = len(x)
    pair = loopback_pair(120.0)
    try:
        out = run_parties(*[(lambda i: lambda ss: query_multi(
            ss, s[i], sets[i], prov[i].noise(TOY16.func_id, n),
            prov[i].conversion(n, TOY16.in_cfg.grid_size)))(i) for i in (0, 1)], pair)
    finally:
        _close(pair)
    return to_signed(out[0] + out[1])


def test_c4_multi_keys_and_budget(criterion):
    m = 2
    grid = TOY16.in_cfg.grid_raw()
    sets = gen_multi_tables(TOY16, m, KEYS, b"\x44" * 32, r_multi=16)
    for s in sets:
        s.trace = AccessTrace()
    mode = LookupMode.multi(epsilon=math.inf, r_multi=16)
    got = _multi_run(sets, np.concatenate([grid, grid]), mode, 40)
    values_ok = np.array_equal(got, np.tile(TOY16.table_values().view(np.int64), m))
    k0, k1, s0, s1 = KEYS
    expected = []
    for c in range(m):
        sc = (derive_sc(s0, c) + derive_sc(s1, c)) % ec.N
        for v in grid.tolist():
            idx = v + rebase_offset(TOY16.in_cfg)
            expected.append((c, kappa_key(ec.base_mult(k0 * k1 * (idx + sc) % ec.N))))
    keys_ok = sets[0].trace.events == sets[1].trace.events == expected
    in_tables = all(key in sets[0].table(c).entries for c, key in expected)

    # eps = 0.1 with eps_T = 1: ten queries per table, the eleventh moves to c = 1
    budget_mode = LookupMode.multi(epsilon=0.1, epsilon_total=1.0, clamp_bound=0)
    sets = gen_multi_tables(TOY16, 2, KEYS, b"\x44" * 32, epsilon=0.1,
                            r_multi=budget_mode.r_multi)
    sets[0].trace = AccessTrace()
    _multi_run(sets, grid[:11], budget_mode, 41)
    cs = [c for c, _ in sets[0].trace.events]
    budget_ok = cs == [0] * 10 + [1] and math.isclose(sets[0].budget.epsilon_remaining, 0.9)

    counts = {}
    for mm in (1, 2, 5):
        ec.reset_counter()
        gen_multi_tables(TOY16, mm, KEYS, b"\x44" * 32)
        counts[mm] = ec.COUNTER.scalar_mults
    mults_ok = all(v == k + 1 for k, v in counts.items())
    ok = values_ok and keys_ok and in_tables and budget_ok and mults_ok
    criterion(4, ok, f"values={values_ok} kappa_agree={keys_ok} kappa_in_tables={in_tables} "
                     f"eleventh_query_table={cs[-1]} scalar_mults={counts}")


# 5 ---------------------------------------------------------------------------

def test_c5_dx_privacy(criterion):
    parts, ok = [], True
    for eps in (0.1, 0.5, 1.0):
        p = GeometricParams(eps)
        rng = np.random.default_rng([5, int(eps * 10)])
        g = sample_geometric(p, rng, C5_TRIALS)
        p0 = float(np.mean(g == 0))
        want = (1 - math.exp(-eps)) / (1 + math.exp(-eps))
        groups, order = mechanism_trace([0, 1], p, C5_TRIALS, rng)
        rep = audit_trace(groups, p, min_count=C5_MIN_COUNT, order=order)
        this = abs(p0 - want) <= C5_P0_TOL and rep.max_ratio <= math.exp(eps) * C5_RATIO_SLACK
        ok &= this
        parts.append(f"eps={eps}:p0={p0:.4f}/{want:.4f},ratio={rep.max_ratio:.4f}"
                     f"<=bound*{C5_RATIO_SLACK}={rep.bound * C5_RATIO_SLACK:.4f}")
    criterion(5, ok, " ".join(parts))


# 6 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c6_lr_trajectory(criterion):
    sp = datasets.mnist01()
    cfg = TrainConfig(model="lr", epochs=5)
    X, Y = encode_features(sp.X_train, cfg), encode_labels(sp.y_train, cfg)
    Xt = encode_features(sp.X_test, cfg)
    dealer = Dealer(cfg.seed)
    traj = {0: [], 1: []}
    t0 = time.perf_counter()
    res = train(None, *share_dataset(X, Y, dealer), dealer, cfg,
                on_iter=lambda p, i, w: traj[p].append(w[0].copy()))
    secs = time.perf_counter() - t0
    prev, worst = init_weights(cfg, X.shape[1]), 0
    for it, rows in enumerate(batch_schedule(len(X), cfg)):
        rec = (traj[0][it] + traj[1][it]).view(np.int64)
        ref = oracle_step(prev, X[rows], Y[rows], cfg, "nearest")[0]
        worst = max(worst, int(np.abs(rec - ref).max()))
        prev = [rec]
    W, _ = plaintext_oracle_train(X, Y, cfg, rounding="nearest")
    acc, oacc = accuracy(res.weights, Xt, sp.y_test, cfg), accuracy(W, Xt, sp.y_test, cfg)
    ok = worst <= C6_LSB and acc == oacc and secs < C6_MAX_SECONDS
    criterion(6, ok, f"examples={len(X) + len(Xt)} iterations={res.iterations} "
                     f"max_lsb_diff={worst} mpc_acc={acc:.4f} oracle_acc={oacc:.4f} "
                     f"seconds={secs:.1f}")


# 7 ---------------------------------------------------------------------------

NN_CFG = dict(model="nn", hidden=(128, 128), n_classes=10, batch_size=32, lr_shift=6,
              init_scale=0.08, center=True)


@pytest.mark.slow
def test_c7_nn_reduced_scale(criterion):
    sp = datasets.mnist_subset(4000)
    cfg = TrainConfig(epochs=5, **NN_CFG)
    X, Y = encode_features(sp.X_train, cfg), encode_labels(sp.y_train, cfg)
    Xt = encode_features(sp.X_test, cfg)
    t0 = time.perf_counter()
    dealer = Dealer(cfg.seed)
    res = train(None, *share_dataset(X, Y, dealer), dealer, cfg, timeout=3600)
    secs = time.perf_counter() - t0
    W, _ = plaintext_oracle_train(X, Y, cfg, rounding="stochastic")
    acc, oacc = accuracy(res.weights, Xt, sp.y_test, cfg), accuracy(W, Xt, sp.y_test, cfg)
    gap = 100 * abs(acc - oacc)
    criterion(7, gap <= C7_POINTS, f"examples={len(X) + len(Xt)} mpc_acc={acc:.4f} "
                                   f"oracle_acc={oacc:.4f} gap_points={gap:.2f} "
                                   f"seconds={secs:.0f}")


def _mnist_dir():
    path = os.environ.get("LUTMPC_MNIST_DIR")
    if not path or not os.path.isdir(path):
        pytest.skip("set LUTMPC_MNIST_DIR to the standard MNIST IDX files")
    return path


@pytest.mark.fullscale
def test_c7_fullscale_nn():
    sp = datasets.load_named("mnist", path=_mnist_dir())
    cfg = TrainConfig(epochs=15, **NN_CFG)
    res = train_plain_data(sp.X_train, sp.y_train, cfg, timeout=86400)
    acc = accuracy(res.weights, encode_features(sp.X_test, cfg), sp.y_test, cfg)
    print(f"fullscale_nn_accuracy={acc:.4f} target=0.966")
    assert acc >= 0.966 - 0.01


@pytest.mark.fullscale
def test_c7_fullscale_lr():
    sp = datasets.load_named("mnist0vr", path=_mnist_dir())
    cfg = TrainConfig(model="lr", epochs=5)
    res = train_plain_data(sp.X_train, sp.y_train, cfg, timeout=86400)
    acc = accuracy(res.weights, encode_features(sp.X_test, cfg), sp.y_test, cfg)
    print(f"fullscale_lr_accuracy={acc:.4f} target=0.9921")
    assert acc >= 0.9921 - 0.005


# 8 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c8_multi_degradation_order(criterion):
    sp = datasets.mnist01()
    accs = []
    for eps_t in (math.inf, 0.01, 0.001, 0.0005):
        mode = (LookupMode.multi(epsilon=math.inf, r_multi=10) if math.isinf(eps_t)
                else LookupMode.multi(epsilon_total=eps_t, r_multi=10))
        cfg = TrainConfig(model="lr", epochs=5, mode=mode)
        res = train_plain_data(sp.X_train, sp.y_train, cfg)
        accs.append(accuracy(res.weights, encode_features(sp.X_test, cfg), sp.y_test, cfg))
    ok = all(a >= b for a, b in zip(accs, accs[1:]))
    criterion(8, ok, "eps_T=[inf,0.01,0.001,0.0005] acc=[" +
              ",".join(f"{a:.4f}" for a in accs) + "]")


# 9 ---------------------------------------------------------------------------

def test_c9_storage_ratio(criterion):
    sp = datasets.mnist01()
    counts = {}
    for label, mode in (("single", LookupMode()),
                        ("multi", LookupMode.multi(epsilon_total=0.01, r_multi=100))):
        cfg = TrainConfig(model="lr", epochs=5, mode=mode)
        shapes = {"X": sp.X_train.shape, "Y": (len(sp.y_train), 1)}
        man = plan_run(lambda s, p: offline_program(cfg)(s, p, shapes), mode).manifest()
        counts[label] = man["tables"]["sigmoid"]["tables"]
    ratio = counts["single"] / counts["multi"]
    criterion(9, ratio == 100, f"sigmoid_tables single={counts['single']} "
                               f"multi={counts['multi']} ratio={ratio:g}")


# 10 --------------------------------------------------------------------------

class _Tamper:
    """Channel wrapper that rewrites the payload of one outgoing message type."""

    def __init__(self, inner, msg_type, rewrite):
        self.inner, self.msg_type, self.rewrite = inner, int(msg_type), rewrite

    def send(self, data):
        f = decode_frame(data)
        if f.msg_type == self.msg_type:
            data = Frame(f.msg_type, f.session_id, self.rewrite(f.payload)).encode()
        self.inner.send(data)

    def recv_exact(self, n):
        return self.inner.recv_exact(n)

    def close(self):
        self.inner.close()


def _off_curve(payload):
    # x = 5 has no square root on secp256k1
    return b"".join(b"\x02" + (5).to_bytes(32, "big") for _ in range(len(payload) // 33))


def _mutations(rng, frame):
    """Fuzzed variants of a valid frame."""
    n = len(frame)
    kind = int(rng.integers(0, 8))
    b = bytearray(frame)
    if kind == 0:
        for _ in range(int(rng.integers(1, 9))):
            i = int(rng.integers(0, n))
            b[i] ^= 1 << int(rng.integers(0, 8))
    elif kind == 1:
        b = b[:int(rng.integers(0, n))]
    elif kind == 2:
        b += rng.bytes(int(rng.integers(1, 16)))
    elif kind == 3:
        b[:4] = int(rng.integers(0, 1 << 32)).to_bytes(4, "big")
    elif kind == 4:
        b = bytearray(rng.bytes(int(rng.integers(1, 3 * n))))
    elif kind == 5:
        # well-formed frame with an unexpected type or session id
        mt, sid = int(MsgType.OPEN), 0
        if rng.integers(0, 2):
            mt = int(rng.choice([int(t) for t in MsgType if t != MsgType.OPEN]))
        else:
            sid = int(rng.integers(1, 65536))
        b = bytearray(Frame(mt, sid, frame[7:-4]).encode())
    elif kind == 6:
        # well-formed frame with the wrong payload length
        k = int(rng.integers(0, 64))
        k = k + 1 if k == 32 else k
        b = bytearray(Frame(int(MsgType.OPEN), 0, rng.bytes(k)).encode())
    else:
        i = int(rng.integers(0, n))
        b[i] = int(rng.integers(0, 256))
    return bytes(b)


def test_c10_robustness(criterion):
    rng = np.random.default_rng(10)
    words = np.arange(1, 5, dtype=np.uint64)
    good = Frame(int(MsgType.OPEN), 0, words.astype("<u8").tobytes()).encode()
    typed = clean = silent = untyped = 0
    for _ in range(C10_CASES - 200):
        data = _mutations(rng, good)
        s = Session(MemoryChannel(data), 0, threaded=False)
        try:
            got = s.exchange_words(np.zeros(4, dtype=np.uint64), MsgType.OPEN)
        except LutMpcError:
            typed += 1
            continue
        except Exception:
            untyped += 1
            continue
        # trailing bytes past a valid frame are left unread, not misparsed
        if np.array_equal(got, words):
            clean += 1
        else:
            silent += 1
    # well-framed garbage in place of the peer's lookup message
    dealer = Dealer(11)
    for _ in range(200):
        tset = dealer.table_set(0, SIGMOID)
        garbage = rng.integers(0, 1 << 64, size=3, dtype=np.uint64).astype("<u8").tobytes()
        s = Session(MemoryChannel(Frame(int(MsgType.LOOKUP), 0, garbage).encode()), 0,
                    threaded=False)
        try:
            query_single(s, np.zeros(3, dtype=np.uint64), tset)
            silent += 1
        except MissingKey:
            typed += 1

    named = {}

    def expect(name, exc, fn):
        try:
            fn()
            named[name] = "no-error"
        except exc:
            named[name] = exc.__name__
        except Exception as other:  # recorded, fails the criterion
            named[name] = f"wrong:{type(other).__name__}"

    def off_curve_run(msg_type):
        mode = LookupMode.multi(epsilon=math.inf, r_multi=100)
        dealer = Dealer(12, mode)
        x = np.arange(4, dtype=np.int64)
        sh = dealer.share_data(0, x)
        prov = [dealer.provider(i) for i in (0, 1)]
        a, b = socket.socketpair()
        pair = (Session(SocketChannel(a, 10.0), 0),
                Session(_Tamper(SocketChannel(b, 10.0), msg_type, _off_curve), 1))
        try:
            run_parties(lambda ss: prov[0].lookup(SIGMOID)(ss, sh[0]),
                        lambda ss: prov[1].lookup(SIGMOID)(ss, sh[1]), pair, timeout=30)
        finally:
            _close(pair)

    expect("off_curve_first", InvalidPoint, lambda: off_curve_run(MsgType.EC_FIRST))
    expect("off_curve_second", InvalidPoint, lambda: off_curve_run(MsgType.EC_SECOND))

    def reuse():
        d = Dealer(13)
        t = d.provider(0).beaver((2,))
        s = Session(MemoryChannel(Frame(int(MsgType.BEAVER), 0, bytes(32)).encode() * 2), 0,
                    threaded=False)
        beaver_mul(s, np.zeros(2, np.uint64), np.zeros(2, np.uint64), t)
        beaver_mul(s, np.zeros(2, np.uint64), np.zeros(2, np.uint64), t)

    expect("reused_triple", TripleReuse, reuse)
    def spend(budget, k):
        for _ in range(k):
            budget.spend()

    expect("budget_exhausted", BudgetExhausted,
           lambda: spend(BudgetState(0.1, 2, 5, auto_advance=False), 3))
    expect("no_tables_left", NoTablesLeft, lambda: spend(BudgetState(0.1, 2, 1), 3))
    expect("single_tables_exhausted", TableExhausted,
           lambda: Dealer(14).table_set(0, SIGMOID, 2).take(3))
    expect("offline_underprovisioned", OfflineUnderprovisioned, lambda: Dealer(15).mask(3))
    expect("frame_corrupt", FrameCorrupt, lambda: decode_frame(good[:-1] + b"\0"))
    expected = {"off_curve_first": "InvalidPoint", "off_curve_second": "InvalidPoint",
                "reused_triple": "TripleReuse", "budget_exhausted": "BudgetExhausted",
                "no_tables_left": "NoTablesLeft", "single_tables_exhausted": "TableExhausted",
                "offline_underprovisioned": "OfflineUnderprovisioned",
                "frame_corrupt": "FrameCorrupt"}
    total = typed + clean + silent + untyped
    ok = silent == 0 and untyped == 0 and total == C10_CASES and named == expected
    criterion(10, ok, f"fuzz_cases={total} typed_errors={typed} unchanged={clean} "
                      f"silent_corruptions={silent} untyped={untyped} " +
              " ".join(f"{k}={v}" for k, v in named.items()))
