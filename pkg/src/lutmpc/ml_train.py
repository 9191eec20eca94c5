"""Secure SGD for logistic regression and fully-connected networks.

Both parties run the same program on their shares. Data rows are masked
once per dataset (``E = X - U`` is opened at the start), each batch consumes
one matrix triple for the products with the data, and activations go
through table lookups. A plaintext fixed-point trainer follows the same
arithmetic step by step and serves as the verification oracle.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .activations import (DRELU, EXP, EXP_TRUNC, INVERSE, SIGMOID, drelu, drelu_plain,
                          lookup_plain, relu, sigmoid, softmax, softmax_fixed)
from .csp_offline import BundleProvider, Dealer, LookupMode, OfflineBundle
from .errors import ConfigInvalid, DimensionMismatch
from .net import run_parties
from .ring64 import FRAC_BITS, RING_CFG, encode_fixed, shift_round, to_signed, trunc_raw
from .sharing import beaver_matmul, beaver_mul, masked_matmul, open_values

U64 = np.uint64


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters.

    The learning rate is ``2^-lr_shift`` and the batch size a power of two,
    so the update ``alpha / |B| * delta`` is one truncation by
    ``FRAC_BITS + log2(|B|) + lr_shift`` bits.
    """

    model: str = "lr"
    batch_size: int = 32
    lr_shift: int = 9
    epochs: int = 5
    iterations: Optional[int] = None
    hidden: tuple = (128, 128)
    n_classes: int = 10
    center: bool = False
    init_scale: float = 0.05
    seed: int = 0
    mode: LookupMode = field(default_factory=LookupMode)
    ideal_trunc: bool = False

    def __post_init__(self):
        if self.model not in ("lr", "nn"):
            raise ConfigInvalid(f"unknown model {self.model!r}")
        b = self.batch_size
        if b < 1 or b & (b - 1):
            raise ConfigInvalid("batch size must be a power of two")
        if self.lr_shift < 0 or self.update_shift >= 64:
            raise ConfigInvalid("learning rate must be 2^-k with a usable shift")
        if self.epochs < 0 or (self.iterations is not None and self.iterations < 0):
            raise ConfigInvalid("epochs and iterations must be non-negative")
        if self.model == "nn" and (not self.hidden or self.n_classes < 2):
            raise ConfigInvalid("a network needs hidden layers and at least two classes")

    @property
    def learning_rate(self):
        return 2.0 ** -self.lr_shift

    @property
    def batch_shift(self):
        return self.batch_size.bit_length() - 1

    @property
    def update_shift(self):
        return FRAC_BITS + self.batch_shift + self.lr_shift

    @property
    def out_dim(self):
        return 1 if self.model == "lr" else self.n_classes


def learning_rate_shift(alpha):
    """``k`` with ``alpha == 2^-k``."""
    k = -math.log2(alpha)
    if alpha <= 0 or k != int(k):
        raise ConfigInvalid(f"learning rate {alpha} is not a power of two")
    return int(k)


# data ---------------------------------------------------------------------

def encode_features(X, cfg):
    """Real features to signed raw fixed-point values (int64)."""
    X = np.asarray(X, dtype=np.float64)
    if cfg.center:
        X = X - 0.5
    return to_signed(encode_fixed(X, RING_CFG)).reshape(X.shape)


def encode_labels(y, cfg):
    """Labels as raw targets: a 0/1 column for LR, one-hot rows otherwise."""
    y = np.asarray(y, dtype=np.int64)
    one = np.int64(1 << FRAC_BITS)
    if cfg.model == "lr":
        if y.size and (y.min() < 0 or y.max() > 1):
            raise ConfigInvalid("logistic regression needs 0/1 labels")
        return (y * one).reshape(-1, 1)
    if y.size and (y.min() < 0 or y.max() >= cfg.n_classes):
        raise ConfigInvalid(f"labels must lie in [0, {cfg.n_classes})")
    return np.eye(cfg.n_classes, dtype=np.int64)[y] * one


def batch_schedule(n, cfg):
    """Row indices of every batch: a seeded permutation per epoch, remainder dropped."""
    out = []
    per_epoch = n // cfg.batch_size
    for e in range(cfg.epochs):
        if cfg.iterations is not None and len(out) >= cfg.iterations:
            break
        perm = np.random.default_rng([cfg.seed, 7, e]).permutation(n)
        out.extend(perm[b * cfg.batch_size:(b + 1) * cfg.batch_size] for b in range(per_epoch))
    if cfg.iterations is not None:
        out = out[:cfg.iterations]
    return out


def init_weights(cfg, d):
    """Public initial weights (raw int64): zeros for LR, seeded uniform for networks."""
    if cfg.model == "lr":
        return [np.zeros((d, 1), dtype=np.int64)]
    dims = [d, *cfg.hidden, cfg.n_classes]
    rng = np.random.default_rng([cfg.seed, 11])
    s = cfg.init_scale
    return [to_signed(encode_fixed(rng.uniform(-s, s, (a, b)), RING_CFG)).reshape(a, b)
            for a, b in zip(dims[:-1], dims[1:])]


# online programs -------------------------------------------------------------

def ideal_truncate(session, x, t):
    """Exact floor division by ``2^t`` of the opened value.

    Reveals ``x`` to both parties: a test-harness device that removes the
    probabilistic truncation error so trajectories can be compared exactly.
    """
    v = open_values(session, x)
    out = (to_signed(v) >> np.int64(t)).view(U64)
    return out if session.party == 0 else np.zeros_like(out)


def _trunc(session, x, t, cfg):
    if cfg.ideal_trunc:
        return ideal_truncate(session, x, t)
    return trunc_raw(x, t, session.party)


def _own_init(weights, party):
    return [np.asarray(w, dtype=np.int64).view(U64).copy() if party == 0
            else np.zeros(np.shape(w), dtype=U64) for w in weights]


def logistic_party(session, provider, X, Y, cfg, init=None, on_iter=None):
    """One party's logistic-regression training run; returns its weight share."""
    X = np.asarray(X, dtype=np.int64).view(U64)
    Y = np.asarray(Y, dtype=np.int64).view(U64)
    n, d = X.shape
    (w,) = _own_init(init if init is not None else init_weights(cfg, d), session.party)
    mask_id, U = provider.data_mask((n, d))
    E = open_values(session, X - U)
    sig = provider.lookup(SIGMOID)
    for it, rows in enumerate(batch_schedule(n, cfg)):
        provider.begin_batch(it)
        mt = provider.batch_triple(mask_id, rows, 1, 1)
        Xb, Eb = X[rows], E[rows]
        z = _trunc(session, masked_matmul(session, Xb, w, mt, Eb), FRAC_BITS, cfg)
        diff = sigmoid(session, z, sig) - Y[rows]
        delta = masked_matmul(session, Xb, diff, mt, Eb, backward=True)
        w = w - _trunc(session, delta, cfg.update_shift, cfg)
        if on_iter is not None:
            on_iter(session.party, it, [w])
    return [w]


def nn_party(session, provider, X, Y, cfg, init=None, on_iter=None):
    """One party's network training run; returns its weight shares."""
    X = np.asarray(X, dtype=np.int64).view(U64)
    Y = np.asarray(Y, dtype=np.int64).view(U64)
    n, d = X.shape
    p = session.party
    W = _own_init(init if init is not None else init_weights(cfg, d), p)
    mask_id, U = provider.data_mask((n, d))
    E = open_values(session, X - U)
    dre = provider.lookup(DRELU)
    exp_l, inv_l = provider.lookup(EXP), provider.lookup(INVERSE)
    L = len(W)
    for it, rows in enumerate(batch_schedule(n, cfg)):
        provider.begin_batch(it)
        b = len(rows)
        Xb, Eb = X[rows], E[rows]
        h1 = W[0].shape[1]
        mt = provider.batch_triple(mask_id, rows, h1, h1)
        # forward
        acts, ders = [], []
        a = None
        for layer in range(L):
            if layer == 0:
                zz = masked_matmul(session, Xb, W[0], mt, Eb)
            else:
                k, m = W[layer].shape
                zz = beaver_matmul(session, a, W[layer], provider.matmul((b, k), (k, m)))
            if layer == L - 1:
                out = softmax(session, zz, exp_l, inv_l,
                              provider.beaver((b, W[layer].shape[1]), (b, 1)),
                              in_trunc=FRAC_BITS + EXP_TRUNC)
                break
            z = _trunc(session, zz, FRAC_BITS, cfg)
            dz = drelu(session, z, dre)
            a = relu(session, z, dz, provider.beaver(z.shape))
            acts.append(a)
            ders.append(dz)
        # backward
        delta = out - Y[rows]
        grads = [None] * L
        for layer in range(L - 1, -1, -1):
            if layer == 0:
                grads[0] = masked_matmul(session, Xb, delta, mt, Eb, backward=True)
                break
            a_prev = acts[layer - 1]
            k, m = W[layer].shape
            grads[layer] = beaver_matmul(session, a_prev.T, delta,
                                         provider.matmul((k, b), (b, m)))
            g = beaver_matmul(session, delta, W[layer].T, provider.matmul((b, m), (m, k)))
            g = _trunc(session, g, FRAC_BITS, cfg)
            delta = beaver_mul(session, g, ders[layer - 1], provider.beaver(g.shape))
        W = [w - _trunc(session, g, cfg.update_shift, cfg) for w, g in zip(W, grads)]
        if on_iter is not None:
            on_iter(p, it, W)
    return W


def party_program(session, provider, X, Y, cfg, init=None, on_iter=None):
    if cfg.model == "lr":
        return logistic_party(session, provider, X, Y, cfg, init, on_iter)
    return nn_party(session, provider, X, Y, cfg, init, on_iter)


def offline_program(cfg, init=None):
    """Program in the form ``provision`` dry-runs: ``(session, provider, shapes)``."""
    def program(session, provider, shapes):
        X = np.zeros(shapes["X"], dtype=np.int64)
        Y = np.zeros(shapes["Y"], dtype=np.int64)
        return party_program(session, provider, X, Y, cfg, init)
    return program


# orchestration -------------------------------------------------------------

@dataclass
class TrainResult:
    weights: list
    stats: tuple
    iterations: int
    lookups: dict
    tables_used: dict

    def report(self):
        yield f"iterations={self.iterations}"
        for name, v in sorted(self.lookups.items()):
            yield f"lookups_{name}={v}"
        for name, v in sorted(self.tables_used.items()):
            yield f"tables_used_{name}={v}"
        for i, st in enumerate(self.stats):
            for k, v in st.as_dict().items():
                yield f"p{i}_{k}={v}"


def _providers(offline, cfg):
    if offline is None:
        offline = Dealer(cfg.seed, cfg.mode)
    if isinstance(offline, Dealer):
        return offline.provider(0), offline.provider(1)
    a, b = offline
    return tuple(BundleProvider(x) if isinstance(x, OfflineBundle) else x for x in (a, b))


def _tables_used(prov):
    """Lookups served and tables consumed, per function."""
    lookups, used = {}, {}
    for spec, name in ((SIGMOID, "sigmoid"), (DRELU, "drelu"), (EXP, "exp"),
                       (INVERSE, "inverse")):
        lk = prov._lookups.get(int(spec.func_id))
        if lk is None:
            continue
        ts = lk.tset
        if lk.multi:
            bud = ts.budget
            n = bud.c * bud.r_multi + bud.used
            lookups[name] = n
            used[name] = bud.c + (1 if bud.used else 0)
        else:
            lookups[name] = ts.next_c
            used[name] = ts.next_c
    return lookups, used


def train(sessions, data_shares, label_shares, offline, cfg, init=None, on_iter=None,
          timeout=600.0):
    """Run both parties and reconstruct the trained weights.

    Args:
        sessions: pair of connected sessions, or ``None`` for a loopback pair.
        data_shares, label_shares: ``(share0, share1)`` of raw features/targets.
        offline: a ``Dealer``, a pair of providers, or a pair of bundles.
        cfg: ``TrainConfig``.
        on_iter: optional ``f(party, iteration, weight_shares)`` hook; seeing
            both parties' shares each iteration is a test-harness privilege.

    Returns:
        ``TrainResult`` with reconstructed raw weights (int64 arrays).
    """
    p0, p1 = _providers(offline, cfg)
    d = np.shape(data_shares[0])[1]
    init = init_weights(cfg, d) if init is None else init
    out = run_parties(
        lambda s: (party_program(s, p0, data_shares[0], label_shares[0], cfg, init, on_iter),
                   s.stats.copy()),
        lambda s: (party_program(s, p1, data_shares[1], label_shares[1], cfg, init, on_iter),
                   s.stats.copy()),
        sessions, timeout)
    (w0, st0), (w1, st1) = out
    weights = [(a + b).view(np.int64) for a, b in zip(w0, w1)]
    lookups, used = _tables_used(p0)
    return TrainResult(weights, (st0, st1), len(batch_schedule(np.shape(data_shares[0])[0], cfg)),
                       lookups, used)


def logistic_train(sessions, data_shares, label_shares, offline, cfg, **kw):
    if cfg.model != "lr":
        raise ConfigInvalid("logistic_train needs model='lr'")
    return train(sessions, data_shares, label_shares, offline, cfg, **kw)


def nn_train(sessions, data_shares, label_shares, offline, cfg, **kw):
    if cfg.model != "nn":
        raise ConfigInvalid("nn_train needs model='nn'")
    return train(sessions, data_shares, label_shares, offline, cfg, **kw)


def share_dataset(X_raw, Y_raw, dealer):
    """Client-side sharing of raw features and targets."""
    return dealer.share_data(0, X_raw), dealer.share_data(1, Y_raw)


def train_plain_data(X, y, cfg, offline=None, **kw):
    """Encode, share and train in-process over loopback (convenience)."""
    dealer = offline if isinstance(offline, Dealer) else Dealer(cfg.seed, cfg.mode)
    xs, ys = share_dataset(encode_features(X, cfg), encode_labels(y, cfg), dealer)
    return train(None, xs, ys, dealer if offline is None else offline, cfg, **kw)


# plaintext oracle ------------------------------------------------------------

def _mm(a, b):
    return np.matmul(np.asarray(a, dtype=np.int64).view(U64),
                     np.asarray(b, dtype=np.int64).view(U64)).view(np.int64)


ROUNDINGS = ("floor", "nearest", "stochastic")


def _sh(x, t, rounding="floor"):
    return shift_round(x, t, rounding)


def oracle_lr_step(w, Xb, Yb, cfg, rounding="floor"):
    z = _sh(_mm(Xb, w), FRAC_BITS, rounding)
    s = lookup_plain(SIGMOID, z).view(np.int64)
    delta = _mm(Xb.T, s - Yb)
    return w - _sh(delta, cfg.update_shift, rounding)


def oracle_nn_forward(W, Xb, rounding="floor"):
    """Hidden pre-activations, activations, DReLU bits and the raw output product."""
    zs, acts, ders = [], [], []
    a = Xb
    for layer, w in enumerate(W):
        zz = _mm(a, w)
        if layer == len(W) - 1:
            return zs, acts, ders, zz
        z = _sh(zz, FRAC_BITS, rounding)
        dz = drelu_plain(z, rounding).view(np.int64)
        a = z * dz
        zs.append(z)
        acts.append(a)
        ders.append(dz)


def oracle_nn_step(W, Xb, Yb, cfg, rounding="floor"):
    _, acts, ders, zz = oracle_nn_forward(W, Xb, rounding)
    out = softmax_fixed(zz, FRAC_BITS + EXP_TRUNC, rounding)
    delta = out - Yb
    grads = [None] * len(W)
    for layer in range(len(W) - 1, -1, -1):
        if layer == 0:
            grads[0] = _mm(Xb.T, delta)
            break
        grads[layer] = _mm(acts[layer - 1].T, delta)
        g = _sh(_mm(delta, W[layer].T), FRAC_BITS, rounding)
        delta = g * ders[layer - 1]
    return [w - _sh(g, cfg.update_shift, rounding) for w, g in zip(W, grads)]


def oracle_step(W, Xb, Yb, cfg, rounding="floor"):
    if cfg.model == "lr":
        return [oracle_lr_step(W[0], Xb, Yb, cfg, rounding)]
    return oracle_nn_step(W, Xb, Yb, cfg, rounding)


def plaintext_oracle_train(X_raw, Y_raw, cfg, init=None, record=False, rounding="floor"):
    """Fixed-point reference trainer.

    ``rounding="floor"`` divides exactly like ``ideal_truncate`` and matches
    an ideal-truncation run bit for bit. Share truncation yields the floor
    or the floor plus one; ``"nearest"`` is always one of the two and serves
    as the deterministic reference, while ``"stochastic"`` (seeded) models
    its rounding statistics for long runs where small updates matter.

    Returns ``(weights, trajectory)``; the trajectory holds the weights after
    every iteration when ``record`` is set.
    """
    if isinstance(rounding, str) and rounding not in ROUNDINGS:
        raise ConfigInvalid(f"rounding must be one of {ROUNDINGS}")
    if rounding == "stochastic":
        rounding = np.random.default_rng([cfg.seed, 13])
    X_raw = np.asarray(X_raw, dtype=np.int64)
    Y_raw = np.asarray(Y_raw, dtype=np.int64)
    W = [np.array(w, dtype=np.int64) for w in
         (init if init is not None else init_weights(cfg, X_raw.shape[1]))]
    traj = []
    for rows in batch_schedule(X_raw.shape[0], cfg):
        W = oracle_step(W, X_raw[rows], Y_raw[rows], cfg, rounding)
        if record:
            traj.append([w.copy() for w in W])
    return W, traj


# scoring and inference -------------------------------------------------------

def predict_plain(W, X_raw, cfg):
    """Labels from reconstructed weights (same fixed-point forward as the oracle)."""
    X_raw = np.asarray(X_raw, dtype=np.int64)
    if cfg.model == "lr":
        return (_sh(_mm(X_raw, W[0]), FRAC_BITS)[:, 0] > 0).astype(np.int64)
    _, _, _, zz = oracle_nn_forward(W, X_raw)
    return zz.argmax(axis=1)


def accuracy(W, X_raw, y, cfg):
    y = np.asarray(y)
    if y.size == 0:
        return float("nan")
    return float((predict_plain(W, X_raw, cfg) == y).mean())


def infer_party(session, provider, W, X, cfg):
    """One forward pass on shared inputs; returns shares of the scores.

    LR returns sigmoid probabilities, networks the softmax output. The
    argmax is left to whoever reconstructs the scores.
    """
    X = np.asarray(X, dtype=np.int64).view(U64)
    W = [np.asarray(w, dtype=np.int64).view(U64) for w in W]
    n = X.shape[0]
    a = X
    for layer, w in enumerate(W):
        k, m = w.shape
        if a.shape[1] != k:
            raise DimensionMismatch(f"input width {a.shape[1]} does not match weights {w.shape}")
        zz = beaver_matmul(session, a, w, provider.matmul((n, k), (k, m)))
        if cfg.model == "lr":
            return sigmoid(session, trunc_raw(zz, FRAC_BITS, session.party),
                           provider.lookup(SIGMOID))
        if layer == len(W) - 1:
            return softmax(session, zz, provider.lookup(EXP), provider.lookup(INVERSE),
                           provider.beaver((n, m), (n, 1)), in_trunc=FRAC_BITS + EXP_TRUNC)
        z = trunc_raw(zz, FRAC_BITS, session.party)
        a = relu(session, z, drelu(session, z, provider.lookup(DRELU)), provider.beaver(z.shape))


def infer(sessions, model_shares, x_shares, offline, cfg, timeout=600.0):
    """Secure forward pass by both parties; returns reconstructed raw scores."""
    p0, p1 = _providers(offline, cfg)
    s0, s1 = run_parties(lambda s: infer_party(s, p0, model_shares[0], x_shares[0], cfg),
                         lambda s: infer_party(s, p1, model_shares[1], x_shares[1], cfg),
                         sessions, timeout)
    return (s0 + s1).view(np.int64)


def share_model(W, dealer, base=10):
    """Share reconstructed raw weights between the parties (client side)."""
    pairs = [dealer.share_data(base + i, w) for i, w in enumerate(W)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


# model files -----------------------------------------------------------------

def save_model(path, W, cfg, meta=None):
    """Write ``path`` (flat little-endian 64-bit ring words) and ``path.json``."""
    with open(path, "wb") as fh:
        for w in W:
            fh.write(np.asarray(w, dtype=np.int64).view(U64).astype("<u8").tobytes())
    side = {"model": cfg.model, "frac_bits": FRAC_BITS, "shapes": [list(np.shape(w)) for w in W],
            "hidden": list(cfg.hidden), "n_classes": cfg.n_classes, "center": cfg.center}
    side.update(meta or {})
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, sort_keys=True, indent=1)


def load_model(path):
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    raw = np.fromfile(path, dtype="<u8").astype(U64).view(np.int64)
    W, off = [], 0
    for shape in side["shapes"]:
        size = int(np.prod(shape))
        if off + size > raw.size:
            raise ConfigInvalid("model file is shorter than its sidecar declares")
        W.append(raw[off:off + size].reshape(shape).copy())
        off += size
    return W, side


def config_with(cfg, **kw):
    return replace(cfg, **kw)
