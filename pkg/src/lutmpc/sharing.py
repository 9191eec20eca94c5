"""Additive secret sharing, Beaver products and share conversion.

Ring shares carry numpy ``uint64`` values (or plain ints for scalars).
Shares modulo the curve order carry Python ints or lists of ints.
"""

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import ec
from .errors import DimensionMismatch, TagMismatch, TripleReuse
from .net import MsgType
from .ring64 import RING_MASK, RING_SIZE


class Modulus(Enum):
    RING64 = "ring64"
    CURVE_N = "curve_n"

    @property
    def size(self):
        return RING_SIZE if self is Modulus.RING64 else ec.N


@dataclass(frozen=True)
class Share:
    """One party's additive share."""

    value: object
    party: int
    modulus: Modulus = Modulus.RING64

    def replace(self, value):
        return replace(self, value=value)

    @property
    def shape(self):
        return np.shape(self.value)


def random_ring(rng, shape=None):
    """Uniform ring elements from a numpy Generator."""
    if shape is None:
        return int(rng.integers(0, RING_SIZE, dtype=np.uint64))
    return rng.integers(0, RING_SIZE, size=shape, dtype=np.uint64)


def make_shares(x, rng):
    """Split ``x`` into two ring shares; share 0 is uniform."""
    if isinstance(x, (int, np.integer)):
        r = random_ring(rng)
        return Share(r, 0), Share((int(x) - r) & RING_MASK, 1)
    x = np.asarray(x, dtype=np.uint64)
    r = random_ring(rng, x.shape)
    return Share(r, 0), Share(x - r, 1)


def make_shares_mod(x, modulus_size, rng):
    """Split an int (or list of ints) modulo an arbitrary modulus."""
    if isinstance(x, (list, tuple)):
        r = [int.from_bytes(rng.bytes(40), "big") % modulus_size for _ in x]
        return r, [(int(v) - ri) % modulus_size for v, ri in zip(x, r)]
    r = int.from_bytes(rng.bytes(40), "big") % modulus_size
    return r, (int(x) - r) % modulus_size


def reconstruct(s0, s1):
    """Add two shares modulo their common modulus."""
    if s0.modulus is not s1.modulus:
        raise TagMismatch(f"{s0.modulus.value} vs {s1.modulus.value}")
    if s0.modulus is Modulus.RING64:
        if isinstance(s0.value, (int, np.integer)) and isinstance(s1.value, (int, np.integer)):
            return (int(s0.value) + int(s1.value)) & RING_MASK
        return np.asarray(s0.value, dtype=np.uint64) + np.asarray(s1.value, dtype=np.uint64)
    n = ec.N
    if isinstance(s0.value, (list, tuple)):
        return [(a + b) % n for a, b in zip(s0.value, s1.value)]
    return (int(s0.value) + int(s1.value)) % n


def _u64(v):
    return np.asarray(v, dtype=np.uint64)


@dataclass
class BeaverTriple:
    """One party's shares of (a, b, c = a*b). ``b`` may broadcast against ``a``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    party: int
    used: bool = False

    def consume(self):
        if self.used:
            raise TripleReuse("Beaver triple already consumed")
        self.used = True


@dataclass
class MatMulTriple:
    """One party's shares of (A, B, C = A @ B) for a product of two shared matrices."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    party: int
    used: bool = False

    def consume(self):
        if self.used:
            raise TripleReuse("matrix triple already consumed")
        self.used = True


@dataclass
class MatrixTriple:
    """Per-batch randomness for products with a pre-masked data matrix.

    ``U`` is the data mask (its opened difference ``E = X - U`` is public),
    ``Z = U_B @ V`` serves the forward product and ``Zp = U_B.T @ Vp`` the
    backward one.
    """

    V: np.ndarray
    Z: np.ndarray
    Vp: np.ndarray
    Zp: np.ndarray
    party: int
    used: set = field(default_factory=set)

    def consume(self, which):
        if which in self.used:
            raise TripleReuse(f"matrix triple half {which!r} already consumed")
        self.used.add(which)


@dataclass
class ConversionPair:
    """Shares of the same random ``r`` modulo 2^64 and modulo the curve order.

    ``r`` is drawn from ``[0, 2^64 - bound]`` so that the opened difference
    tells whether the subtraction wrapped.
    """

    r_small: np.ndarray
    r_big: list
    party: int
    bound: int


def open_values(session, value, msg_type=MsgType.OPEN):
    """Reveal a shared ring value to both parties (one round)."""
    v = _u64(value)
    return v + session.exchange_words(v, msg_type)


def beaver_mul(session, x, y, triple):
    """Multiply shared ``x`` and ``y`` with one round.

    ``y`` may have a broadcastable shape (for example a column shared by all
    entries of a row); the opened ``e`` then has the shape of ``y``.
    """
    xv = _u64(x.value if isinstance(x, Share) else x)
    yv = _u64(y.value if isinstance(y, Share) else y)
    if triple.a.shape != xv.shape or triple.b.shape != yv.shape:
        raise DimensionMismatch(f"triple shapes {triple.a.shape}/{triple.b.shape} "
                                f"do not match operands {xv.shape}/{yv.shape}")
    triple.consume()
    i = session.party
    d_i = xv - triple.a
    e_i = yv - triple.b
    both = session.exchange_words(np.concatenate([d_i.ravel(), e_i.ravel()]), MsgType.BEAVER)
    d = d_i + both[:d_i.size].reshape(d_i.shape)
    e = e_i + both[d_i.size:].reshape(e_i.shape)
    z = xv * e + yv * d + triple.c
    if i == 1:
        z = z - d * e
    if isinstance(x, Share):
        return Share(z, i)
    return z


def beaver_matmul(session, x, y, triple):
    """Shared matrix product ``x @ y`` with a matrix triple (one round)."""
    xv, yv = _u64(x), _u64(y)
    if xv.ndim != 2 or yv.ndim != 2 or xv.shape[1] != yv.shape[0]:
        raise DimensionMismatch(f"cannot multiply {xv.shape} by {yv.shape}")
    if triple.A.shape != xv.shape or triple.B.shape != yv.shape:
        raise DimensionMismatch("matrix triple does not match operands")
    triple.consume()
    e_i = xv - triple.A
    f_i = yv - triple.B
    both = session.exchange_words(np.concatenate([e_i.ravel(), f_i.ravel()]), MsgType.MATMUL)
    e = e_i + both[:e_i.size].reshape(e_i.shape)
    f = f_i + both[e_i.size:].reshape(f_i.shape)
    z = matmul_u64(xv, f) + matmul_u64(e, yv) + triple.C
    if session.party == 1:
        z = z - matmul_u64(e, f)
    return z


def masked_matmul(session, x_shares, w_shares, mt, e_public, backward=False):
    """Product of the pre-masked data batch with a shared operand.

    Forward computes ``X_B @ w`` from ``F = w - V``; backward computes
    ``X_B.T @ D`` from ``F' = D - V'``. Pass ``x_shares`` and ``e_public``
    untransposed in both cases.
    """
    xv, wv, ev = _u64(x_shares), _u64(w_shares), _u64(e_public)
    if ev.shape != xv.shape:
        raise DimensionMismatch(f"E {ev.shape} does not match X {xv.shape}")
    if backward:
        xv, ev = xv.T, ev.T
        V, Z, key = mt.Vp, mt.Zp, "backward"
    else:
        V, Z, key = mt.V, mt.Z, "forward"
    if wv.ndim != 2 or xv.shape[1] != wv.shape[0] or V.shape != wv.shape:
        raise DimensionMismatch(f"cannot multiply {xv.shape} by {wv.shape} with mask {V.shape}")
    mt.consume(key)
    f_i = wv - V
    f = f_i + session.exchange_words(f_i, MsgType.MATMUL)
    out = matmul_u64(xv, f) + matmul_u64(ev, wv) + Z
    if session.party == 1:
        out = out - matmul_u64(ev, f)
    return out


def share_convert(session, x_small, pair, bound=None):
    """Convert shares of ``x`` in ``[0, bound)`` from Z_{2^64} to Z_N (one round).

    The opened ``z = x - r`` wrapped modulo 2^64 exactly when ``z >= bound``,
    in which case party 0 removes the extra 2^64.
    """
    xv = _u64(x_small.value if isinstance(x_small, Share) else x_small)
    bound = pair.bound if bound is None else bound
    if pair.r_small.shape != xv.shape or len(pair.r_big) != xv.size:
        raise DimensionMismatch("conversion pair does not match input")
    z_i = xv - pair.r_small
    z = z_i + session.exchange_words(z_i, MsgType.CONVERT)
    n = ec.N
    if session.party == 0:
        out = []
        for zi, rb in zip(z.ravel().tolist(), pair.r_big):
            if zi >= bound:
                zi -= RING_SIZE
            out.append((zi + rb) % n)
    else:
        out = [int(rb) % n for rb in pair.r_big]
    return Share(out, session.party, Modulus.CURVE_N)


def matmul_u64(a, b):
    """Matrix product modulo 2^64 (numpy wraps unsigned overflow)."""
    return np.matmul(_u64(a), _u64(b))
