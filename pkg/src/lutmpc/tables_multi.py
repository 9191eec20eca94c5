"""Reusable lookup tables keyed by a two-party elliptic-curve PRF.

Table ``c`` maps ``H(kappa)`` to a value share, where
``kappa = k0*k1*(x + s0c + s1c)*G`` on secp256k1 and ``x`` is the rebased grid
index. Each table serves ``r_multi`` noisy queries before the parties move
to the next one.
"""

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ec
from .errors import (BudgetExhausted, ConfigInvalid, CorruptBundle, InvalidPoint, MissingKey,
                     NoTablesLeft, VersionMismatch)
from .net import MsgType
from .ring64 import FixedCfg
from .sharing import share_convert
from .tables_single import entry_order, value_share0, value_shares0

MAGIC_MULTI = b"HWK2"
HEADER_MULTI = struct.Struct(">4sHBBBQIdd")
ENTRY_SIZE = 40
POINT_SIZE = 33


def derive_sc(s, c):
    """Per-table scalar ``H(s || c)`` reduced to [1, N) by rejection sampling."""
    base = int(s).to_bytes(32, "big") + int(c).to_bytes(8, "big")
    ctr = 0
    while True:
        msg = base if ctr == 0 else base + ctr.to_bytes(4, "big")
        v = int.from_bytes(hashlib.sha256(msg).digest(), "big")
        if 0 < v < ec.N:
            return v
        ctr += 1


def kappa_key(point):
    return hashlib.sha256(ec.compress(point)).digest()


def rebase_offset(cfg):
    """Offset that maps the signed grid onto [0, 2^total_bits)."""
    return 1 << (cfg.total_bits - 1)


@dataclass
class BudgetState:
    """Privacy budget of the current table.

    Counts queries exactly so that ``r_multi`` uses of ``epsilon`` always
    spend ``epsilon_total`` without floating-point drift.
    """

    epsilon: float
    r_multi: int
    m: int
    c: int = 0
    used: int = 0
    auto_advance: bool = True

    @classmethod
    def from_totals(cls, epsilon, epsilon_total, m, **kw):
        if not epsilon > 0:
            raise ConfigInvalid("epsilon must be positive")
        if math.isinf(epsilon_total) and math.isinf(epsilon):
            raise ConfigInvalid("pass r_multi directly when both budgets are infinite")
        r = epsilon_total / epsilon
        r_int = int(round(r))
        if r_int < 1 or abs(r - r_int) > 1e-9 * max(r, 1.0):
            raise ConfigInvalid(f"epsilon_total / epsilon = {r} is not a positive integer")
        return cls(epsilon, r_int, m, **kw)

    @property
    def epsilon_total(self):
        return self.epsilon * self.r_multi

    @property
    def epsilon_remaining(self):
        return self.epsilon * (self.r_multi - self.used)

    def spend(self):
        """Account one query; return the table index it must use."""
        if self.c >= self.m:
            raise NoTablesLeft(f"all {self.m} tables are spent")
        if self.used >= self.r_multi:
            raise BudgetExhausted(f"table c={self.c} has no budget left")
        c = self.c
        self.used += 1
        if self.used == self.r_multi and self.auto_advance:
            self.c += 1
            self.used = 0
        return c

    def advance(self):
        if self.c >= self.m:
            raise NoTablesLeft(f"all {self.m} tables are spent")
        self.c += 1
        self.used = 0
        return self


def advance_table(tset):
    """Move to the next table and reset the budget."""
    return tset.budget.advance()


@dataclass
class MultiTable:
    """One party's view of reusable table ``c``."""

    func_id: int
    cfg: FixedCfg
    c: int
    entries: dict
    epsilon: float = 0.0
    epsilon_total: float = 0.0

    def get(self, point):
        try:
            return self.entries[kappa_key(point)]
        except KeyError:
            raise MissingKey(f"no entry for key in table c={self.c}") from None

    def to_bytes(self):
        head = HEADER_MULTI.pack(MAGIC_MULTI, self.func_id, self.cfg.int_bits,
                                 self.cfg.frac_bits, self.cfg.total_bits, self.c,
                                 len(self.entries), self.epsilon, self.epsilon_total)
        return head + b"".join(k + int(v).to_bytes(8, "little") for k, v in self.entries.items())

    @classmethod
    def from_stream(cls, fh):
        head = fh.read(HEADER_MULTI.size)
        if len(head) < HEADER_MULTI.size:
            raise CorruptBundle("truncated table header")
        magic, fid, ib, fb, tb, c, count, eps, eps_t = HEADER_MULTI.unpack(head)
        if magic != MAGIC_MULTI:
            raise VersionMismatch(f"unexpected table magic {magic!r}")
        body = fh.read(count * ENTRY_SIZE)
        if len(body) < count * ENTRY_SIZE:
            raise CorruptBundle("truncated table body")
        entries = {body[o:o + 32]: int.from_bytes(body[o + 32:o + 40], "little")
                   for o in range(0, len(body), ENTRY_SIZE)}
        return cls(fid, FixedCfg(ib, fb, tb), c, entries, eps, eps_t)


@dataclass
class AccessTrace:
    """Keys observed by one party during multi-use lookups."""

    events: list = field(default_factory=list)

    def record(self, c, key):
        self.events.append((int(c), bytes(key)))

    def histogram(self):
        hist = {}
        for c, key in self.events:
            per = hist.setdefault(c, {})
            per[key] = per.get(key, 0) + 1
        return hist


class MultiTableSet:
    """One party's reusable tables, secret scalars and budget."""

    def __init__(self, party, func_id, cfg, k, s, tables, budget):
        self.party = party
        self.func_id = func_id
        self.cfg = cfg
        self.k = k
        self.s = s
        self.budget = budget
        self.trace = None
        self._tables = tables
        self._sc = {}

    def sc(self, c):
        if c not in self._sc:
            self._sc[c] = derive_sc(self.s, c)
        return self._sc[c]

    def table(self, c):
        return self._tables[c]

    def lookup(self, cs, points):
        return np.array([self.table(c).get(p) for c, p in zip(cs, points)], dtype=np.uint64)


class DeferredMultiTableSet(MultiTableSet):
    """Reusable tables evaluated on demand from dealer secrets (simulation only).

    The value for key ``kappa`` in table ``c`` is found by solving
    ``kappa - K*(s0c + s1c)*G = idx * K*G`` with a precomputed index map.
    """

    _index_cache = {}

    def __init__(self, party, func, keys, seed, budget):
        k0, k1, s0, s1 = keys
        super().__init__(party, func.func_id, func.in_cfg, k0 if party == 0 else k1,
                         s0 if party == 0 else s1, None, budget)
        self._keys = keys
        self.seed = seed
        self.values = func.table_values()
        self._kk = k0 * k1 % ec.N
        self._offsets = {}
        self._index = self._index_map(self._kk, self.cfg.grid_size)

    @classmethod
    def _index_map(cls, kk, size):
        ck = (kk, size)
        if ck not in cls._index_cache:
            base = ec.base_mult(kk)
            pts = ec.chain(base, base, size - 1)
            cls._index_cache[ck] = {ec.compress(p): i + 1 for i, p in enumerate(pts)}
        return cls._index_cache[ck]

    def _offset(self, c):
        if c not in self._offsets:
            _, _, s0, s1 = self._keys
            sc = (derive_sc(s0, c) + derive_sc(s1, c)) % ec.N
            self._offsets[c] = ec.point_neg(ec.base_mult(self._kk * sc % ec.N))
        return self._offsets[c]

    def lookup(self, cs, points):
        out = np.empty(len(cs), dtype=np.uint64)
        for j, (c, p) in enumerate(zip(cs, points)):
            q = ec.point_add(p, self._offset(c))
            if q is None:
                idx = 0
            else:
                idx = self._index.get(ec.compress(q))
                if idx is None:
                    raise MissingKey(f"no entry for query {j} in table c={c}")
            s0 = value_share0(self.seed, b"M", self.func_id, c, idx)
            out[j] = s0 if self.party == 0 else (int(self.values[idx]) - s0) & ((1 << 64) - 1)
        return out

    def materialize(self, c):
        k0, k1, s0, s1 = self._keys
        return _build_multi_tables(self.func_id, self.cfg, self.values, [c], k0 * k1 % ec.N,
                                   s0, s1, self.seed, self.budget)[self.party][0]


def _build_multi_tables(func_id, cfg, values, cs, kk, s0, s1, seed, budget):
    size = cfg.grid_size
    base = ec.base_mult(kk)
    out0, out1 = [], []
    for c in cs:
        sc = (derive_sc(s0, c) + derive_sc(s1, c)) % ec.N
        first = ec.base_mult(kk * sc % ec.N)
        pts = ec.chain(first, base, size)
        keys = [kappa_key(p) for p in pts]
        sh0 = value_shares0(seed, b"M", func_id, c, size)
        sh1 = values - sh0
        eps, eps_t = (budget.epsilon, budget.epsilon_total) if budget else (0.0, 0.0)
        for party, sh, out in ((0, sh0, out0), (1, sh1, out1)):
            order = entry_order(seed, b"M" + bytes([party]), func_id, c, size).tolist()
            sh_l = sh.tolist()
            out.append(MultiTable(func_id, cfg, c, {keys[i]: sh_l[i] for i in order}, eps, eps_t))
    return out0, out1


def gen_multi_tables(func, m, keys, seed, epsilon=math.inf, r_multi=1):
    """Generate ``m`` reusable tables for both parties.

    Uses one scalar multiplication for ``K*G``, one per table for the
    table's first key, and then only point additions.

    Args:
        func: table function spec.
        m: number of tables.
        keys: ``(k0, k1, s0, s1)`` scalars in [1, N).
        seed: 32-byte dealer secret for value shares and shuffles.
        epsilon, r_multi: per-query budget and queries per table.
    """
    k0, k1, s0, s1 = keys
    for v in keys:
        if not 0 < v < ec.N:
            raise ConfigInvalid("scalars must lie in [1, N)")
    values = func.table_values()
    t0, t1 = _build_multi_tables(func.func_id, func.in_cfg, values, range(m), k0 * k1 % ec.N,
                                 s0, s1, seed, BudgetState(epsilon, r_multi, m))
    return (MultiTableSet(0, func.func_id, func.in_cfg, k0, s0, t0,
                          BudgetState(epsilon, r_multi, m)),
            MultiTableSet(1, func.func_id, func.in_cfg, k1, s1, t1,
                          BudgetState(epsilon, r_multi, m)))


def query_multi(session, x_share, tset, noise_share, pair):
    """Noisy reusable-table lookup (three rounds).

    Args:
        session: party session.
        x_share: ring shares of the inputs (uint64 array).
        tset: this party's ``MultiTableSet``.
        noise_share: ring shares of the per-query noise, same shape.
        pair: ``ConversionPair`` with one entry per query.

    Returns:
        Ring shares of ``f(x + noise)``.
    """
    xv = np.atleast_1d(np.asarray(getattr(x_share, "value", x_share), dtype=np.uint64))
    shape = xv.shape
    flat = xv.ravel()
    gamma = np.asarray(getattr(noise_share, "value", noise_share), dtype=np.uint64).ravel()
    cs = [tset.budget.spend() for _ in range(flat.size)]
    noisy = flat + gamma
    if session.party == 0:
        noisy = noisy + np.uint64(rebase_offset(tset.cfg))
    xn = share_convert(session, noisy, pair, bound=tset.cfg.grid_size).value
    n = ec.N
    first = [ec.compress(ec.base_mult(tset.k * (xj + tset.sc(c)) % n)) for xj, c in zip(xn, cs)]
    peer_first = session.exchange_blobs(first, POINT_SIZE, MsgType.EC_FIRST)
    mine = [ec.scalar_mult(tset.k, ec.decompress(q)) for q in peer_first]
    peer_second = session.exchange_blobs([ec.compress(p) for p in mine], POINT_SIZE,
                                         MsgType.EC_SECOND)
    kappas = []
    for p, q in zip(mine, peer_second):
        kap = ec.point_add(p, ec.decompress(q))
        if kap is None:
            raise InvalidPoint("combined key is the point at infinity")
        kappas.append(kap)
    if tset.trace is not None:
        for c, kap in zip(cs, kappas):
            tset.trace.record(c, kappa_key(kap))
    return tset.lookup(cs, kappas).reshape(shape)
