"""Single-use secret-shared lookup tables.

For table index ``c`` the dealer gives party 0 the map
``H(x + pad(k_1, c)) -> <f(x)>_0`` and party 1 the map
``H(x + pad(k_0, c)) -> <f(x)>_1`` over every grid point ``x``. Online, each
party sends its share plus its own pad, so the peer learns ``x`` masked by a
pad that is never reused.

Two kinds of table set share one interface:

* ``SingleTableSet`` holds materialised tables (what a party reads from the
  dealer's bundle).
* ``DeferredSingleTableSet`` derives each entry on demand from the dealer's
  secrets. It is a simulation device for long in-process runs and must never
  be handed to a real party, since it can evaluate both parties' tables.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MissingKey, TableExhausted, VersionMismatch, CorruptBundle
from .net import MsgType
from .ring64 import FixedCfg, RING_MASK, to_signed

MAGIC_SINGLE = b"HWK1"
HEADER_SINGLE = struct.Struct(">4sHBBBQI")
ENTRY_SIZE = 40


def pad64(k, c):
    """Ring pad of key ``k`` (32 bytes) for table ``c``.

    The digest of ``k || c`` (c as 8-byte big-endian) is read as a
    little-endian integer and reduced mod 2^64.
    """
    d = hashlib.sha256(k + int(c).to_bytes(8, "big")).digest()
    return int.from_bytes(d[:8], "little")


def outer_key(u):
    """32-byte table key for the masked ring value ``u``."""
    return hashlib.sha256((int(u) & RING_MASK).to_bytes(8, "little")).digest()


def value_share0(seed, tag, func_id, c, idx):
    """Party 0's value share for grid index ``idx`` of table ``c``."""
    msg = seed + tag + struct.pack(">HQI", func_id, c, idx)
    return int.from_bytes(hashlib.sha256(msg).digest()[:8], "little")


def value_shares0(seed, tag, func_id, c, size):
    """Vector of party 0's value shares for a whole table."""
    prefix = seed + tag + struct.pack(">HQ", func_id, c)
    out = np.empty(size, dtype=np.uint64)
    for i in range(size):
        d = hashlib.sha256(prefix + i.to_bytes(4, "big")).digest()
        out[i] = int.from_bytes(d[:8], "little")
    return out


def entry_order(seed, tag, func_id, c, size):
    """Shuffle applied to the stored entries of a table."""
    d = hashlib.sha256(seed + tag + b"perm" + struct.pack(">HQ", func_id, c)).digest()
    return np.random.default_rng(int.from_bytes(d[:16], "little")).permutation(size)


def grid_index(x, cfg):
    """Map sign-extended ring values to grid indices, -1 where off-grid."""
    s = to_signed(np.asarray(x, dtype=np.uint64))
    idx = s - cfg.raw_min
    return np.where((s >= cfg.raw_min) & (s <= cfg.raw_max), idx, -1)


@dataclass
class SingleTable:
    """One party's view of table ``c``: key bytes to value share."""

    func_id: int
    cfg: FixedCfg
    c: int
    entries: dict

    def lookup(self, u):
        """Fetch the value shares for masked preimages ``u`` (uint64 array)."""
        out = np.empty(len(u), dtype=np.uint64)
        for j, uj in enumerate(np.asarray(u, dtype=np.uint64).tolist()):
            try:
                out[j] = self.entries[outer_key(uj)]
            except KeyError:
                raise MissingKey(f"no entry for query {j} in table c={self.c}") from None
        return out

    def to_bytes(self):
        head = HEADER_SINGLE.pack(MAGIC_SINGLE, self.func_id, self.cfg.int_bits,
                                  self.cfg.frac_bits, self.cfg.total_bits, self.c,
                                  len(self.entries))
        body = b"".join(k + int(v).to_bytes(8, "little") for k, v in self.entries.items())
        return head + body

    @classmethod
    def from_stream(cls, fh):
        head = fh.read(HEADER_SINGLE.size)
        if len(head) < HEADER_SINGLE.size:
            raise CorruptBundle("truncated table header")
        magic, fid, ib, fb, tb, c, count = HEADER_SINGLE.unpack(head)
        if magic != MAGIC_SINGLE:
            raise VersionMismatch(f"unexpected table magic {magic!r}")
        body = fh.read(count * ENTRY_SIZE)
        if len(body) < count * ENTRY_SIZE:
            raise CorruptBundle("truncated table body")
        entries = {}
        for off in range(0, len(body), ENTRY_SIZE):
            entries[body[off:off + 32]] = int.from_bytes(body[off + 32:off + 40], "little")
        return cls(fid, FixedCfg(ib, fb, tb), c, entries)


class _SetBase:
    """Sequential consumption of single-use tables."""

    def __init__(self, party, func_id, cfg, key, m):
        self.party = party
        self.func_id = func_id
        self.cfg = cfg
        self.key = key
        self.m = m
        self.next_c = 0

    def take(self, count):
        """Reserve ``count`` fresh table indices."""
        if self.m is not None and self.next_c + count > self.m:
            raise TableExhausted(f"{self.m} tables provisioned, {self.next_c} used, "
                                 f"{count} more requested")
        cs = np.arange(self.next_c, self.next_c + count, dtype=np.int64)
        self.next_c += count
        return cs

    def own_pads(self, cs):
        return np.array([pad64(self.key, c) for c in cs.tolist()], dtype=np.uint64)

    @property
    def remaining(self):
        return None if self.m is None else self.m - self.next_c


class SingleTableSet(_SetBase):
    """Materialised tables of one party, consumed in order."""

    def __init__(self, party, func_id, cfg, key, tables):
        self._tables = tables
        m = len(tables) if isinstance(tables, list) else None
        super().__init__(party, func_id, cfg, key, m)
        self._iter = iter(tables)
        self._loaded = {}

    def _table(self, c):
        while c not in self._loaded:
            try:
                t = next(self._iter)
            except StopIteration:
                raise TableExhausted(f"table c={c} not provisioned") from None
            self._loaded[t.c] = t
        return self._loaded.pop(c)

    def lookup(self, cs, u):
        out = np.empty(len(cs), dtype=np.uint64)
        for j, (c, uj) in enumerate(zip(cs.tolist(), np.asarray(u).tolist())):
            out[j] = self._table(c).lookup(np.array([uj], dtype=np.uint64))[0]
        return out


class DeferredSingleTableSet(_SetBase):
    """Tables derived entry by entry from the dealer's secrets (simulation only)."""

    def __init__(self, party, func, k0, k1, seed, m=None):
        key = k0 if party == 0 else k1
        super().__init__(party, func.func_id, func.in_cfg, key, m)
        self.peer_key = k1 if party == 0 else k0
        self.seed = seed
        self.values = func.table_values()

    def lookup(self, cs, u):
        cfg = self.cfg
        peer = np.array([pad64(self.peer_key, c) for c in cs.tolist()], dtype=np.uint64)
        idx = grid_index(np.asarray(u, dtype=np.uint64) - peer, cfg)
        if np.any(idx < 0):
            j = int(np.argmax(idx < 0))
            raise MissingKey(f"no entry for query {j} in table c={int(cs[j])}")
        s0 = np.array([value_share0(self.seed, b"S", self.func_id, c, i)
                       for c, i in zip(cs.tolist(), idx.tolist())], dtype=np.uint64)
        if self.party == 0:
            return s0
        return self.values[idx] - s0

    def materialize(self, c):
        """Build the explicit table ``c`` this set stands for."""
        return _build_table(self.party, self.func_id, self.cfg, self.values, c,
                            self.peer_key, self.seed)


def _build_table(party, func_id, cfg, values, c, peer_key, seed):
    size = cfg.grid_size
    s0 = value_shares0(seed, b"S", func_id, c, size)
    shares = s0 if party == 0 else values - s0
    pad = pad64(peer_key, c)
    xs = cfg.grid_raw().view(np.uint64) + np.uint64(pad)
    order = entry_order(seed, b"S" + bytes([party]), func_id, c, size)
    xs_l, sh_l = xs.tolist(), shares.tolist()
    entries = {outer_key(xs_l[i]): sh_l[i] for i in order.tolist()}
    return SingleTable(func_id, cfg, c, entries)


def gen_single_tables(func, m, keys, seed):
    """Generate ``m`` materialised tables for both parties.

    Args:
        func: table function spec (``func_id``, ``in_cfg``, ``table_values()``).
        m: number of tables.
        keys: ``(k0, k1)``, 32 bytes each.
        seed: 32-byte dealer secret for value shares and shuffles.

    Returns:
        ``(set_for_party0, set_for_party1)``.
    """
    k0, k1 = keys
    values = func.table_values()
    t0 = [_build_table(0, func.func_id, func.in_cfg, values, c, k1, seed) for c in range(m)]
    t1 = [_build_table(1, func.func_id, func.in_cfg, values, c, k0, seed) for c in range(m)]
    return (SingleTableSet(0, func.func_id, func.in_cfg, k0, t0),
            SingleTableSet(1, func.func_id, func.in_cfg, k1, t1))


def query_single(session, x_share, tset):
    """Evaluate the table function on shared inputs with one round.

    Each element of ``x_share`` consumes its own table. Returns value shares.
    """
    xv = np.atleast_1d(np.asarray(getattr(x_share, "value", x_share), dtype=np.uint64))
    flat = xv.ravel()
    cs = tset.take(flat.size)
    peer = session.exchange_words(flat + tset.own_pads(cs), MsgType.LOOKUP)
    return tset.lookup(cs, flat + peer).reshape(xv.shape)
