"""Client-aided offline phase: the dealer (CSP) and its bundles.

The dealer derives every item of correlated randomness from a seed and a
per-kind item counter, so a party's requests can be answered live (in-process
runs), counted (dry runs) or replayed into a bundle on disk. All three
providers expose the same request interface:

``beaver(shape_a, shape_b)``, ``matmul(shape_a, shape_b)``,
``data_mask(shape)``, ``batch_triple(mask_id, rows, k, kp)``,
``conversion(count, bound)``, ``noise(func_id, count)`` and ``lookup(spec)``.
"""

import hashlib
import json
import math
import os
import struct
import threading
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from . import ec
from .activations import DRELU, EXP, INVERSE, SIGMOID, Lookup, spec_by_id
from .dxpriv import GeometricParams, gen_noise_shares
from .errors import (ConfigInvalid, CorruptBundle, DimensionMismatch, OfflineUnderprovisioned,
                     TableExhausted, VersionMismatch)
from .ring64 import RING_SIZE
from .sharing import BeaverTriple, ConversionPair, MatMulTriple, MatrixTriple, random_ring
from .tables_multi import (BudgetState, DeferredMultiTableSet, MultiTable, MultiTableSet)
from .tables_single import DeferredSingleTableSet, SingleTable, SingleTableSet

BUNDLE_FORMAT = "lutmpc-bundle"
BUNDLE_VERSION = 1

KIND_CODES = {"beaver": 1, "matmul": 2, "mask": 3, "batch": 4, "conv": 5, "noise": 6, "data": 7}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
ALL_SPECS = (SIGMOID, DRELU, EXP, INVERSE)
NO_BATCH = 0xFFFFFFFF

Item = namedtuple("Item", "kind batch arrays")


@dataclass(frozen=True)
class LookupMode:
    """Which table family serves lookups, and its privacy parameters.

    In multi mode each table serves ``r_multi`` queries at ``epsilon`` each,
    so its total budget is ``epsilon * r_multi``. ``epsilon = inf`` disables
    the noise.
    """

    kind: str = "single"
    epsilon: float = math.inf
    r_multi: int = 1
    clamp_bound: int = 1 << 13

    def __post_init__(self):
        if self.kind not in ("single", "multi"):
            raise ConfigInvalid(f"unknown lookup mode {self.kind!r}")
        if int(self.r_multi) != self.r_multi or self.r_multi < 1:
            raise ConfigInvalid("r_multi must be a positive integer")
        if not self.epsilon > 0:
            raise ConfigInvalid("epsilon must be positive")

    @classmethod
    def multi(cls, epsilon=None, epsilon_total=None, r_multi=None, clamp_bound=1 << 13):
        """Multi mode from any two of ``epsilon``, ``epsilon_total`` and ``r_multi``."""
        given = sum(v is not None for v in (epsilon, epsilon_total, r_multi))
        if given < 2:
            raise ConfigInvalid("give two of epsilon, epsilon_total, r_multi")
        if r_multi is None:
            r_multi = BudgetState.from_totals(epsilon, epsilon_total, 1).r_multi
        elif epsilon is None:
            epsilon = epsilon_total / r_multi
        elif epsilon_total is not None and not math.isclose(epsilon * r_multi, epsilon_total):
            raise ConfigInvalid("epsilon * r_multi must equal epsilon_total")
        return cls("multi", float(epsilon), int(r_multi), int(clamp_bound))

    @property
    def is_multi(self):
        return self.kind == "multi"

    @property
    def epsilon_total(self):
        return self.epsilon * self.r_multi

    def tables_needed(self, lookups):
        if not self.is_multi:
            return lookups
        return -(-lookups // self.r_multi)


def _split(rng, v):
    r = random_ring(rng, v.shape)
    return r, v - r


def _rand_mod_n(rng, count):
    raw = rng.bytes(48 * count)
    return [int.from_bytes(raw[48 * i:48 * (i + 1)], "little") % ec.N for i in range(count)]


def _limbs(ints):
    """Python ints below 2^256 as ``(count, 4)`` little-endian uint64 limbs."""
    out = np.zeros((len(ints), 4), dtype=np.uint64)
    for i, v in enumerate(ints):
        for j in range(4):
            out[i, j] = (v >> (64 * j)) & (RING_SIZE - 1)
    return out


def _from_limbs(arr):
    return [sum(int(row[j]) << (64 * j) for j in range(4)) for row in np.asarray(arr)]


class Dealer:
    """The CSP: derives all offline material from ``seed``.

    Item ``idx`` of a kind is generated from its own seed sequence, so both
    parties (or a replay) obtain matching halves independently. With
    ``cache=True`` an item is generated once and handed to both parties.
    """

    def __init__(self, seed=0, mode=LookupMode(), cache=True):
        if int(seed) < 0:
            raise ConfigInvalid("seed must be non-negative")
        self.seed = int(seed)
        self.mode = mode
        self.secret = hashlib.sha256(b"lutmpc-dealer" + self.seed.to_bytes(16, "little")).digest()
        self.cache = cache
        self._cache = {}
        self._masks = {}
        self._mask_shapes = {}
        self._tsets = {}
        self._lock = threading.RLock()

    def rng(self, kind, idx):
        return np.random.default_rng(np.random.SeedSequence([self.seed, KIND_CODES[kind], idx]))

    # key material -------------------------------------------------------
    def _digest(self, label, func_id):
        return hashlib.sha256(self.secret + label + struct.pack(">H", func_id)).digest()

    def _scalar(self, label, func_id):
        return int.from_bytes(self._digest(label, func_id), "big") % (ec.N - 1) + 1

    def single_keys(self, func_id):
        return self._digest(b"k0", func_id), self._digest(b"k1", func_id)

    def multi_keys(self, func_id):
        return tuple(self._scalar(lab, func_id) for lab in (b"mk0", b"mk1", b"ms0", b"ms1"))

    def table_seed(self, func_id):
        return self._digest(b"tab", func_id)

    def table_set(self, party, spec, m=None):
        """Deferred table set for ``party`` (simulation and bundle writing)."""
        key = (party, int(spec.func_id))
        with self._lock:
            if key not in self._tsets:
                fid = int(spec.func_id)
                if self.mode.is_multi:
                    budget = BudgetState(self.mode.epsilon, self.mode.r_multi,
                                         (1 << 62) if m is None else m)
                    tset = DeferredMultiTableSet(party, spec, self.multi_keys(fid),
                                                 self.table_seed(fid), budget)
                else:
                    k0, k1 = self.single_keys(fid)
                    tset = DeferredSingleTableSet(party, spec, k0, k1, self.table_seed(fid), m)
                self._tsets[key] = tset
            return self._tsets[key]

    # items --------------------------------------------------------------
    def item(self, kind, idx, party, params):
        """Party ``party``'s half of item ``idx`` of ``kind``, as uint64 arrays."""
        if not self.cache:
            return self._make(kind, idx, params)[party]
        key = (kind, idx)
        with self._lock:
            entry = self._cache.get(key)
            if entry is None:
                entry = self._cache[key] = [params, self._make(kind, idx, params), 0]
            elif entry[0] != params:
                raise DimensionMismatch(f"{kind} item {idx} requested as {params} and {entry[0]}")
            entry[2] += 1
            if entry[2] == 2:
                del self._cache[key]
            return entry[1][party]

    def _make(self, kind, idx, params):
        rng = self.rng(kind, idx)
        if kind == "beaver":
            sa, sb = params
            a, b = random_ring(rng, sa), random_ring(rng, sb)
            parts = [_split(rng, v) for v in (a, b, a * b)]
        elif kind == "matmul":
            sa, sb = params
            a, b = random_ring(rng, sa), random_ring(rng, sb)
            parts = [_split(rng, v) for v in (a, b, np.matmul(a, b))]
        elif kind == "mask":
            parts = [_split(rng, self.mask(idx, params[0]))]
        elif kind == "batch":
            mask_id, rows, k, kp = params
            ub = self.mask(mask_id)[np.asarray(rows, dtype=np.int64)]
            v = random_ring(rng, (ub.shape[1], k))
            vp = random_ring(rng, (ub.shape[0], kp))
            parts = [_split(rng, x) for x in (v, np.matmul(ub, v), vp, np.matmul(ub.T, vp))]
        elif kind == "conv":
            count, bound = params
            r = rng.integers(0, RING_SIZE - bound, size=count, dtype=np.uint64, endpoint=True)
            rs0, rs1 = _split(rng, r)
            rb0 = _rand_mod_n(rng, count)
            rb1 = [(int(v) - a) % ec.N for v, a in zip(r.tolist(), rb0)]
            parts = [(rs0, rs1), (_limbs(rb0), _limbs(rb1))]
        elif kind == "noise":
            _, count = params
            p = GeometricParams(self.mode.epsilon, self.mode.clamp_bound)
            s0, s1 = gen_noise_shares(p, count, rng)
            parts = [(s0.value, s1.value)]
        else:
            raise ConfigInvalid(f"unknown item kind {kind!r}")
        return tuple(p[0] for p in parts), tuple(p[1] for p in parts)

    def mask(self, idx, shape=None):
        """The cleartext data mask ``U`` of mask item ``idx``."""
        with self._lock:
            if idx not in self._masks:
                if shape is None:
                    shape = self._mask_shapes.get(idx)
                    if shape is None:
                        raise OfflineUnderprovisioned(f"data mask {idx} was never requested")
                self._mask_shapes[idx] = tuple(shape)
                rng = np.random.default_rng(np.random.SeedSequence([self.seed, 99, idx]))
                self._masks[idx] = random_ring(rng, tuple(shape))
            return self._masks[idx]

    def share_data(self, name_idx, values):
        """Split a data matrix owned by the clients into two shares."""
        rng = self.rng("data", name_idx)
        return _split(rng, np.asarray(values, dtype=np.int64).view(np.uint64))

    def provider(self, party):
        return DealerProvider(self, party)


class _ProviderBase:
    """Request bookkeeping shared by all providers."""

    def __init__(self, party):
        self.party = party
        self.batch = None
        self._next = dict.fromkeys(KIND_CODES, 0)
        self._lookups = {}

    def begin_batch(self, b):
        self.batch = b

    def _idx(self, kind):
        i = self._next[kind]
        self._next[kind] += 1
        return i

    def _get(self, kind, params):
        raise NotImplementedError

    def beaver(self, shape_a, shape_b=None):
        shape_a = tuple(shape_a)
        shape_b = shape_a if shape_b is None else tuple(shape_b)
        a, b, c = self._get("beaver", (shape_a, shape_b))
        return BeaverTriple(a, b, c, self.party)

    def matmul(self, shape_a, shape_b):
        shape_a, shape_b = tuple(shape_a), tuple(shape_b)
        if len(shape_a) != 2 or len(shape_b) != 2 or shape_a[1] != shape_b[0]:
            raise DimensionMismatch(f"cannot multiply {shape_a} by {shape_b}")
        a, b, c = self._get("matmul", (shape_a, shape_b))
        return MatMulTriple(a, b, c, self.party)

    def data_mask(self, shape):
        """Returns ``(mask_id, share of U)``."""
        mid = self._next["mask"]
        (u,) = self._get("mask", (tuple(shape),))
        return mid, u

    def batch_triple(self, mask_id, rows, k, kp):
        rows = tuple(int(r) for r in rows)
        v, z, vp, zp = self._get("batch", (mask_id, rows, int(k), int(kp)))
        return MatrixTriple(v, z, vp, zp, self.party)

    def conversion(self, count, bound):
        rs, rb = self._get("conv", (int(count), int(bound)))
        return ConversionPair(rs, _from_limbs(rb), self.party, int(bound))

    def noise(self, func_id, count):
        (g,) = self._get("noise", (int(func_id), int(count)))
        return g

    def tables(self, spec):
        raise NotImplementedError

    def lookup(self, spec):
        fid = int(spec.func_id)
        if fid not in self._lookups:
            self._lookups[fid] = Lookup(self.tables(spec), self)
        return self._lookups[fid]


class DealerProvider(_ProviderBase):
    """Live provider backed by a dealer in the same process (simulation)."""

    def __init__(self, dealer, party):
        super().__init__(party)
        self.dealer = dealer

    @property
    def mode(self):
        return self.dealer.mode

    def _get(self, kind, params):
        return self.dealer.item(kind, self._idx(kind), self.party, params)

    def tables(self, spec):
        return self.dealer.table_set(self.party, spec)


class CountingTableSet:
    """Placeholder table set of a dry run; counts queries."""

    dry = True

    def __init__(self, spec, multi):
        self.func_id = int(spec.func_id)
        self.cfg = spec.in_cfg
        self.multi = multi
        self.lookups = 0

    def record(self, n):
        self.lookups += int(n)


class CountingProvider(_ProviderBase):
    """Dry-run provider: records every request and returns zero material."""

    dry = True

    def __init__(self, mode=LookupMode(), party=0):
        super().__init__(party)
        self.mode = mode
        self.plan = []
        self._tsets = {}
        self._mask_cols = {}

    def _get(self, kind, params):
        self._idx(kind)
        self.plan.append((kind, self.batch, params))
        if kind == "beaver":
            sa, sb = params
            c = np.broadcast_shapes(sa, sb)
            return np.zeros(sa, np.uint64), np.zeros(sb, np.uint64), np.zeros(c, np.uint64)
        if kind == "matmul":
            sa, sb = params
            return (np.zeros(sa, np.uint64), np.zeros(sb, np.uint64),
                    np.zeros((sa[0], sb[1]), np.uint64))
        if kind == "mask":
            return (np.zeros(params[0], np.uint64),)
        if kind == "batch":
            mask_id, rows, k, kp = params
            d = self._mask_cols[mask_id]
            b = len(rows)
            return (np.zeros((d, k), np.uint64), np.zeros((b, k), np.uint64),
                    np.zeros((b, kp), np.uint64), np.zeros((d, kp), np.uint64))
        if kind == "conv":
            return np.zeros(params[0], np.uint64), np.zeros((params[0], 4), np.uint64)
        if kind == "noise":
            return (np.zeros(params[1], np.uint64),)
        raise ConfigInvalid(f"unknown item kind {kind!r}")

    def data_mask(self, shape):
        self._mask_cols[self._next["mask"]] = tuple(shape)[1]
        return super().data_mask(shape)

    def tables(self, spec):
        fid = int(spec.func_id)
        if fid not in self._tsets:
            self._tsets[fid] = CountingTableSet(spec, self.mode.is_multi)
        return self._tsets[fid]

    def manifest(self):
        """Consumption counts of the recorded run."""
        counts = {k: 0 for k in KIND_CODES if k != "data"}
        elements = dict(counts)
        batches = set()
        for kind, batch, params in self.plan:
            counts[kind] += 1
            if batch is not None:
                batches.add(batch)
            if kind == "beaver":
                elements[kind] += int(np.prod(np.broadcast_shapes(*params)))
            elif kind == "matmul":
                elements[kind] += params[0][0] * params[1][1]
            elif kind == "mask":
                elements[kind] += int(np.prod(params[0]))
            elif kind == "batch":
                elements[kind] += len(params[1])
            else:
                elements[kind] += params[-1] if kind == "noise" else params[0]
        tables = {}
        for spec in ALL_SPECS:
            ts = self._tsets.get(int(spec.func_id))
            n = ts.lookups if ts else 0
            tables[spec_name(spec)] = {
                "func_id": int(spec.func_id),
                "cfg": [spec.in_cfg.int_bits, spec.in_cfg.frac_bits, spec.in_cfg.total_bits],
                "lookups": n,
                "tables": self.mode.tables_needed(n),
            }
        return {
            "mode": self.mode.kind,
            "epsilon": self.mode.epsilon,
            "r_multi": self.mode.r_multi,
            "clamp_bound": self.mode.clamp_bound,
            "items": counts,
            "elements": elements,
            "batches": len(batches),
            "tables": tables,
        }


def spec_name(spec):
    return {int(SIGMOID.func_id): "sigmoid", int(DRELU.func_id): "drelu",
            int(EXP.func_id): "exp", int(INVERSE.func_id): "inverse"}[int(spec.func_id)]


def _json_safe(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_safe(v) for v in x]
    return x


def _json_float(x):
    return math.inf if x == "inf" else float(x)


# bundles ------------------------------------------------------------------

@dataclass
class OfflineBundle:
    """Everything one party receives from the CSP.

    ``items`` and ``tables`` are zero-argument callables returning fresh
    iterators, so a bundle can be consumed (or written) without holding
    all its material in memory.
    """

    party: int
    manifest: dict
    data: dict
    items: object
    tables: dict
    secrets: dict

    def iter_items(self):
        return self.items()

    def iter_tables(self, func_id):
        src = self.tables.get(int(func_id))
        return iter(()) if src is None else src()


def plan_run(program, mode=LookupMode()):
    """Dry-run ``program(session, provider)`` and return its provider."""
    from .net import NullSession

    prov = CountingProvider(mode)
    program(NullSession(0), prov)
    return prov


def _replay(seed, mode, party, plan):
    dealer = Dealer(seed, mode, cache=False)
    idx = dict.fromkeys(KIND_CODES, 0)
    for kind, batch, params in plan:
        arrays = dealer.item(kind, idx[kind], party, params)
        idx[kind] += 1
        yield Item(kind, batch, arrays)


def _table_source(seed, mode, party, spec, m):
    def gen():
        tset = Dealer(seed, mode, cache=False).table_set(party, spec, m)
        for c in range(m):
            yield tset.materialize(c)
    return gen


def provision(data, program, mode=LookupMode(), seed=0):
    """Produce both parties' bundles for one run.

    Args:
        data: mapping ``name -> int64 array`` of client data (raw fixed point).
        program: ``program(session, provider, shapes)`` runs one party's online
            phase; it is dry-run once to count consumption.
        mode: lookup mode and privacy parameters.
        seed: dealer seed; bundles are deterministic in it.
    """
    shapes = {k: np.shape(v) for k, v in data.items()}
    prov = plan_run(lambda s, p: program(s, p, shapes), mode)
    manifest = prov.manifest()
    manifest["data"] = {k: list(s) for k, s in shapes.items()}
    manifest["seed_digest"] = hashlib.sha256(str(seed).encode()).hexdigest()[:16]
    dealer = Dealer(seed, mode, cache=False)
    shares = {}
    for i, (name, v) in enumerate(sorted(data.items())):
        shares[name] = dealer.share_data(i, v)
    bundles = []
    for party in (0, 1):
        secrets = {}
        tables = {}
        for spec in ALL_SPECS:
            fid = int(spec.func_id)
            m = manifest["tables"][spec_name(spec)]["tables"]
            if m == 0:
                continue
            if mode.is_multi:
                k0, k1, s0, s1 = dealer.multi_keys(fid)
                secrets[fid] = {"k": (k0, k1)[party], "s": (s0, s1)[party]}
            else:
                secrets[fid] = {"key": dealer.single_keys(fid)[party].hex()}
            tables[fid] = _table_source(seed, mode, party, spec, m)
        plan = list(prov.plan)
        bundles.append(OfflineBundle(
            party, dict(manifest, party=party),
            {k: v[party] for k, v in shares.items()},
            (lambda party=party, plan=plan: _replay(seed, mode, party, plan)),
            tables, secrets))
    return bundles[0], bundles[1]


class TableStream:
    """Sequential access to streamed tables; only the current one is resident."""

    def __init__(self, tables):
        self._it = iter(tables)
        self._cur = None
        self.loaded = 0

    def __getitem__(self, c):
        while self._cur is None or self._cur.c < c:
            try:
                self._cur = next(self._it)
            except StopIteration:
                raise TableExhausted(f"table c={c} not provisioned") from None
            self.loaded += 1
        if self._cur.c != c:
            raise TableExhausted(f"table c={c} was already released")
        return self._cur


class BundleProvider(_ProviderBase):
    """Provider that serves a party from its bundle, in request order."""

    def __init__(self, bundle):
        super().__init__(bundle.party)
        self.bundle = bundle
        man = bundle.manifest
        self.mode = (LookupMode.multi(epsilon=_json_float(man["epsilon"]), r_multi=man["r_multi"],
                                      clamp_bound=man["clamp_bound"])
                     if man["mode"] == "multi" else LookupMode())
        self._items = bundle.iter_items()
        self._tsets = {}

    def _get(self, kind, params):
        self._idx(kind)
        try:
            item = next(self._items)
        except StopIteration:
            raise OfflineUnderprovisioned(f"bundle has no {kind} item left") from None
        if item.kind != kind:
            raise OfflineUnderprovisioned(f"next bundle item is {item.kind}, run needs {kind}")
        first = _expected_first_shape(kind, params)
        if first is not None and tuple(item.arrays[0].shape) != first:
            raise OfflineUnderprovisioned(f"{kind} item has shape {item.arrays[0].shape}, "
                                          f"run needs {first}")
        return item.arrays

    def tables(self, spec):
        fid = int(spec.func_id)
        if fid not in self._tsets:
            man = self.bundle.manifest["tables"][spec_name(spec)]
            sec = self.bundle.secrets.get(fid)
            if sec is None:
                raise OfflineUnderprovisioned(f"bundle has no {spec_name(spec)} tables")
            m = man["tables"]
            stream = self.bundle.iter_tables(fid)
            if self.mode.is_multi:
                budget = BudgetState(self.mode.epsilon, self.mode.r_multi, m)
                tset = MultiTableSet(self.party, fid, spec.in_cfg, int(sec["k"]), int(sec["s"]),
                                     TableStream(stream), budget)
            else:
                tset = SingleTableSet(self.party, fid, spec.in_cfg, bytes.fromhex(sec["key"]),
                                      stream)
                tset.m = m
            self._tsets[fid] = tset
        return self._tsets[fid]


def _expected_first_shape(kind, params):
    if kind in ("beaver", "matmul"):
        return params[0]
    if kind == "mask":
        return params[0]
    if kind == "conv":
        return (params[0],)
    if kind == "noise":
        return (params[1],)
    return None


_ITEM_HEAD = struct.Struct(">BIB")


def _write_array(fh, arr):
    arr = np.ascontiguousarray(arr, dtype=np.uint64)
    fh.write(struct.pack(">B", arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<u8", copy=False).tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) < n:
        raise CorruptBundle("unexpected end of bundle section")
    return data


def _read_array(fh):
    (ndim,) = struct.unpack(">B", _read_exact(fh, 1))
    shape = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    raw = _read_exact(fh, 8 * count)
    return np.frombuffer(raw, dtype="<u8").astype(np.uint64).reshape(shape)


class _HashingWriter:
    def __init__(self, path):
        self.fh = open(path, "wb")
        self.h = hashlib.sha256()
        self.n = 0

    def write(self, data):
        self.fh.write(data)
        self.h.update(data)
        self.n += len(data)

    def close(self):
        self.fh.close()
        return {"sha256": self.h.hexdigest(), "bytes": self.n}


def write_bundle(bundle, path):
    """Write ``bundle`` as a directory: manifest, data, items, one file per table family."""
    os.makedirs(path, exist_ok=True)
    sections = {}

    w = _HashingWriter(os.path.join(path, "data.bin"))
    for name in sorted(bundle.data):
        enc = name.encode()
        w.write(struct.pack(">H", len(enc)) + enc)
        _write_array(w, bundle.data[name])
    sections["data.bin"] = w.close()

    w = _HashingWriter(os.path.join(path, "items.bin"))
    n_items = 0
    for item in bundle.iter_items():
        batch = NO_BATCH if item.batch is None else int(item.batch)
        w.write(_ITEM_HEAD.pack(KIND_CODES[item.kind], batch, len(item.arrays)))
        for arr in item.arrays:
            _write_array(w, arr)
        n_items += 1
    sections["items.bin"] = w.close()

    table_counts = {}
    for fid in sorted(bundle.tables):
        fname = f"tables_{spec_name(spec_by_id(fid))}.bin"
        w = _HashingWriter(os.path.join(path, fname))
        n = 0
        for t in bundle.iter_tables(fid):
            w.write(t.to_bytes())
            n += 1
        sections[fname] = w.close()
        table_counts[str(fid)] = n

    man = dict(bundle.manifest)
    man.update(format=BUNDLE_FORMAT, version=BUNDLE_VERSION, sections=sections,
               item_records=n_items, table_records=table_counts,
               secrets={str(k): v for k, v in bundle.secrets.items()})
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(_json_safe(_stringify_ints(man)), fh, sort_keys=True, indent=1)
    return path


def _stringify_ints(x):
    # curve scalars exceed JSON-safe integers in most readers
    if isinstance(x, dict):
        return {k: _stringify_ints(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_stringify_ints(v) for v in x]
    if isinstance(x, int) and not isinstance(x, bool) and abs(x) >= 1 << 53:
        return str(x)
    return x


def _verify(path, name, meta):
    full = os.path.join(path, name)
    if not os.path.exists(full):
        raise CorruptBundle(f"missing section {name}")
    h = hashlib.sha256()
    n = 0
    with open(full, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
            n += len(chunk)
    if n != meta["bytes"] or h.hexdigest() != meta["sha256"]:
        raise CorruptBundle(f"checksum mismatch in {name}")


def read_bundle(path, verify=True):
    """Open a bundle directory; tables and items are streamed on demand."""
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as fh:
            man = json.load(fh)
    except FileNotFoundError:
        raise CorruptBundle(f"no manifest in {path}") from None
    except json.JSONDecodeError as exc:
        raise CorruptBundle(f"unreadable manifest: {exc}") from None
    if man.get("format") != BUNDLE_FORMAT:
        raise VersionMismatch(f"not a bundle: format {man.get('format')!r}")
    if man.get("version") != BUNDLE_VERSION:
        raise VersionMismatch(f"bundle version {man.get('version')} != {BUNDLE_VERSION}")
    sections = man["sections"]
    if verify:
        for name, meta in sections.items():
            _verify(path, name, meta)

    data = {}
    with open(os.path.join(path, "data.bin"), "rb") as fh:
        while True:
            head = fh.read(2)
            if not head:
                break
            (ln,) = struct.unpack(">H", head)
            name = _read_exact(fh, ln).decode()
            data[name] = _read_array(fh)

    n_items = man["item_records"]

    def items():
        with open(os.path.join(path, "items.bin"), "rb") as fh:
            for _ in range(n_items):
                code, batch, narr = _ITEM_HEAD.unpack(_read_exact(fh, _ITEM_HEAD.size))
                if code not in KIND_NAMES:
                    raise CorruptBundle(f"unknown item kind code {code}")
                arrays = tuple(_read_array(fh) for _ in range(narr))
                yield Item(KIND_NAMES[code], None if batch == NO_BATCH else batch, arrays)

    multi = man["mode"] == "multi"
    tables = {}
    for fid_s, count in man["table_records"].items():
        fid = int(fid_s)
        fname = f"tables_{spec_name(spec_by_id(fid))}.bin"

        def gen(fname=fname, count=count):
            cls = MultiTable if multi else SingleTable
            with open(os.path.join(path, fname), "rb") as fh:
                for _ in range(count):
                    yield cls.from_stream(fh)
        tables[fid] = gen

    secrets = {int(k): v for k, v in man.get("secrets", {}).items()}
    for v in secrets.values():
        for key in ("k", "s"):
            if key in v:
                v[key] = int(v[key])
    return OfflineBundle(int(man["party"]), man, data, items, tables, secrets)
