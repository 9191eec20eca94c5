"""Geometric mechanism, noise shares and an access-pattern auditor.

Noise is measured in grid steps: one unit moves a lookup input by one
table entry, so the metric |x - x'| counts entries.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, InsufficientSamples
from .sharing import Share, random_ring


@dataclass(frozen=True)
class GeometricParams:
    epsilon: float
    clamp_bound: int = 1 << 13

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigInvalid("epsilon must be positive")
        if self.clamp_bound < 0:
            raise ConfigInvalid("clamp_bound must be non-negative")

    @property
    def q(self):
        return math.exp(-self.epsilon)

    @property
    def p_zero(self):
        """Probability of zero noise before clamping."""
        return -math.expm1(-self.epsilon) / (1 + math.exp(-self.epsilon))


def pmf(k, epsilon):
    """Two-sided geometric probability of integer offset(s) ``k``."""
    q = math.exp(-epsilon)
    return (-math.expm1(-epsilon) / (1 + q)) * np.exp(-epsilon * np.abs(np.asarray(k, dtype=float)))


def clamped_mass(p):
    """Probability that an unclamped draw exceeds the clamp bound."""
    if math.isinf(p.epsilon):
        return 0.0
    return 2.0 * math.exp(-p.epsilon * (p.clamp_bound + 1)) / (1 + p.q)


def _uniform_open(rng, size):
    u = rng.integers(0, 1 << 64, size=size, dtype=np.uint64)
    return ((u >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def sample_geometric(p, rng, size=None):
    """Draw two-sided geometric noise by inverting its CDF.

    With ``q = exp(-eps)`` the CDF is ``q^-k / (1+q)`` for ``k < 0`` and
    ``1 - q^(k+1) / (1+q)`` for ``k >= 0``; both branches invert in closed
    form. Results are clamped to ``[-clamp_bound, clamp_bound]``.
    """
    n = 1 if size is None else size
    if math.isinf(p.epsilon) or p.clamp_bound == 0:
        out = np.zeros(n, dtype=np.int64)
    else:
        eps = p.epsilon
        log1q = math.log1p(p.q)
        u = _uniform_open(rng, n)
        left = u <= p.q / (1 + p.q)
        with np.errstate(divide="ignore"):
            kneg = np.ceil((np.log(u) + log1q) / eps)
            kpos = np.ceil(-(np.log1p(-u) + log1q) / eps - 1.0)
        k = np.where(left, np.minimum(kneg, -1.0), np.maximum(kpos, 0.0))
        k = np.clip(k, -p.clamp_bound, p.clamp_bound)
        out = k.astype(np.int64)
    return int(out[0]) if size is None else out


def gen_noise_shares(p, count, rng):
    """Ring shares of ``count`` clamped noise values (in grid units).

    Returns ``(Share, Share)`` whose ``value`` arrays hold one noise share
    per provisioned query.
    """
    g = sample_geometric(p, rng, count)
    r = random_ring(rng, count)
    return Share(r, 0), Share(g.view(np.uint64) - r, 1)


@dataclass
class AuditReport:
    max_ratio: float
    bound: float
    distance: int
    sets_compared: int
    min_count: int
    budget_spent: dict
    clamped_fraction: float

    def lines(self):
        yield f"max_ratio={self.max_ratio:.6f}"
        yield f"bound={self.bound:.6f}"
        yield f"distance={self.distance}"
        yield f"sets_compared={self.sets_compared}"
        yield f"min_count={self.min_count}"
        yield f"clamped_fraction={self.clamped_fraction:.6g}"
        for c, spent in sorted(self.budget_spent.items()):
            yield f"budget_spent_table_{c}={spent:.6g}"


def _ratio_sets(counts_a, counts_b, min_count, order=None):
    """Likelihood ratios of single outputs and of upper/lower tail sets.

    Tail sets follow ``order`` (output -> rank); without it the outputs are
    opaque keys and only single-output sets are used.
    """
    keys = set(counts_a) | set(counts_b)
    keys = sorted(keys, key=order.__getitem__) if order is not None else sorted(keys)
    a = np.array([counts_a.get(k, 0) for k in keys], dtype=float)
    b = np.array([counts_b.get(k, 0) for k in keys], dtype=float)
    na, nb = a.sum(), b.sum()
    cands = [(a, b)]
    if order is not None:
        cands += [(np.cumsum(a), np.cumsum(b)), (np.cumsum(a[::-1]), np.cumsum(b[::-1]))]
    ratios = []
    for ca, cb in cands:
        ok = (ca >= min_count) & (cb >= min_count)
        if ok.any():
            pa, pb = ca[ok] / na, cb[ok] / nb
            ratios.append(np.maximum(pa / pb, pb / pa))
    if not ratios:
        return np.array([])
    return np.concatenate(ratios)


def audit_trace(trace, p, labels=None, min_count=1000, order=None):
    """Estimate the worst likelihood ratio between two inputs' observed keys.

    Args:
        trace: ``AccessTrace`` holding the lookups of two known inputs, or a
            mapping ``{input_value: [(c, key), ...]}``.
        p: mechanism parameters.
        labels: when ``trace`` is an ``AccessTrace``, the known plaintext input
            of each event, in order (test harness only).
        min_count: smallest count an output set needs on both sides to enter
            the estimate.
        order: optional map from observed event to its position on the grid,
            enabling tail sets (known only to a test harness).

    Returns:
        ``AuditReport`` with the max observed ratio, the bound ``e^(eps*d)``,
        per-table budget spend and the clamped mass fraction.
    """
    if labels is not None:
        groups = {}
        for (c, key), x in zip(trace.events, labels):
            groups.setdefault(x, []).append((c, key))
        events = [e for e in trace.events]
    else:
        groups = dict(trace)
        events = [e for evs in groups.values() for e in evs]
    if len(groups) != 2:
        raise InsufficientSamples("audit needs observations of exactly two inputs")
    (xa, ea), (xb, eb) = sorted(groups.items())
    ca, cb = {}, {}
    for evs, cnt in ((ea, ca), (eb, cb)):
        for e in evs:
            cnt[e] = cnt.get(e, 0) + 1
    ratios = _ratio_sets(ca, cb, min_count, order)
    if ratios.size == 0:
        raise InsufficientSamples(f"no output set has {min_count} observations for both inputs")
    dist = abs(int(xa) - int(xb))
    spent = {}
    for c, _ in events:
        spent[c] = spent.get(c, 0.0) + p.epsilon
    return AuditReport(float(ratios.max()), math.exp(p.epsilon * dist), dist, int(ratios.size),
                       min_count, spent, clamped_mass(p))


def budget_report(n_queries, epsilon, r_multi):
    """Per-table spend when ``n_queries`` run at ``epsilon`` each."""
    out = {}
    for i in range(n_queries):
        c = i // r_multi
        out[c] = out.get(c, 0.0) + epsilon
    return out


def mechanism_trace(inputs, p, trials, rng, c=0):
    """Simulated access pattern of noisy lookups on a single table.

    Each trial adds fresh noise to each input and records an opaque key for
    the noisy grid point (a hash standing in for the table key), so the
    observations have the same distribution as the keys a party sees.

    Returns ``(groups, order)``: ``{input: [(c, key), ...]}`` for
    ``audit_trace`` and the map from event to grid position.
    """
    groups, order = {}, {}
    for x in inputs:
        pts = int(x) + sample_geometric(p, rng, trials)
        vals, counts = np.unique(pts, return_counts=True)
        evs = []
        for v, n in zip(vals.tolist(), counts.tolist()):
            ev = (c, hashlib.sha256(int(v).to_bytes(8, "little", signed=True)).digest())
            order[ev] = v
            evs.extend([ev] * n)
        groups[int(x)] = evs
    return groups, order
