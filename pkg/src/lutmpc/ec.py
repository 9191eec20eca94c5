"""secp256k1 group arithmetic.

Points are affine ``(x, y)`` tuples of ints, with ``None`` standing for the
point at infinity. Internally Jacobian coordinates avoid inversions. gmpy2 is
used for big-integer speed when it is installed.
"""

from dataclasses import dataclass

from .errors import InvalidPoint

try:
    import gmpy2

    _mpz = gmpy2.mpz
except ImportError:  # pragma: no cover
    gmpy2 = None
    _mpz = int

P = 2**256 - 2**32 - 977
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
G = (GX, GY)

_P = _mpz(P)
_INF = (_mpz(1), _mpz(1), _mpz(0))


@dataclass
class OpCounter:
    """Counts curve operations, used to check generation cost."""

    scalar_mults: int = 0
    point_adds: int = 0


COUNTER = OpCounter()


def reset_counter():
    COUNTER.scalar_mults = 0
    COUNTER.point_adds = 0


def is_on_curve(pt):
    if pt is None:
        return False
    x, y = pt
    if not (0 <= x < P and 0 <= y < P):
        return False
    return (y * y - x * x * x - 7) % P == 0


def _to_jac(pt):
    if pt is None:
        return _INF
    return (_mpz(pt[0]), _mpz(pt[1]), _mpz(1))


def _dbl(p):
    x, y, z = p
    if z == 0 or y == 0:
        return _INF
    yy = y * y % _P
    s = 4 * x * yy % _P
    m = 3 * x * x % _P
    x3 = (m * m - 2 * s) % _P
    y3 = (m * (s - x3) - 8 * yy * yy) % _P
    z3 = 2 * y * z % _P
    return (x3, y3, z3)


def _add(p, q):
    x1, y1, z1 = p
    x2, y2, z2 = q
    if z1 == 0:
        return q
    if z2 == 0:
        return p
    z1z1 = z1 * z1 % _P
    z2z2 = z2 * z2 % _P
    u1 = x1 * z2z2 % _P
    u2 = x2 * z1z1 % _P
    s1 = y1 * z2 * z2z2 % _P
    s2 = y2 * z1 * z1z1 % _P
    if u1 == u2:
        if s1 != s2:
            return _INF
        return _dbl(p)
    h = (u2 - u1) % _P
    r = (s2 - s1) % _P
    hh = h * h % _P
    hhh = h * hh % _P
    v = u1 * hh % _P
    x3 = (r * r - hhh - 2 * v) % _P
    y3 = (r * (v - x3) - s1 * hhh) % _P
    z3 = h * z1 * z2 % _P
    return (x3, y3, z3)


def _add_affine(p, q):
    """Jacobian ``p`` plus affine ``q`` given as (x, y) mpz pair."""
    x1, y1, z1 = p
    if z1 == 0:
        return (q[0], q[1], _mpz(1))
    x2, y2 = q
    z1z1 = z1 * z1 % _P
    u2 = x2 * z1z1 % _P
    s2 = y2 * z1 * z1z1 % _P
    if x1 == u2:
        if y1 != s2:
            return _INF
        return _dbl(p)
    h = (u2 - x1) % _P
    r = (s2 - y1) % _P
    hh = h * h % _P
    hhh = h * hh % _P
    v = x1 * hh % _P
    x3 = (r * r - hhh - 2 * v) % _P
    y3 = (r * (v - x3) - y1 * hhh) % _P
    z3 = h * z1 % _P
    return (x3, y3, z3)


def _to_affine(p):
    x, y, z = p
    if z == 0:
        return None
    zi = pow(z, -1, _P) if gmpy2 is None else gmpy2.invert(z, _P)
    zi2 = zi * zi % _P
    return (int(x * zi2 % _P), int(y * zi2 * zi % _P))


def batch_to_affine(points):
    """Normalise many Jacobian points with a single field inversion."""
    n = len(points)
    prefix = [None] * n
    acc = _mpz(1)
    for i, (_, _, z) in enumerate(points):
        prefix[i] = acc
        if z != 0:
            acc = acc * z % _P
    inv = pow(int(acc), -1, P) if gmpy2 is None else gmpy2.invert(acc, _P)
    out = [None] * n
    for i in range(n - 1, -1, -1):
        x, y, z = points[i]
        if z == 0:
            continue
        zi = inv * prefix[i] % _P
        inv = inv * z % _P
        zi2 = zi * zi % _P
        out[i] = (int(x * zi2 % _P), int(y * zi2 * zi % _P))
    return out


def point_add(p, q):
    COUNTER.point_adds += 1
    return _to_affine(_add(_to_jac(p), _to_jac(q)))


def point_neg(p):
    if p is None:
        return None
    return (p[0], (-p[1]) % P)


def _window_table(pt, w=4):
    base = _to_jac(pt)
    tbl = [_INF, base]
    for _ in range(2, 1 << w):
        tbl.append(_add(tbl[-1], base))
    return tbl


def scalar_mult(k, pt):
    """Return ``k * pt`` for an arbitrary point (fixed 4-bit window)."""
    COUNTER.scalar_mults += 1
    k %= N
    if k == 0 or pt is None:
        return None
    tbl = _window_table(pt)
    acc = _INF
    nib = (k.bit_length() + 3) // 4
    for i in range(nib - 1, -1, -1):
        for _ in range(4):
            acc = _dbl(acc)
        d = (k >> (4 * i)) & 15
        if d:
            acc = _add(acc, tbl[d])
    return _to_affine(acc)


_BASE_TABLE = None


def _base_table():
    """Affine multiples d * 16^i * G for the fixed-base comb."""
    global _BASE_TABLE
    if _BASE_TABLE is None:
        rows = []
        cur = _to_jac(G)
        for _ in range(64):
            row = [cur]
            for _ in range(14):
                row.append(_add(row[-1], cur))
            rows.append(row)
            for _ in range(4):
                cur = _dbl(cur)
        flat = batch_to_affine([p for row in rows for p in row])
        _BASE_TABLE = [[(_mpz(x), _mpz(y)) for x, y in flat[15 * i:15 * i + 15]]
                       for i in range(64)]
    return _BASE_TABLE


def base_mult(k):
    """Return ``k * G`` using a precomputed table."""
    COUNTER.scalar_mults += 1
    k %= N
    if k == 0:
        return None
    tbl = _base_table()
    acc = _INF
    i = 0
    while k:
        d = k & 15
        if d:
            acc = _add_affine(acc, tbl[i][d - 1])
        k >>= 4
        i += 1
    return _to_affine(acc)


def compress(pt):
    """33-byte SEC1 compressed encoding."""
    if pt is None:
        raise InvalidPoint("cannot encode the point at infinity")
    x, y = pt
    return bytes([2 + (y & 1)]) + int(x).to_bytes(32, "big")


def decompress(data):
    """Parse a compressed point, rejecting malformed, off-curve and identity encodings."""
    if len(data) != 33 or data[0] not in (2, 3):
        raise InvalidPoint("not a 33-byte compressed point")
    x = int.from_bytes(data[1:], "big")
    if x >= P:
        raise InvalidPoint("x coordinate out of field")
    rhs = (x * x * x + 7) % P
    y = pow(rhs, (P + 1) // 4, P)
    if y * y % P != rhs:
        raise InvalidPoint("x is not on secp256k1")
    if (y & 1) != (data[0] & 1):
        y = P - y
    return (x, y)


def chain(start, step, count):
    """Return ``[start, start+step, ..., start+(count-1)*step]`` in affine form.

    Uses ``count - 1`` point additions and one batched inversion.
    """
    step_a = (_mpz(step[0]), _mpz(step[1]))
    cur = _to_jac(start)
    out = [cur]
    for _ in range(count - 1):
        cur = _add_affine(cur, step_a)
        out.append(cur)
    COUNTER.point_adds += count - 1
    return batch_to_affine(out)
