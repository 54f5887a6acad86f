"""Outward-rounded interval arithmetic on ``(lo, hi)`` float pairs.

Every operation widens its result by one ulp on each side with
``math.nextafter``; IEEE operations are correctly rounded, so the widened
pair encloses the exact real result. Transcendental functions are widened
by a few extra ulps since libm does not promise correct rounding.
"""
from __future__ import annotations

import math

INF = math.inf


def dn(v: float) -> float:
    return math.nextafter(v, -INF)


def up(v: float) -> float:
    return math.nextafter(v, INF)


def add(alo, ahi, blo, bhi):
    return dn(alo + blo), up(ahi + bhi)


def sub(alo, ahi, blo, bhi):
    return dn(alo - bhi), up(ahi - blo)


def mul(alo, ahi, blo, bhi):
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    return dn(min(p1, p2, p3, p4)), up(max(p1, p2, p3, p4))


def scale(c, lo, hi):
    """Point ``c`` times interval."""
    if c >= 0.0:
        return dn(c * lo), up(c * hi)
    return dn(c * hi), up(c * lo)


def sqr(lo, hi):
    if lo >= 0.0:
        return dn(lo * lo), up(hi * hi)
    if hi <= 0.0:
        return dn(hi * hi), up(lo * lo)
    m = max(-lo, hi)
    return 0.0, up(m * m)


def mag(lo, hi) -> float:
    """Largest absolute value in the interval."""
    return max(-lo, hi)


def mig(lo, hi) -> float:
    """Smallest absolute value in the interval."""
    if lo > 0.0:
        return lo
    if hi < 0.0:
        return -hi
    return 0.0


def sqrt(lo, hi):
    lo = max(lo, 0.0)
    return max(dn(math.sqrt(lo)), 0.0), up(math.sqrt(hi))


def _widen(v, k=4):
    lo = hi = v
    for _ in range(k):
        lo, hi = dn(lo), up(hi)
    return lo, hi


def tanh(lo, hi):
    a = _widen(math.tanh(lo))[0]
    b = _widen(math.tanh(hi))[1]
    return max(a, -1.0), min(b, 1.0)


def sech2(lo, hi):
    """``1/cosh(x)**2``, even and decreasing in ``|x|``."""
    small = mig(lo, hi)
    big = mag(lo, hi)
    top = _widen(1.0 / math.cosh(small) ** 2)[1]
    bottom = _widen(1.0 / math.cosh(big) ** 2)[0] if big < 350.0 else 0.0
    return max(bottom, 0.0), min(top, 1.0)


def norm_bounds(ivals):
    """Enclosure of the Euclidean norm of a vector of intervals."""
    s_lo = 0.0
    s_hi = 0.0
    for lo, hi in ivals:
        a = mig(lo, hi)
        b = mag(lo, hi)
        s_lo = dn(s_lo + dn(a * a))
        s_hi = up(s_hi + up(b * b))
    return sqrt(s_lo, s_hi)
