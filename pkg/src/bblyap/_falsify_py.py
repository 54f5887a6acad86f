"""Pure-Python falsifier kernel for quadratic candidates.

Mirrors ``_falsify.pyx`` operation for operation, so both back ends give
bit-identical verdicts, witnesses and split counts.

The search runs over barycentric boxes ``l <= lambda <= u`` (lambda_1..n,
lambda_0 = 1 - sum). Every quantity is an affine function of lambda with
interval coefficients prepared by the caller:

    x      = P0 + sum_j lambda_j D_j
    grad V = G0 + sum_j lambda_j GD_j
    grad V . y_m   = C0_m + sum_j lambda_j CD_jm
    x - xbar_m     = E0_m + sum_j lambda_j D_j
"""
from math import inf, nextafter, sqrt

UNSAT = 0
FALSIFIED = 1
UNKNOWN = 2


def _dn(v):
    return nextafter(v, -inf)


def _up(v):
    return nextafter(v, inf)


def _mul_lo(alo, ahi, blo, bhi):
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    m = p1
    if p2 < m:
        m = p2
    if p3 < m:
        m = p3
    if p4 < m:
        m = p4
    return _dn(m)


def _mul_hi(alo, ahi, blo, bhi):
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    m = p1
    if p2 > m:
        m = p2
    if p3 > m:
        m = p3
    if p4 > m:
        m = p4
    return _up(m)


def _affine(c0lo, c0hi, clo, chi, row, l, u, n):
    """Enclosure of c0 + sum_j lambda_j c[j][row]."""
    lo = c0lo
    hi = c0hi
    for j in range(n):
        lo = _dn(lo + _mul_lo(l[j], u[j], clo[j][row], chi[j][row]))
        hi = _up(hi + _mul_hi(l[j], u[j], clo[j][row], chi[j][row]))
    return lo, hi


def _mig2(lo, hi):
    if lo > 0.0:
        return _dn(lo * lo)
    if hi < 0.0:
        return _dn(hi * hi)
    return 0.0


def _mag2(lo, hi):
    a = -lo
    if hi > a:
        a = hi
    return _up(a * a)


def _roi_misses(xlo, xhi, n, roi_kind, inner, outer):
    if roi_kind == 0:
        near = 0.0
        far = 0.0
        for i in range(n):
            near = _dn(near + _mig2(xlo[i], xhi[i]))
            far = _up(far + _mag2(xlo[i], xhi[i]))
        return far < _dn(inner[0] * inner[0]) or near > _up(outer[0] * outer[0])
    for i in range(n):
        if xlo[i] > outer[i] or xhi[i] < -outer[i]:
            return True
    for i in range(n):
        a = -xlo[i]
        if xhi[i] > a:
            a = xhi[i]
        if a >= inner[i]:
            return False
    return True


def _roi_contains_point(x, n, roi_kind, inner, outer):
    if roi_kind == 0:
        slo = 0.0
        shi = 0.0
        for i in range(n):
            slo = _dn(slo + _dn(x[i] * x[i]))
            shi = _up(shi + _up(x[i] * x[i]))
        return slo >= _up(inner[0] * inner[0]) and shi <= _dn(outer[0] * outer[0])
    hit = False
    for i in range(n):
        a = x[i] if x[i] >= 0.0 else -x[i]
        if a > outer[i]:
            return False
        if a >= inner[i]:
            hit = True
    return hit


def _witness_ok(x, n, m, M, Xw, Yw, lip):
    """Verified: every LieUB_m(x) >= 0."""
    glo = [0.0] * n
    ghi = [0.0] * n
    gn2 = 0.0
    for i in range(n):
        lo = 0.0
        hi = 0.0
        for k in range(n):
            p = M[i][k] * x[k]
            lo = _dn(lo + _dn(p))
            hi = _up(hi + _up(p))
        glo[i] = lo
        ghi[i] = hi
        gn2 = _dn(gn2 + _mig2(lo, hi))
    gn = sqrt(gn2) if gn2 > 0.0 else 0.0
    gn = _dn(gn) if gn > 0.0 else 0.0
    a = _dn(gn * lip)
    for s in range(m):
        en2 = 0.0
        clo = 0.0
        for i in range(n):
            d = x[i] - Xw[s][i]
            en2 = _dn(en2 + _mig2(_dn(d), _up(d)))
            y = Yw[s][i]
            if y >= 0.0:
                clo = _dn(clo + _dn(y * glo[i]))
            else:
                clo = _dn(clo + _dn(y * ghi[i]))
        en = sqrt(en2) if en2 > 0.0 else 0.0
        en = _dn(en) if en > 0.0 else 0.0
        t = _dn(_dn(a * en) + clo)
        if t < 0.0:
            return False
    return True


def falsify_quadratic(P0, Dm, Dlo, Dhi, G0lo, G0hi, GDlo, GDhi, C0lo, C0hi, CDlo, CDhi,
                      E0lo, E0hi, M, Xw, Yw, lip, roi_kind, inner, outer, budget, out_x):
    """Returns ``(status, splits)``; on FALSIFIED the witness is written to out_x."""
    n = len(P0)
    m = len(Xw)
    stack = [([0.0] * n, [1.0] * n)]
    splits = 0
    xlo = [0.0] * n
    xhi = [0.0] * n
    xm = [0.0] * n
    lam = [0.0] * n
    while stack:
        l, u = stack.pop()
        # the simplex constraint sum(lambda) <= 1 tightens each upper bound
        sl = 0.0
        for j in range(n):
            sl = _dn(sl + l[j])
        if sl > 1.0:
            continue
        empty = False
        for j in range(n):
            rest = 0.0
            for i in range(n):
                if i != j:
                    rest = _dn(rest + l[i])
            cap = _up(1.0 - rest)
            if cap < u[j]:
                u[j] = cap
            if u[j] < l[j]:
                empty = True
        if empty:
            continue
        for i in range(n):
            xlo[i], xhi[i] = _affine(P0[i], P0[i], Dlo, Dhi, i, l, u, n)
        if _roi_misses(xlo, xhi, n, roi_kind, inner, outer):
            continue
        gn2 = 0.0
        for i in range(n):
            glo, ghi = _affine(G0lo[i], G0hi[i], GDlo, GDhi, i, l, u, n)
            gn2 = _up(gn2 + _mag2(glo, ghi))
        gn = _up(sqrt(gn2))
        a = _up(gn * lip)
        discard = False
        for s in range(m):
            en2 = 0.0
            for i in range(n):
                elo, ehi = _affine(E0lo[s][i], E0hi[s][i], Dlo, Dhi, i, l, u, n)
                en2 = _up(en2 + _mag2(elo, ehi))
            en = _up(sqrt(en2))
            clo, chi = _affine(C0lo[s], C0hi[s], CDlo, CDhi, s, l, u, n)
            ub = _up(_up(a * en) + chi)
            if ub < 0.0:
                discard = True
                break
        if discard:
            continue
        tot = 0.0
        for j in range(n):
            lam[j] = 0.5 * (l[j] + u[j])
            tot = tot + lam[j]
        if tot <= 1.0:
            for i in range(n):
                v = P0[i]
                for j in range(n):
                    v = v + lam[j] * Dm[j][i]
                xm[i] = v
            if _roi_contains_point(xm, n, roi_kind, inner, outer) and _witness_ok(xm, n, m, M, Xw, Yw, lip):
                for i in range(n):
                    out_x[i] = xm[i]
                return FALSIFIED, splits
        if splits >= budget:
            return UNKNOWN, splits
        k = 0
        w = u[0] - l[0]
        for j in range(1, n):
            if u[j] - l[j] > w:
                w = u[j] - l[j]
                k = j
        mid = 0.5 * (l[k] + u[k])
        l2 = list(l)
        l2[k] = mid
        stack.append((l2, list(u)))
        u2 = list(u)
        u2[k] = mid
        stack.append((list(l), u2))
        splits += 1
    return UNSAT, splits
