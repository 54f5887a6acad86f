# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled falsifier kernel for quadratic candidates.

Same algorithm, operation order and rounding as ``_falsify_py``; see there
for the meaning of the coefficient arrays. Runs without the GIL.
"""
from libc.math cimport nextafter, sqrt, INFINITY
from libc.stdlib cimport malloc, free

cdef enum:
    MAXN = 8


cdef inline double _dn(double v) nogil:
    return nextafter(v, -INFINITY)


cdef inline double _up(double v) nogil:
    return nextafter(v, INFINITY)


cdef inline double _mul_lo(double alo, double ahi, double blo, double bhi) nogil:
    cdef double p1 = alo * blo
    cdef double p2 = alo * bhi
    cdef double p3 = ahi * blo
    cdef double p4 = ahi * bhi
    cdef double m = p1
    if p2 < m:
        m = p2
    if p3 < m:
        m = p3
    if p4 < m:
        m = p4
    return _dn(m)


cdef inline double _mul_hi(double alo, double ahi, double blo, double bhi) nogil:
    cdef double p1 = alo * blo
    cdef double p2 = alo * bhi
    cdef double p3 = ahi * blo
    cdef double p4 = ahi * bhi
    cdef double m = p1
    if p2 > m:
        m = p2
    if p3 > m:
        m = p3
    if p4 > m:
        m = p4
    return _up(m)


cdef inline void _affine(double c0lo, double c0hi, const double[:, ::1] clo, const double[:, ::1] chi,
                         int row, double* l, double* u, int n, double* out_lo, double* out_hi) nogil:
    cdef double lo = c0lo
    cdef double hi = c0hi
    cdef int j
    for j in range(n):
        lo = _dn(lo + _mul_lo(l[j], u[j], clo[j, row], chi[j, row]))
        hi = _up(hi + _mul_hi(l[j], u[j], clo[j, row], chi[j, row]))
    out_lo[0] = lo
    out_hi[0] = hi


cdef inline double _mig2(double lo, double hi) nogil:
    if lo > 0.0:
        return _dn(lo * lo)
    if hi < 0.0:
        return _dn(hi * hi)
    return 0.0


cdef inline double _mag2(double lo, double hi) nogil:
    cdef double a = -lo
    if hi > a:
        a = hi
    return _up(a * a)


cdef bint _roi_misses(double* xlo, double* xhi, int n, int roi_kind,
                      const double[::1] inner, const double[::1] outer) nogil:
    cdef double near = 0.0
    cdef double far = 0.0
    cdef double a
    cdef int i
    if roi_kind == 0:
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


cdef bint _roi_contains_point(double* x, int n, int roi_kind,
                              const double[::1] inner, const double[::1] outer) nogil:
    cdef double slo = 0.0
    cdef double shi = 0.0
    cdef double a
    cdef bint hit = False
    cdef int i
    if roi_kind == 0:
        for i in range(n):
            slo = _dn(slo + _dn(x[i] * x[i]))
            shi = _up(shi + _up(x[i] * x[i]))
        return slo >= _up(inner[0] * inner[0]) and shi <= _dn(outer[0] * outer[0])
    for i in range(n):
        a = x[i] if x[i] >= 0.0 else -x[i]
        if a > outer[i]:
            return False
        if a >= inner[i]:
            hit = True
    return hit


cdef bint _witness_ok(double* x, int n, int m, const double[:, ::1] M, const double[:, ::1] Xw,
                      const double[:, ::1] Yw, double lip) nogil:
    cdef double glo[MAXN]
    cdef double ghi[MAXN]
    cdef double gn2 = 0.0
    cdef double lo, hi, p, gn, a, en2, clo, d, y, en, t
    cdef int i, k, s
    for i in range(n):
        lo = 0.0
        hi = 0.0
        for k in range(n):
            p = M[i, k] * x[k]
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
            d = x[i] - Xw[s, i]
            en2 = _dn(en2 + _mig2(_dn(d), _up(d)))
            y = Yw[s, i]
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


cdef int _search(const double[::1] P0, const double[:, ::1] Dm, const double[:, ::1] Dlo,
                 const double[:, ::1] Dhi, const double[::1] G0lo, const double[::1] G0hi,
                 const double[:, ::1] GDlo, const double[:, ::1] GDhi,
                 const double[::1] C0lo, const double[::1] C0hi,
                 const double[:, ::1] CDlo, const double[:, ::1] CDhi,
                 const double[:, ::1] E0lo, const double[:, ::1] E0hi,
                 const double[:, ::1] M, const double[:, ::1] Xw, const double[:, ::1] Yw,
                 double lip, int roi_kind, const double[::1] inner, const double[::1] outer,
                 long budget, double* stack, double* out_x, long* splits_out) nogil:
    cdef int n = P0.shape[0]
    cdef int m = Xw.shape[0]
    cdef long top = 1
    cdef long splits = 0
    cdef double xlo[MAXN]
    cdef double xhi[MAXN]
    cdef double xm[MAXN]
    cdef double lam[MAXN]
    cdef double* l
    cdef double* u
    cdef double* nb
    cdef double sl, rest, cap, glo, ghi, gn2, gn, a, en2, en, elo, ehi, clo, chi, ub, tot, v, w, mid
    cdef bint empty, discard
    cdef int i, j, s, k
    for j in range(n):
        stack[j] = 0.0
        stack[n + j] = 1.0
    while top > 0:
        top -= 1
        l = stack + top * 2 * n
        u = l + n
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
            _affine(P0[i], P0[i], Dlo, Dhi, i, l, u, n, &xlo[i], &xhi[i])
        if _roi_misses(xlo, xhi, n, roi_kind, inner, outer):
            continue
        gn2 = 0.0
        for i in range(n):
            _affine(G0lo[i], G0hi[i], GDlo, GDhi, i, l, u, n, &glo, &ghi)
            gn2 = _up(gn2 + _mag2(glo, ghi))
        gn = _up(sqrt(gn2))
        a = _up(gn * lip)
        discard = False
        for s in range(m):
            en2 = 0.0
            for i in range(n):
                _affine(E0lo[s, i], E0hi[s, i], Dlo, Dhi, i, l, u, n, &elo, &ehi)
                en2 = _up(en2 + _mag2(elo, ehi))
            en = _up(sqrt(en2))
            _affine(C0lo[s], C0hi[s], CDlo, CDhi, s, l, u, n, &clo, &chi)
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
                    v = v + lam[j] * Dm[j, i]
                xm[i] = v
            if _roi_contains_point(xm, n, roi_kind, inner, outer) and _witness_ok(xm, n, m, M, Xw, Yw, lip):
                for i in range(n):
                    out_x[i] = xm[i]
                splits_out[0] = splits
                return 1
        if splits >= budget:
            splits_out[0] = splits
            return 2
        k = 0
        w = u[0] - l[0]
        for j in range(1, n):
            if u[j] - l[j] > w:
                w = u[j] - l[j]
                k = j
        mid = 0.5 * (l[k] + u[k])
        # upper half stays in place, lower half goes on top
        nb = l + 2 * n
        for j in range(2 * n):
            nb[j] = l[j]
        l[k] = mid
        nb[n + k] = mid
        top += 2
        splits += 1
    splits_out[0] = splits
    return 0


def falsify_quadratic(const double[::1] P0, const double[:, ::1] Dm, const double[:, ::1] Dlo,
                      const double[:, ::1] Dhi, const double[::1] G0lo, const double[::1] G0hi,
                      const double[:, ::1] GDlo, const double[:, ::1] GDhi,
                      const double[::1] C0lo, const double[::1] C0hi,
                      const double[:, ::1] CDlo, const double[:, ::1] CDhi,
                      const double[:, ::1] E0lo, const double[:, ::1] E0hi,
                      const double[:, ::1] M, const double[:, ::1] Xw, const double[:, ::1] Yw,
                      double lip, int roi_kind, const double[::1] inner, const double[::1] outer,
                      long budget, double[::1] out_x):
    """Returns ``(status, splits)``; on status 1 the witness is written to out_x."""
    cdef int n = P0.shape[0]
    cdef long splits = 0
    cdef int status
    cdef double* stack
    cdef double xo[MAXN]
    cdef int i
    if n > MAXN:
        raise ValueError(f"compiled kernel supports n <= {MAXN}")
    if budget < 0:
        budget = 0
    stack = <double*> malloc((budget + 2) * 2 * n * sizeof(double))
    if stack == NULL:
        raise MemoryError()
    try:
        with nogil:
            status = _search(P0, Dm, Dlo, Dhi, G0lo, G0hi, GDlo, GDhi, C0lo, C0hi, CDlo, CDhi,
                             E0lo, E0hi, M, Xw, Yw, lip, roi_kind, inner, outer, budget,
                             stack, xo, &splits)
    finally:
        free(stack)
    if status == 1:
        for i in range(n):
            out_x[i] = xo[i]
    return status, splits
