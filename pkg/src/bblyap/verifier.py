"""Regional verification of the Lie-derivative condition from samples.

For a simplex R with vertex samples (xbar_j, ybar_j) and a Lipschitz bound
L_R on R, the candidate decreases on R when, at every x in R and the ROI,
some vertex gives ``LieUB_j(x) = |grad V(x)| L_R |x - xbar_j| + grad V(x).ybar_j < 0``.
The falsifier searches barycentric coordinates for a point where every
LieUB_j is >= 0, proving absence with interval arithmetic.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import intervals as iv
from . import kernels
from .cover import Cover, SimplexRegion, simplices_to_verify, DUPLICATE_TOL
from .sysmodel import Sample, regional_lipschitz
from .template import Candidate, Quadratic

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 2000


def lie_upper_bound(c: Candidate, x, sample, lip: float) -> float:
    x = np.asarray(x, dtype=float)
    xb = np.asarray(sample[0], dtype=float)
    yb = np.asarray(sample[1], dtype=float)
    g = c.gradient(x)
    return float(np.linalg.norm(g) * lip * np.linalg.norm(x - xb) + g @ yb)


# ---------------------------------------------------------------------------
# Queries and verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionalQuery:
    candidate: Candidate
    simplex: SimplexRegion
    vertex_samples: tuple
    lip: float
    roi: object
    budget: int = DEFAULT_BUDGET
    extra_samples: tuple = ()  # optional witnesses beyond the vertices

    @property
    def witnesses(self):
        return tuple(self.vertex_samples) + tuple(self.extra_samples)


@dataclass(frozen=True)
class ProvenUnsat:
    splits: int = 0


@dataclass(frozen=True)
class Falsified:
    states: tuple
    splits: int = 0


@dataclass(frozen=True)
class Unknown:
    centroid: tuple
    splits: int = 0


def _dn(a):
    return np.nextafter(a, -np.inf)


def _up(a):
    return np.nextafter(a, np.inf)


def _point_times(lo, hi, c):
    """Interval [lo, hi] times point c, elementwise and outward rounded."""
    p1 = lo * c
    p2 = hi * c
    return _dn(np.minimum(p1, p2)), _up(np.maximum(p1, p2))


def _dot_rows(lo, hi, W):
    """Enclosure of sum_i [lo_ji, hi_ji] * W_mi over i for each (j, m)."""
    J, n = lo.shape
    out_lo = np.zeros((J, W.shape[0]))
    out_hi = np.zeros((J, W.shape[0]))
    for i in range(n):
        plo, phi = _point_times(lo[:, i][:, None], hi[:, i][:, None], W[:, i][None, :])
        out_lo = _dn(out_lo + plo)
        out_hi = _up(out_hi + phi)
    return out_lo, out_hi


def quadratic_coefficients(q: RegionalQuery):
    """Interval coefficients of the affine-in-lambda quantities used by the kernel."""
    P = np.ascontiguousarray(q.simplex.coords, dtype=float)
    wit = q.witnesses
    Xw = np.ascontiguousarray([s[0] for s in wit], dtype=float)
    Yw = np.ascontiguousarray([s[1] for s in wit], dtype=float)
    M = np.ascontiguousarray(q.candidate.kind.gradient_matrix(q.candidate.theta_array))
    P0 = P[0].copy()
    Dm = np.ascontiguousarray(P[1:] - P0)
    Dlo, Dhi = _dn(Dm), _up(Dm)
    one = P0[None, :]
    G0lo, G0hi = _dot_rows(one, one, M)           # (1, n)
    GDlo, GDhi = _dot_rows(Dlo, Dhi, M)           # (n, n): row j is M D_j
    C0lo, C0hi = _dot_rows(G0lo, G0hi, Yw)        # (1, m)
    CDlo, CDhi = _dot_rows(GDlo, GDhi, Yw)        # (n, m)
    E = P0[None, :] - Xw
    E0lo, E0hi = _dn(E), _up(E)
    c = np.ascontiguousarray
    return dict(P0=P0, Dm=Dm, Dlo=c(Dlo), Dhi=c(Dhi), G0lo=c(G0lo[0]), G0hi=c(G0hi[0]),
                GDlo=c(GDlo), GDhi=c(GDhi), C0lo=c(C0lo[0]), C0hi=c(C0hi[0]),
                CDlo=c(CDlo), CDhi=c(CDhi), E0lo=c(E0lo), E0hi=c(E0hi), M=M, Xw=Xw, Yw=Yw)


def _run_kernel(fn, q: RegionalQuery):
    kind, inner, outer = q.roi.kernel_params()
    co = quadratic_coefficients(q)
    out = np.zeros(q.simplex.dim)
    status, splits = fn(co["P0"], co["Dm"], co["Dlo"], co["Dhi"], co["G0lo"], co["G0hi"],
                        co["GDlo"], co["GDhi"], co["C0lo"], co["C0hi"], co["CDlo"], co["CDhi"],
                        co["E0lo"], co["E0hi"], co["M"], co["Xw"], co["Yw"], float(q.lip),
                        int(kind), np.ascontiguousarray(inner, dtype=float),
                        np.ascontiguousarray(outer, dtype=float), int(q.budget), out)
    return status, splits, out


# ---------------------------------------------------------------------------
# Generic interval branch and bound (any template with an interval gradient)
# ---------------------------------------------------------------------------

def _tanh_grad_enclosure(M, xbox):
    """Enclosure of sech^2(x) * ((M + M^T) tanh(x)) over a box."""
    n = len(xbox)
    t = [iv.tanh(*b) for b in xbox]
    s = [iv.sech2(*b) for b in xbox]
    g = []
    for i in range(n):
        acc = (0.0, 0.0)
        for k in range(n):
            acc = iv.add(*acc, *iv.scale(M[i, k], *t[k]))
            acc = iv.add(*acc, *iv.scale(M[k, i], *t[k]))
        g.append(iv.mul(*s[i], *acc))
    return g


def _quad_grad_enclosure(M, xbox):
    n = len(xbox)
    g = []
    for i in range(n):
        acc = (0.0, 0.0)
        for k in range(n):
            acc = iv.add(*acc, *iv.scale(M[i, k], *xbox[k]))
        g.append(acc)
    return g


def _lieub_enclosures(grad, xbox, Xw, Yw, lip):
    g = grad(xbox)
    gn = iv.norm_bounds(g)
    a = (iv.dn(gn[0] * lip), iv.up(gn[1] * lip))
    out = []
    for xb, yb in zip(Xw, Yw):
        e = [iv.sub(lo, hi, v, v) for (lo, hi), v in zip(xbox, xb)]
        en = iv.norm_bounds(e)
        c = (0.0, 0.0)
        for gi, y in zip(g, yb):
            c = iv.add(*c, *iv.scale(y, *gi))
        lo = iv.dn(iv.dn(a[0] * en[0]) + c[0])
        hi = iv.up(iv.up(a[1] * en[1]) + c[1])
        out.append((lo, hi))
    return out


def _affine_box(P0, Dlo, Dhi, l, u):
    n = len(P0)
    box = []
    for i in range(n):
        lo = hi = P0[i]
        for j in range(n):
            plo, phi = iv.mul(l[j], u[j], Dlo[j, i], Dhi[j, i])
            lo = iv.dn(lo + plo)
            hi = iv.up(hi + phi)
        box.append((lo, hi))
    return box


def falsify_generic(q: RegionalQuery, grad=None):
    """Interval branch and bound over barycentric boxes in plain Python."""
    c = q.candidate
    M = c.matrix
    if grad is None:
        grad = _quad_grad_enclosure if isinstance(c.kind, Quadratic) else _tanh_grad_enclosure
    gfun = lambda box: grad(M, box)
    P = np.asarray(q.simplex.coords, dtype=float)
    n = P.shape[1]
    P0 = P[0]
    Dm = P[1:] - P0
    Dlo, Dhi = _dn(Dm), _up(Dm)
    wit = q.witnesses
    Xw = [tuple(s[0]) for s in wit]
    Yw = [tuple(s[1]) for s in wit]
    stack = [([0.0] * n, [1.0] * n)]
    splits = 0
    while stack:
        l, u = stack.pop()
        sl = 0.0
        for v in l:
            sl = iv.dn(sl + v)
        if sl > 1.0:
            continue
        for j in range(n):
            rest = 0.0
            for i in range(n):
                if i != j:
                    rest = iv.dn(rest + l[i])
            u[j] = min(u[j], iv.up(1.0 - rest))
        if any(u[j] < l[j] for j in range(n)):
            continue
        xbox = _affine_box(P0, Dlo, Dhi, l, u)
        if q.roi.box_misses([b[0] for b in xbox], [b[1] for b in xbox]):
            continue
        encl = _lieub_enclosures(gfun, xbox, Xw, Yw, q.lip)
        if any(hi < 0.0 for _, hi in encl):
            continue
        lam = [0.5 * (a + b) for a, b in zip(l, u)]
        if sum(lam) <= 1.0:
            x = P0 + np.asarray(lam) @ Dm
            if q.roi.contains(x):
                pt = _lieub_enclosures(gfun, [(v, v) for v in x], Xw, Yw, q.lip)
                if all(lo >= 0.0 for lo, _ in pt):
                    return Falsified((tuple(float(v) for v in x),), splits)
        if splits >= q.budget:
            return Unknown(tuple(q.simplex.centroid), splits)
        k = int(np.argmax([b - a for a, b in zip(l, u)]))
        mid = 0.5 * (l[k] + u[k])
        stack.append((l[:k] + [mid] + l[k + 1:], list(u)))
        stack.append((list(l), u[:k] + [mid] + u[k + 1:]))
        splits += 1
    return ProvenUnsat(splits)


def falsify_region(q: RegionalQuery, backend: Optional[str] = None):
    """Decide the regional condition on simplex ∩ ROI.

    ``backend`` picks the quadratic kernel: None (default selection),
    "cython", "python" or "generic".
    """
    if not isinstance(q.candidate.kind, Quadratic) or backend == "generic":
        return falsify_generic(q)
    if backend == "python":
        fn = kernels.falsify_quadratic_py
    elif backend == "cython":
        if kernels.falsify_quadratic_ext is None:
            raise RuntimeError("compiled kernel is not available")
        fn = kernels.falsify_quadratic_ext
    else:
        fn = kernels.falsify_quadratic
    status, splits, out = _run_kernel(fn, q)
    if status == kernels.UNSAT:
        return ProvenUnsat(splits)
    if status == kernels.FALSIFIED:
        return Falsified((tuple(float(v) for v in out),), splits)
    return Unknown(tuple(q.simplex.centroid), splits)


# ---------------------------------------------------------------------------
# Counterexamples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrueCounterexample:
    x: tuple
    y: tuple


@dataclass(frozen=True)
class RefinementOnly:
    x: tuple
    y: tuple


def classify_counterexample(c: Candidate, x_c, y_c):
    x = np.asarray(x_c, dtype=float)
    y = np.asarray(y_c, dtype=float)
    pair = (tuple(x.tolist()), tuple(y.tolist()))
    if c.value(x) <= 0.0 or float(c.gradient(x) @ y) >= 0.0:
        return TrueCounterexample(*pair)
    return RefinementOnly(*pair)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

class UnsatCache:
    """Regions proven for one candidate; switching candidates clears it."""

    def __init__(self):
        self._lock = threading.Lock()
        self._cid = None
        self._keys = set()

    def bind(self, cid):
        with self._lock:
            if cid != self._cid:
                self._cid = cid
                self._keys = set()

    def __contains__(self, key):
        with self._lock:
            return key in self._keys

    def add(self, key):
        with self._lock:
            self._keys.add(key)

    def __len__(self):
        return len(self._keys)


@dataclass
class VerificationResult:
    verdicts: dict
    regions: dict
    new_states: list
    new_samples: list
    true_counterexamples: list
    falsified: bool
    n_regions: int = 0
    n_queries: int = 0
    cache_hits: int = 0
    splits: int = 0


def verify_candidate(c: Candidate, cover: Cover, roi, system, budget: int = DEFAULT_BUDGET,
                     jobs: int = 1, cache: Optional[UnsatCache] = None,
                     trace: Optional[Callable[[dict], None]] = None,
                     backend: Optional[str] = None, sample: bool = True) -> VerificationResult:
    """Falsify every region that may meet the ROI, then sample the new states.

    Vertex samples are read from ``cover.data`` (the derivative recorded with
    each point).
    """
    if cache is None:
        cache = UnsatCache()
    cache.bind(c.id)
    regions = simplices_to_verify(cover, roi)
    todo = []
    verdicts = {}
    hits = 0
    for s in regions:
        key = (c.id, s.id, s.vertex_ids)
        if key in cache:
            verdicts[s.id] = ProvenUnsat(0)
            hits += 1
        else:
            todo.append(s)

    def work(s):
        t0 = time.perf_counter()
        samples = tuple(Sample(tuple(cover.points[v]), tuple(cover.data[v])) for v in s.vertex_ids)
        q = RegionalQuery(c, s, samples, regional_lipschitz(system, s), roi, budget)
        v = falsify_region(q, backend)
        return v, time.perf_counter() - t0

    if jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(work, todo))
    else:
        results = [work(s) for s in todo]

    splits = 0
    for s, (v, dt) in zip(todo, results):
        verdicts[s.id] = v
        splits += v.splits
        if isinstance(v, ProvenUnsat):
            cache.add((c.id, s.id, s.vertex_ids))
        if trace is not None:
            trace({"simplex": s.id, "vertices": [list(map(float, p)) for p in s.coords],
                   "verdict": type(v).__name__, "splits": v.splits, "seconds": dt})

    states = set()
    for s in regions:
        v = verdicts[s.id]
        if isinstance(v, Falsified):
            for x in v.states:
                if _near_existing(cover, x):
                    x = tuple(s.centroid)
                states.add(tuple(x))
        elif isinstance(v, Unknown):
            states.add(tuple(v.centroid))
    new_states = sorted(states)

    new_samples = []
    true_cex = []
    if sample:
        for x in new_states:
            y = tuple(float(v) for v in system.evaluate(x))
            new_samples.append(Sample(x, y))
            if roi.contains(x) and isinstance(classify_counterexample(c, x, y), TrueCounterexample):
                true_cex.append(Sample(x, y))
    return VerificationResult(
        verdicts=verdicts,
        regions={s.id: s for s in regions},
        new_states=new_states,
        new_samples=new_samples,
        true_counterexamples=true_cex,
        falsified=bool(true_cex),
        n_regions=len(regions),
        n_queries=len(todo),
        cache_hits=hits,
        splits=splits,
    )


def _near_existing(cover: Cover, x) -> bool:
    return cover._find_duplicate(tuple(float(v) for v in x)) is not None


class JsonlTrace:
    """Appends one JSON record per verified simplex."""

    def __init__(self, path):
        self._fh = open(path, "a")
        self._lock = threading.Lock()

    def __call__(self, rec: dict):
        with self._lock:
            self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        self._fh.close()
