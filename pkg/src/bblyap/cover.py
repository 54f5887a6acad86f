"""Incremental Delaunay triangulation (Bowyer-Watson) of sampled states.

The hull is closed with ghost simplices that share the vertex ``INF``, so
points may be inserted outside the current hull during construction.
Orientation and in-sphere tests are exact: a float evaluation is trusted
when it clears a permanent-based error bound, otherwise the determinant is
recomputed with rationals. Co-spherical ties are broken by a symbolic
perturbation that lowers each lifted point by ``eps**rank``, with the
lexicographically smallest point lowered most. The result is a unique,
order-independent triangulation even for grid inputs.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

log = logging.getLogger(__name__)

INF = -1
DUPLICATE_TOL = 1e-12
_FILTER = 1e-12


# ---------------------------------------------------------------------------
# Exact determinant signs
# ---------------------------------------------------------------------------

def _det_perm(M):
    """Float determinant and permanent of |M| by Laplace expansion."""
    k = len(M)
    if k == 1:
        return M[0][0], abs(M[0][0])
    if k == 2:
        a, b = M[0]
        c, d = M[1]
        return a * d - b * c, abs(a * d) + abs(b * c)
    det = 0.0
    perm = 0.0
    sign = 1.0
    for j in range(k):
        a = M[0][j]
        if a != 0.0:
            minor = [row[:j] + row[j + 1:] for row in M[1:]]
            dm, pm = _det_perm(minor)
            det += sign * a * dm
            perm += abs(a) * pm
        sign = -sign
    return det, perm


def _det_exact(M) -> Fraction:
    A = [list(row) for row in M]
    k = len(A)
    det = Fraction(1)
    for c in range(k):
        piv = next((r for r in range(c, k) if A[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            A[c], A[piv] = A[piv], A[c]
            det = -det
        det *= A[c][c]
        inv = 1 / A[c][c]
        for r in range(c + 1, k):
            f = A[r][c] * inv
            if f:
                for j in range(c + 1, k):
                    A[r][j] -= f * A[c][j]
    return det


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def orient(pts) -> int:
    """Sign of ``det[p_i - p_0]`` for n+1 points in n dimensions."""
    p0 = pts[0]
    M = [[a - b for a, b in zip(p, p0)] for p in pts[1:]]
    det, perm = _det_perm(M)
    if abs(det) > _FILTER * perm:
        return _sign(det)
    q0 = [Fraction(v) for v in p0]
    E = [[Fraction(a) - b for a, b in zip(p, q0)] for p in pts[1:]]
    return _sign(_det_exact(E))


def _insphere_raw(simplex_pts, p) -> int:
    """Sign of ``det[a_i - p, |a_i - p|^2]`` (unperturbed)."""
    M = []
    for a in simplex_pts:
        d = [u - v for u, v in zip(a, p)]
        M.append(d + [sum(v * v for v in d)])
    det, perm = _det_perm(M)
    if abs(det) > _FILTER * perm:
        return _sign(det)
    fp = [Fraction(v) for v in p]
    E = []
    for a in simplex_pts:
        d = [Fraction(u) - v for u, v in zip(a, fp)]
        E.append(d + [sum(v * v for v in d)])
    return _sign(_det_exact(E))


def in_circumsphere(simplex_pts, p) -> bool:
    """True when p lies inside the (perturbed) circumsphere of a simplex.

    The simplex may have either orientation.
    """
    n = len(p)
    o = orient(simplex_pts)
    if o == 0:
        raise ValueError("degenerate simplex")
    # D = det[1, q, |q|^2] over (a_0..a_n, p) equals (-1)^(n+1) * H.
    h = _insphere_raw(simplex_pts, p)
    if h != 0:
        D = h if (n + 1) % 2 == 0 else -h
    else:
        pts = list(simplex_pts) + [p]
        D = 0
        for k in sorted(range(n + 2), key=lambda i: tuple(pts[i])):
            ok = orient(pts[:k] + pts[k + 1:])
            if ok != 0:
                ck = ok if (k + n + 1) % 2 == 0 else -ok
                D = -ck
                break
    return D * o < 0


# ---------------------------------------------------------------------------
# Simplices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimplexRegion:
    """Immutable snapshot of a finite simplex.

    ``id`` grows monotonically over the life of a cover, so it doubles as a
    generation stamp: a retriangulated region always gets a fresh id.
    """

    id: int
    vertex_ids: tuple
    coords: np.ndarray

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def diameter(self) -> float:
        return simplex_diameter(self)

    @property
    def centroid(self) -> np.ndarray:
        return self.coords.sum(axis=0) / len(self.coords)

    def bounding_box(self):
        return self.coords.min(axis=0), self.coords.max(axis=0)

    def circumsphere(self):
        P = self.coords
        A = 2.0 * (P[1:] - P[0])
        rhs = np.sum(P[1:] ** 2, axis=1) - np.sum(P[0] ** 2)
        c = np.linalg.solve(A, rhs)
        return c, float(np.linalg.norm(P[0] - c))

    def barycentric(self, x) -> np.ndarray:
        P = self.coords
        T = (P[1:] - P[0]).T
        lam = np.linalg.solve(T, np.asarray(x, dtype=float) - P[0])
        return np.concatenate([[1.0 - lam.sum()], lam])


def simplex_diameter(s) -> float:
    P = np.asarray(getattr(s, "coords", s), dtype=float)
    best = 0.0
    for i, j in itertools.combinations(range(len(P)), 2):
        best = max(best, float(np.linalg.norm(P[i] - P[j])))
    return best


# ---------------------------------------------------------------------------
# Cover
# ---------------------------------------------------------------------------

class Cover:
    def __init__(self, dim: int):
        self.dim = dim
        self.points: list[tuple] = []
        self.data: list = []  # per-point payload, e.g. the sampled derivative
        self.verts: dict[int, list] = {}
        self.nbrs: dict[int, list] = {}
        self._next_id = 0
        self._last = None
        self._hash: dict[tuple, list] = {}
        self._cell = 1e-6

    # -- bookkeeping ----------------------------------------------------
    def _new(self, verts):
        sid = self._next_id
        self._next_id += 1
        self.verts[sid] = list(verts)
        self.nbrs[sid] = [None] * (self.dim + 1)
        return sid

    def _kill(self, sid):
        del self.verts[sid]
        del self.nbrs[sid]

    def _key(self, x):
        return tuple(math.floor(v / self._cell) for v in x)

    def _find_duplicate(self, x) -> Optional[int]:
        k = self._key(x)
        for off in itertools.product((-1, 0, 1), repeat=self.dim):
            for pid in self._hash.get(tuple(a + b for a, b in zip(k, off)), ()):
                q = self.points[pid]
                if math.dist(q, x) <= DUPLICATE_TOL:
                    return pid
        return None

    def _add_point(self, x, data=None) -> int:
        pid = len(self.points)
        self.points.append(x)
        self.data.append(data)
        self._hash.setdefault(self._key(x), []).append(pid)
        return pid

    def is_ghost(self, sid) -> bool:
        return INF in self.verts[sid]

    def _coords(self, vids):
        return [self.points[v] for v in vids]

    # -- construction ---------------------------------------------------
    def _bootstrap(self, ids):
        """First simplex from affinely independent point ids, plus its ghosts."""
        n = self.dim
        if orient(self._coords(ids)) < 0:
            ids = [ids[1], ids[0]] + list(ids[2:])
        t = self._new(ids)
        ghosts = []
        for i in range(n + 1):
            gv = list(ids)
            gv[i] = INF
            g = self._new(gv)
            self.nbrs[g][i] = t
            self.nbrs[t][i] = g
            ghosts.append(g)
        for i in range(n + 1):
            for j in range(n + 1):
                if i != j:
                    self.nbrs[ghosts[i]][j] = ghosts[j]
        self._last = t

    def _conflict(self, sid, p) -> bool:
        vs = self.verts[sid]
        if INF not in vs:
            return in_circumsphere(self._coords(vs), p)
        k = vs.index(INF)
        t = self.nbrs[sid][k]
        tv = self.verts[t]
        m = self.nbrs[t].index(sid)
        pts = self._coords(tv)
        pts[m] = p
        o = orient(pts)
        if o != 0:
            return o < 0
        return in_circumsphere(self._coords(tv), p)

    def _walk(self, p) -> int:
        """Locate a simplex in conflict with p, starting near the last insertion."""
        n = self.dim
        sid = self._last
        if sid is None or sid not in self.verts:
            sid = next(s for s in self.verts if not self.is_ghost(s))
        if self.is_ghost(sid):
            sid = self.nbrs[sid][self.verts[sid].index(INF)]
        limit = 4 * len(self.verts) + 16
        start = 0
        for _ in range(limit):
            vs = self.verts[sid]
            pts = self._coords(vs)
            moved = False
            for r in range(n + 1):
                i = (start + r) % (n + 1)
                q = list(pts)
                q[i] = p
                if orient(q) < 0:
                    nxt = self.nbrs[sid][i]
                    if self.is_ghost(nxt):
                        return nxt
                    sid = nxt
                    moved = True
                    break
            if not moved:
                return sid
            start += 1
        for s in sorted(self.verts):
            if self._conflict(s, p):
                return s
        raise RuntimeError("point location failed")

    def _insert(self, x, data=None) -> list:
        p = tuple(float(v) for v in x)
        if len(p) != self.dim or not all(math.isfinite(v) for v in p):
            raise ValueError("bad point")
        if self._find_duplicate(p) is not None:
            log.debug("skipping duplicate point %s", p)
            return []
        seed = self._walk(p)
        cavity = {seed}
        stack = [seed]
        boundary = []
        while stack:
            c = stack.pop()
            for i, nb in enumerate(self.nbrs[c]):
                if nb in cavity:
                    continue
                if self._conflict(nb, p):
                    cavity.add(nb)
                    stack.append(nb)
        for c in sorted(cavity):
            for i, nb in enumerate(self.nbrs[c]):
                if nb not in cavity:
                    boundary.append((c, i, nb))
        pid = self._add_point(p, data)
        created = []
        facets = {}
        for c, i, nb in boundary:
            vs = list(self.verts[c])
            vs[i] = pid
            s = self._new(vs)
            self.nbrs[s][i] = nb
            self.nbrs[nb][self.nbrs[nb].index(c)] = s
            if INF not in vs and orient(self._coords(vs)) < 0:
                j = next(a for a in range(len(vs)) if a != i)
                vs[i], vs[j] = vs[j], vs[i]
                self.nbrs[s][i], self.nbrs[s][j] = self.nbrs[s][j], self.nbrs[s][i]
            self.verts[s] = vs
            created.append(s)
            for j, v in enumerate(vs):
                if v == pid:
                    continue
                key = tuple(sorted(vs[:j] + vs[j + 1:]))
                other = facets.pop(key, None)
                if other is None:
                    facets[key] = (s, j)
                else:
                    o, oj = other
                    self.nbrs[s][j] = o
                    self.nbrs[o][oj] = s
        if facets:
            raise RuntimeError("cavity retriangulation left unmatched facets")
        for c in cavity:
            self._kill(c)
        finite = [s for s in created if INF not in self.verts[s]]
        if finite:
            self._last = finite[-1]
        return created

    def insert(self, states, data=None) -> list:
        """Insert states (with optional payloads); returns the ids of live
        finite simplices created."""
        if not self.verts:
            raise RuntimeError("cover must be bootstrapped with init_cover")
        states = list(states)
        data = [None] * len(states) if data is None else list(data)
        created = []
        for x, d in zip(states, data):
            created.extend(self._insert(x, d))
        return sorted(s for s in created if s in self.verts and INF not in self.verts[s])

    # -- queries --------------------------------------------------------
    def finite_ids(self) -> list:
        return sorted(s for s, vs in self.verts.items() if INF not in vs)

    def region(self, sid) -> SimplexRegion:
        vs = tuple(self.verts[sid])
        return SimplexRegion(sid, vs, np.array(self._coords(vs), dtype=float))

    def simplices(self) -> list:
        return [self.region(s) for s in self.finite_ids()]

    @property
    def n_simplices(self) -> int:
        return sum(1 for vs in self.verts.values() if INF not in vs)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def points_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float).reshape(-1, self.dim)

    def locate(self, x) -> Optional[int]:
        """Id of a finite simplex containing x (closed), or None outside the hull."""
        p = tuple(float(v) for v in x)
        s = self._walk(p)
        if self.is_ghost(s):
            return None
        return s


def init_cover(states, data=None) -> Cover:
    """Delaunay triangulation of at least n+1 affinely independent states."""
    pts = [tuple(float(v) for v in x) for x in states]
    data = [None] * len(pts) if data is None else list(data)
    if not pts:
        raise ValueError("no states")
    n = len(pts[0])
    cov = Cover(n)
    # greedily pick an affinely independent starting set in input order
    chosen = [0]
    for i in range(1, len(pts)):
        if len(chosen) == n + 1:
            break
        trial = chosen + [i]
        base = np.array([pts[j] for j in trial], dtype=float)
        if np.linalg.matrix_rank(base[1:] - base[0], tol=1e-12 * (1 + np.abs(base).max())) == len(trial) - 1:
            chosen = trial
    if len(chosen) < n + 1:
        raise ValueError("states are affinely degenerate; need n+1 affinely independent points")
    ids = [cov._add_point(pts[i], data[i]) for i in chosen]
    cov._bootstrap(ids)
    rest = [i for i in range(len(pts)) if i not in set(chosen)]
    cov.insert([pts[i] for i in rest], [data[i] for i in rest])
    return cov


def insert_points(cover: Cover, states, data=None) -> list:
    """Insert states and return snapshots of the new simplices."""
    return [cover.region(s) for s in cover.insert(states, data)]


def simplices_to_verify(cover: Cover, roi) -> list:
    """Finite simplices whose bounding box may meet the ROI, in id order."""
    out = []
    for s in cover.simplices():
        lo, hi = s.bounding_box()
        if not roi.box_misses(lo, hi):
            out.append(s)
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_csv(cover: Cover, points_path, simplices_path):
    with open(points_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"x{i}" for i in range(cover.dim)])
        for i, p in enumerate(cover.points):
            w.writerow([i] + [_fmt(v) for v in p])
    with open(simplices_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"v{i}" for i in range(cover.dim + 1)])
        for s in cover.finite_ids():
            w.writerow([s] + list(cover.verts[s]))


def import_csv(points_path, simplices_path):
    """Read exported points and simplices back as arrays."""
    with open(points_path) as fh:
        rows = list(csv.reader(fh))[1:]
    P = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)
    with open(simplices_path) as fh:
        rows = list(csv.reader(fh))[1:]
    T = np.array([[int(v) for v in r[1:]] for r in rows], dtype=int).reshape(-1, P.shape[1] + 1)
    return P, T
