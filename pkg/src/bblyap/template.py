"""Lyapunov candidate templates that are linear in their parameters.

Both templates satisfy ``V_theta(x) = v_features(x) . theta`` and
``grad V_theta(x) . y = lie_features(x, y) . theta``, which keeps the set of
compatible parameters a polytope.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import intervals as iv
from .sysmodel import Annulus

POSITIVITY_SPLITS = 10_000
POSITIVITY_MIN_WIDTH = 1e-6


def _check(x, n):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != n:
        raise ValueError(f"dimension mismatch: template has n={n}, state has {x.shape[0]}")
    return x


@dataclass(frozen=True)
class Quadratic:
    """``V(x) = 1/2 x^T Theta x`` with symmetric Theta, d = n(n+1)/2.

    Parameters fill the lower triangle row by row:
    ``Theta[i, j] = Theta[j, i] = theta[i(i+1)/2 + j]`` for ``j <= i``.
    """

    n: int
    name = "quadratic"

    @property
    def d(self) -> int:
        return self.n * (self.n + 1) // 2

    def matrix(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.d,):
            raise ValueError(f"expected {self.d} parameters, got {theta.shape}")
        M = np.zeros((self.n, self.n))
        rows, cols = np.tril_indices(self.n)
        M[rows, cols] = theta
        M[cols, rows] = theta
        return M

    def theta_from_matrix(self, M) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        rows, cols = np.tril_indices(self.n)
        return 0.5 * (M[rows, cols] + M[cols, rows])

    def gradient_matrix(self, theta) -> np.ndarray:
        return self.matrix(theta)

    def value(self, theta, x) -> float:
        x = _check(x, self.n)
        return 0.5 * float(x @ self.matrix(theta) @ x)

    def gradient(self, theta, x) -> np.ndarray:
        x = _check(x, self.n)
        return self.matrix(theta) @ x

    def value_batch(self, theta, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return 0.5 * np.einsum("ki,ij,kj->k", X, self.matrix(theta), X)

    def gradient_batch(self, theta, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.matrix(theta)

    def v_features(self, x) -> np.ndarray:
        x = _check(x, self.n)
        rows, cols = np.tril_indices(self.n)
        phi = x[rows] * x[cols]
        phi[rows == cols] *= 0.5
        return phi

    def lie_features(self, x, y) -> np.ndarray:
        x = _check(x, self.n)
        y = _check(y, self.n)
        rows, cols = np.tril_indices(self.n)
        psi = x[rows] * y[cols] + x[cols] * y[rows]
        psi[rows == cols] *= 0.5
        return psi


@dataclass(frozen=True)
class TanhQuadratic:
    """``V(x) = Tanh(x)^T Theta Tanh(x)`` with a general n-by-n Theta, d = n^2.

    ``theta[i*n + j] = Theta[i, j]``; only the symmetric part of Theta
    affects V.
    """

    n: int
    name = "tanh_quadratic"

    @property
    def d(self) -> int:
        return self.n * self.n

    def matrix(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.d,):
            raise ValueError(f"expected {self.d} parameters, got {theta.shape}")
        return theta.reshape(self.n, self.n).copy()

    def theta_from_matrix(self, M) -> np.ndarray:
        return np.asarray(M, dtype=float).reshape(-1).copy()

    def value(self, theta, x) -> float:
        t = np.tanh(_check(x, self.n))
        return float(t @ self.matrix(theta) @ t)

    def gradient(self, theta, x) -> np.ndarray:
        x = _check(x, self.n)
        t = np.tanh(x)
        M = self.matrix(theta)
        return (1.0 - t * t) * ((M + M.T) @ t)

    def value_batch(self, theta, X) -> np.ndarray:
        T = np.tanh(np.asarray(X, dtype=float))
        return np.einsum("ki,ij,kj->k", T, self.matrix(theta), T)

    def gradient_batch(self, theta, X) -> np.ndarray:
        T = np.tanh(np.asarray(X, dtype=float))
        M = self.matrix(theta)
        return (1.0 - T * T) * (T @ (M + M.T).T)

    def v_features(self, x) -> np.ndarray:
        t = np.tanh(_check(x, self.n))
        return np.outer(t, t).ravel()

    def lie_features(self, x, y) -> np.ndarray:
        x = _check(x, self.n)
        y = _check(y, self.n)
        t = np.tanh(x)
        u = (1.0 - t * t) * y
        return (np.outer(u, t) + np.outer(t, u)).ravel()


TemplateKind = Union[Quadratic, TanhQuadratic]

TEMPLATES = {"quadratic": Quadratic, "tanh_quadratic": TanhQuadratic}


def make_template(name: str, n: int) -> TemplateKind:
    try:
        return TEMPLATES[name](n)
    except KeyError:
        raise ValueError(f"unknown template {name!r}; choose from {sorted(TEMPLATES)}") from None


@dataclass(frozen=True)
class Candidate:
    kind: TemplateKind
    theta: tuple

    def __post_init__(self):
        theta = tuple(float(v) + 0.0 for v in np.asarray(self.theta, dtype=float).reshape(-1))
        if len(theta) != self.kind.d:
            raise ValueError(f"{self.kind.name} with n={self.kind.n} needs {self.kind.d} parameters")
        if not all(math.isfinite(v) for v in theta):
            raise ValueError("non-finite parameter")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_matrix(cls, kind: TemplateKind, M) -> "Candidate":
        return cls(kind, tuple(kind.theta_from_matrix(M)))

    @property
    def theta_array(self) -> np.ndarray:
        return np.asarray(self.theta)

    @property
    def matrix(self) -> np.ndarray:
        return self.kind.matrix(self.theta_array)

    @property
    def id(self) -> str:
        h = hashlib.sha1(f"{self.kind.name}:{self.kind.n}".encode())
        h.update(self.theta_array.tobytes())
        return h.hexdigest()[:16]

    def value(self, x) -> float:
        return self.kind.value(self.theta_array, x)

    def gradient(self, x) -> np.ndarray:
        return self.kind.gradient(self.theta_array, x)


def evaluate_v(c: Candidate, x) -> float:
    return c.value(x)


def gradient_v(c: Candidate, x) -> np.ndarray:
    return c.gradient(x)


def v_features(kind: TemplateKind, x) -> np.ndarray:
    return kind.v_features(x)


def lie_features(kind: TemplateKind, x, y) -> np.ndarray:
    return kind.lie_features(x, y)


# ---------------------------------------------------------------------------
# Positivity on the region of interest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Certified:
    pass


@dataclass(frozen=True)
class CounterexampleState:
    x: tuple


@dataclass(frozen=True)
class Inconclusive:
    reason: str


def _scale_into_roi(v: np.ndarray, roi) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size and v[nz[0]] < 0:
        v = -v
    if isinstance(roi, Annulus):
        return v / np.linalg.norm(v) * 0.5 * (roi.r_min + roi.r_max)
    outer = np.asarray(roi.outer)
    with np.errstate(divide="ignore"):
        ratios = np.where(np.abs(v) > 0, outer / np.abs(v), np.inf)
    return v * ratios.min()


def _quadratic_positivity(c: Candidate, roi):
    M = c.matrix
    try:
        np.linalg.cholesky(M)
        ok = True
    except np.linalg.LinAlgError:
        ok = False
    w, vecs = np.linalg.eigh(M)
    if ok and w[0] > 0.0:
        return Certified()
    x = _scale_into_roi(vecs[:, 0], roi)
    return CounterexampleState(tuple(float(v) for v in x))


def _tanh_value_enclosure(M, box):
    n = len(box)
    t = [iv.tanh(lo, hi) for lo, hi in box]
    acc = (0.0, 0.0)
    for i in range(n):
        acc = iv.add(*acc, *iv.scale(M[i, i], *iv.sqr(*t[i])))
        for j in range(i + 1, n):
            tt = iv.mul(*t[i], *t[j])
            acc = iv.add(*acc, *iv.scale(M[i, j], *tt))
            acc = iv.add(*acc, *iv.scale(M[j, i], *tt))
    return acc


def _tanh_positivity(c: Candidate, roi, budget=POSITIVITY_SPLITS, min_width=POSITIVITY_MIN_WIDTH):
    M = c.matrix
    lo, hi = roi.bounding_box()
    stack = [(tuple(lo), tuple(hi))]
    splits = 0
    stalled = False
    while stack:
        lo, hi = stack.pop()
        if roi.box_misses(lo, hi):
            continue
        box = list(zip(lo, hi))
        if _tanh_value_enclosure(M, box)[0] > 0.0:
            continue
        mid = tuple(0.5 * (a + b) for a, b in box)
        if roi.contains(mid) and _tanh_value_enclosure(M, [(m, m) for m in mid])[1] <= 0.0:
            return CounterexampleState(mid)
        widths = [b - a for a, b in box]
        k = int(np.argmax(widths))
        if widths[k] < min_width:
            stalled = True
            continue
        if splits >= budget:
            return Inconclusive(f"split budget of {budget} exhausted")
        splits += 1
        m = 0.5 * (lo[k] + hi[k])
        stack.append((lo, hi[:k] + (m,) + hi[k + 1:]))
        stack.append((lo[:k] + (m,) + lo[k + 1:], hi))
    if stalled:
        return Inconclusive(f"boxes narrower than {min_width} left undecided")
    return Certified()


def positivity_certificate(c: Candidate, roi):
    """Decide ``V > 0`` on the region of interest.

    Quadratic candidates are settled by a Cholesky factorization; failure
    yields the lowest-curvature eigendirection scaled into the region. Other
    templates go through interval branch and bound over the region's
    bounding box.
    """
    if roi.dim != c.kind.n:
        raise ValueError("ROI and template dimensions differ")
    if isinstance(c.kind, Quadratic):
        return _quadratic_positivity(c, roi)
    return _tanh_positivity(c, roi)
