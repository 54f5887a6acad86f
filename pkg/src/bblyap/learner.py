"""Analytic-center learner over the polytope of sample-compatible parameters."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import linprog

from .template import Candidate, TemplateKind

log = logging.getLogger(__name__)

MARGIN = 1e-9
S_CAP = 1.0
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 200
LS_BETA = 0.5
LS_C = 1e-4


class LPFailure(RuntimeError):
    """The feasibility LP failed for numerical reasons (not infeasibility)."""


class NewtonNonConvergence(RuntimeError):
    pass


@dataclass
class CompatibilityPolytope:
    """Halfspaces ``{theta : A theta < b}``.

    The first 2d rows are the unit hypercube ``|theta_i| < 1/2``. Each
    distinct sample then adds ``V(x) > 0`` and ``grad V(x) . y < 0`` as the
    rows ``(-phi, -margin)`` and ``(psi, -margin)``. Rows are scaled to unit
    normals, which leaves the analytic center where it is.
    """

    kind: TemplateKind
    A: np.ndarray
    b: np.ndarray
    samples: list = field(default_factory=list)
    degenerate: bool = False  # a sample produced an all-zero row that cannot hold

    @classmethod
    def hypercube(cls, kind: TemplateKind) -> "CompatibilityPolytope":
        d = kind.d
        A = np.vstack([np.eye(d), -np.eye(d)])
        return cls(kind, A, np.full(2 * d, 0.5))

    @classmethod
    def from_samples(cls, kind: TemplateKind, samples: Iterable, margin: float = MARGIN):
        poly = cls.hypercube(kind)
        poly.add_samples(samples, margin)
        return poly

    def add_samples(self, samples: Iterable, margin: float = MARGIN):
        seen = {tuple(s[0]) for s in self.samples}
        rows, offs = [], []
        for x, y in samples:
            key = tuple(float(v) for v in x)
            if key in seen:
                continue
            seen.add(key)
            self.samples.append((key, tuple(float(v) for v in y)))
            for a in (-self.kind.v_features(x), self.kind.lie_features(x, y)):
                nrm = float(np.linalg.norm(a))
                if nrm == 0.0:
                    self.degenerate = True
                    continue
                rows.append(a / nrm)
                offs.append(-margin)
        if rows:
            self.A = np.vstack([self.A, np.asarray(rows)])
            self.b = np.concatenate([self.b, offs])

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def slacks(self, theta) -> np.ndarray:
        return self.b - self.A @ np.asarray(theta, dtype=float)

    def contains(self, theta) -> bool:
        return (not self.degenerate) and bool(np.all(self.slacks(theta) > 0.0))

    def violated_rows(self, theta) -> np.ndarray:
        return np.flatnonzero(self.slacks(theta) <= 0.0)

    def barrier(self, theta) -> float:
        s = self.slacks(theta)
        if np.any(s <= 0.0):
            return -np.inf
        return float(np.sum(np.log(s)))


@dataclass(frozen=True)
class Feasible:
    point: np.ndarray
    radius: float


@dataclass(frozen=True)
class Infeasible:
    radius: float


def strict_feasibility(p: CompatibilityPolytope, s_cap: float = S_CAP):
    """Solve ``max s`` s.t. ``A theta + s <= b``, ``s <= s_cap``."""
    if p.degenerate:
        return Infeasible(-np.inf)
    m, d = p.A.shape
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([p.A, np.ones((m, 1))])
    bounds = [(None, None)] * d + [(None, s_cap)]
    res = linprog(c, A_ub=A_ub, b_ub=p.b, bounds=bounds, method="highs")
    if res.status != 0 or res.x is None:
        raise LPFailure(f"feasibility LP failed: {res.message}")
    theta = np.asarray(res.x[:d])
    s = float(res.x[-1])
    if s > 0.0 and np.all(p.slacks(theta) > 0.0):
        return Feasible(theta, s)
    return Infeasible(s)


@dataclass(frozen=True)
class CenterResult:
    theta: np.ndarray
    grad_norm: float
    iterations: int


def analytic_center(p: CompatibilityPolytope, start=None, tol: float = NEWTON_TOL,
                    max_iter: int = NEWTON_MAX_ITER) -> CenterResult:
    """Maximize ``sum log(b - A theta)`` by damped Newton from a strict interior point."""
    if start is None:
        feas = strict_feasibility(p)
        if not isinstance(feas, Feasible):
            raise ValueError("polytope has no strict interior")
        start = feas.point
    A, b = p.A, p.b
    theta = np.array(start, dtype=float)
    s = b - A @ theta
    if np.any(s <= 0.0):
        raise ValueError("start point is not strictly interior")
    f = float(np.sum(np.log(s)))
    gnorm = np.inf
    for it in range(max_iter + 1):
        inv = 1.0 / s
        g = -A.T @ inv
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return CenterResult(theta, gnorm, it)
        if it == max_iter:
            break
        H = (A * (inv * inv)[:, None]).T @ A
        try:
            L = np.linalg.cholesky(H)
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        dec = float(g @ step)
        # Past this point rounding dominates the gradient; the center is reached.
        if dec <= 1e-24:
            return CenterResult(theta, gnorm, it)
        alpha = 1.0
        while True:
            trial = theta + alpha * step
            s_new = b - A @ trial
            if np.all(s_new > 0.0):
                f_new = float(np.sum(np.log(s_new)))
                # near the center the barrier gain drops below the resolution
                # of f; a full Newton step is then safe (decrement < 0.1)
                if f_new >= f + LS_C * alpha * dec or (alpha == 1.0 and dec < 1e-2):
                    break
            alpha *= LS_BETA
            if alpha < 1e-16:
                return CenterResult(theta, gnorm, it)
        theta, s, f = trial, s_new, f_new
    raise NewtonNonConvergence(f"analytic center not reached in {max_iter} iterations "
                               f"(gradient norm {gnorm:.3e})")


@dataclass(frozen=True)
class NoCandidate:
    reason: str
    radius: float = float("nan")


def propose(samples_in_roi, kind: TemplateKind, margin: float = MARGIN,
            polytope: Optional[CompatibilityPolytope] = None):
    """Return the analytic-center candidate of H_S, or NoCandidate when H_S is empty."""
    p = polytope if polytope is not None else CompatibilityPolytope.from_samples(kind, samples_in_roi, margin)
    feas = strict_feasibility(p)
    if not isinstance(feas, Feasible):
        return NoCandidate("compatibility polytope has no strict interior", feas.radius)
    center = analytic_center(p, feas.point)
    log.debug("center after %d Newton steps, |g|=%.2e, rows=%d", center.iterations, center.grad_norm, p.n_rows)
    return Candidate(kind, tuple(center.theta))
