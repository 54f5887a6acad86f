"""Black-box dynamics oracles, regions of interest and the benchmark registry."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import intervals as iv

DEFAULT_MAX_SAMPLES = 500_000


class SampleBudgetExceeded(RuntimeError):
    """Raised when the oracle has been queried ``max_samples`` times."""


class Sample(NamedTuple):
    x: tuple
    y: tuple


def as_state(x, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"expected a state of dimension {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# Regions of interest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Annulus:
    """``{x : r_min <= |x| <= r_max}``."""

    r_min: float
    r_max: float
    dim: int = 2

    def __post_init__(self):
        if not (self.r_min > 0.0):
            raise ValueError("annulus inner radius must be positive (origin excluded)")
        if not (self.r_max > self.r_min):
            raise ValueError("annulus outer radius must exceed the inner radius")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def contains(self, x) -> bool:
        x = as_state(x, self.dim)
        r = math.sqrt(float(np.dot(x, x)))
        return self.r_min <= r <= self.r_max

    def contains_batch(self, X) -> np.ndarray:
        r = np.linalg.norm(np.asarray(X, dtype=float), axis=1)
        return (r >= self.r_min) & (r <= self.r_max)

    def bounding_box(self):
        return np.full(self.dim, -self.r_max), np.full(self.dim, self.r_max)

    def box_misses(self, lo, hi) -> bool:
        """True when the axis-aligned box [lo, hi] provably avoids the region."""
        near = 0.0
        far = 0.0
        for a, b in zip(lo, hi):
            near = iv.dn(near + iv.dn(iv.mig(a, b) ** 2))
            far = iv.up(far + iv.up(iv.mag(a, b) ** 2))
        return far < iv.dn(self.r_min * self.r_min) or near > iv.up(self.r_max * self.r_max)

    def kernel_params(self):
        return 0, np.array([self.r_min]), np.array([self.r_max])

    def to_dict(self):
        return {"type": "annulus", "r_min": self.r_min, "r_max": self.r_max, "dim": self.dim}


@dataclass(frozen=True)
class BoxShell:
    """Outer box minus the open inner box: ``|x_i| <= outer_i`` for all i and
    ``|x_i| >= inner_i`` for at least one i."""

    inner: tuple
    outer: tuple

    def __post_init__(self):
        inner = tuple(float(v) for v in self.inner)
        outer = tuple(float(v) for v in self.outer)
        object.__setattr__(self, "inner", inner)
        object.__setattr__(self, "outer", outer)
        if len(inner) != len(outer) or not inner:
            raise ValueError("inner and outer half-widths must have the same positive length")
        if any(v <= 0.0 for v in inner):
            raise ValueError("inner half-widths must be positive (origin excluded)")
        if any(o <= i for i, o in zip(inner, outer)):
            raise ValueError("outer half-widths must exceed inner half-widths")

    @property
    def dim(self) -> int:
        return len(self.outer)

    def contains(self, x) -> bool:
        x = np.abs(as_state(x, self.dim))
        return bool(np.all(x <= self.outer) and np.any(x >= self.inner))

    def contains_batch(self, X) -> np.ndarray:
        A = np.abs(np.asarray(X, dtype=float))
        return np.all(A <= np.asarray(self.outer), axis=1) & np.any(A >= np.asarray(self.inner), axis=1)

    def bounding_box(self):
        o = np.asarray(self.outer)
        return -o, o.copy()

    def box_misses(self, lo, hi) -> bool:
        if any(a > o or b < -o for a, b, o in zip(lo, hi, self.outer)):
            return True
        return all(iv.mag(a, b) < i for a, b, i in zip(lo, hi, self.inner))

    def kernel_params(self):
        return 1, np.asarray(self.inner, dtype=float), np.asarray(self.outer, dtype=float)

    def to_dict(self):
        return {"type": "box_shell", "inner": list(self.inner), "outer": list(self.outer)}


RegionOfInterest = Annulus | BoxShell


def roi_contains(roi: RegionOfInterest, x) -> bool:
    return roi.contains(x)


def roi_bounding_box(roi: RegionOfInterest):
    return roi.bounding_box()


def roi_from_dict(d: dict, dim: Optional[int] = None) -> RegionOfInterest:
    kind = d.get("type", "annulus")
    if kind == "annulus":
        return Annulus(float(d["r_min"]), float(d["r_max"]), int(d.get("dim", dim or 2)))
    if kind == "box_shell":
        return BoxShell(tuple(d["inner"]), tuple(d["outer"]))
    raise ValueError(f"unknown ROI type {kind!r}")


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class BlackBoxSystem:
    """An opaque vector field ``f`` with a global Lipschitz bound.

    ``func`` maps an ``(N, n)`` array of states to ``(N, n)`` derivatives.
    ``regional_lip`` optionally maps a bounding box ``(lo, hi)`` to a
    Lipschitz bound valid on that box. Only :meth:`evaluate` counts against
    the sample budget; :meth:`dynamics` is the in-process white-box access
    used by validators.
    """

    name: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    domain: tuple
    regional_lip: Optional[Callable[[np.ndarray, np.ndarray], float]] = None
    default_roi: Optional[RegionOfInterest] = None
    max_samples: int = DEFAULT_MAX_SAMPLES
    samples_used: int = field(default=0, init=False)

    def __post_init__(self):
        if not (self.lipschitz > 0.0):
            raise ValueError("Lipschitz bound must be positive")
        lo, hi = (np.asarray(v, dtype=float) for v in self.domain)
        self.domain = (lo, hi)
        self._lock = threading.Lock()

    def dynamics(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.asarray(self.func(X), dtype=float)

    def in_domain(self, x) -> bool:
        lo, hi = self.domain
        tol = 1e-12 * (1.0 + np.abs(hi - lo))
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

    def evaluate(self, x) -> np.ndarray:
        x = as_state(x, self.dim)
        if not self.in_domain(x):
            raise ValueError(f"state {x.tolist()} lies outside the domain of {self.name}")
        with self._lock:
            if self.samples_used >= self.max_samples:
                raise SampleBudgetExceeded(f"sample budget of {self.max_samples} exhausted")
            self.samples_used += 1
        return self.dynamics(x[None, :])[0]

    def reset_counter(self):
        with self._lock:
            self.samples_used = 0


def evaluate(system: BlackBoxSystem, x) -> np.ndarray:
    return system.evaluate(x)


def global_lipschitz(system: BlackBoxSystem) -> float:
    return system.lipschitz


def regional_lipschitz(system: BlackBoxSystem, region) -> float:
    """Lipschitz bound for a region given as vertex coordinates, a
    ``(lo, hi)`` box, or any object with a ``coords`` attribute."""
    if system.regional_lip is None:
        return system.lipschitz
    if isinstance(region, tuple) and len(region) == 2:
        lo, hi = (np.asarray(v, dtype=float) for v in region)
    else:
        pts = np.asarray(getattr(region, "coords", region), dtype=float)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    bound = float(system.regional_lip(lo, hi))
    if not (bound > 0.0) or bound > system.lipschitz:
        return system.lipschitz
    return bound


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------

def _linear(sign: float, dim: int, name: str, roi: RegionOfInterest) -> BlackBoxSystem:
    lip = math.sqrt(dim)  # Frobenius norm of +-I

    def func(X):
        return sign * X

    half = 10.0
    return BlackBoxSystem(
        name=name,
        dim=dim,
        func=func,
        lipschitz=lip,
        domain=(np.full(dim, -half), np.full(dim, half)),
        regional_lip=lambda lo, hi: lip,
        default_roi=roi,
    )


def linear_stable(dim: int = 2) -> BlackBoxSystem:
    return _linear(-1.0, dim, "linear_stable", Annulus(0.1, 1.0, dim))


def linear_unstable(dim: int = 2) -> BlackBoxSystem:
    return _linear(1.0, dim, "linear_unstable", Annulus(0.1, 1.0, dim))


def _vdp_func(X):
    x1, x2 = X[:, 0], X[:, 1]
    out = np.empty_like(X)
    out[:, 0] = -x2
    out[:, 1] = x1 - (1.0 - x1 * x1) * x2
    return out


def _vdp_regional(lo, hi):
    """Upper bound of the Jacobian's Frobenius norm over a box.

    J = [[0, -1], [1 + 2 x1 x2, x1^2 - 1]].
    """
    x1 = (float(lo[0]), float(hi[0]))
    x2 = (float(lo[1]), float(hi[1]))
    p = iv.mul(*x1, *x2)
    j21 = iv.add(1.0, 1.0, *iv.scale(2.0, *p))
    j22 = iv.sub(*iv.sqr(*x1), 1.0, 1.0)
    return iv.norm_bounds([(1.0, 1.0), j21, j22])[1]


def vanderpol() -> BlackBoxSystem:
    """Van der Pol oscillator in reversed time (mu = 1), stable at the origin."""
    return BlackBoxSystem(
        name="vanderpol",
        dim=2,
        func=_vdp_func,
        lipschitz=4.632,
        domain=(np.array([-1.2, -1.2]), np.array([1.2, 1.2])),
        regional_lip=_vdp_regional,
        default_roi=Annulus(0.2, 1.2, 2),
    )


STANLEY_K = 0.45
STANLEY_WHEELBASE = 1.75
STANLEY_SPEED = 2.8
STANLEY_MAX_STEER = 1.2


def stanley_lipschitz(k=STANLEY_K, wheelbase=STANLEY_WHEELBASE, speed=STANLEY_SPEED) -> float:
    return math.sqrt((1.0 + wheelbase ** -2) * (speed ** 2 + k ** 2))


def stanley(k=STANLEY_K, wheelbase=STANLEY_WHEELBASE, speed=STANLEY_SPEED,
            max_steer=STANLEY_MAX_STEER) -> BlackBoxSystem:
    """Kinematic path following under the Stanley steering law.

    State is (cross-track error e, heading error psi). Steering
    ``clip(psi + atan(k e / v), -max_steer, max_steer)`` makes the field
    only piecewise smooth.
    """

    def func(X):
        e, psi = X[:, 0], X[:, 1]
        steer = np.clip(psi + np.arctan2(k * e, speed), -max_steer, max_steer)
        out = np.empty_like(X)
        out[:, 0] = speed * np.sin(psi - steer)
        out[:, 1] = -(speed / wheelbase) * np.sin(steer)
        return out

    outer = (2.0, math.pi / 4)
    return BlackBoxSystem(
        name="stanley",
        dim=2,
        func=func,
        lipschitz=stanley_lipschitz(k, wheelbase, speed),
        domain=(-np.asarray(outer), np.asarray(outer)),
        default_roi=BoxShell((1e-3, 1e-3), outer),
    )


BENCHMARKS: dict[str, Callable[[], BlackBoxSystem]] = {
    "linear_stable": linear_stable,
    "linear_stable_3d": lambda: linear_stable(3),
    "linear_unstable": linear_unstable,
    "vanderpol": vanderpol,
    "stanley": stanley,
}


def get_system(name: str, max_samples: int = DEFAULT_MAX_SAMPLES) -> BlackBoxSystem:
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    sys_ = factory()
    sys_.max_samples = max_samples
    return sys_


def register_benchmark(name: str, factory: Callable[[], BlackBoxSystem]):
    BENCHMARKS[name] = factory


def grid_states(lo: Sequence[float], hi: Sequence[float], per_axis: int) -> np.ndarray:
    """Evenly spaced grid over a box, endpoints included (so box corners are too)."""
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
