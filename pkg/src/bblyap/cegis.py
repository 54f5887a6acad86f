"""Counterexample-guided synthesis loop: learn, cover, verify, refine."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .cover import init_cover
from .learner import CompatibilityPolytope, NoCandidate, propose
from .sysmodel import BlackBoxSystem, Sample, SampleBudgetExceeded, get_system, grid_states
from .template import (Candidate, Certified, CounterexampleState, Inconclusive, make_template,
                       positivity_certificate)
from .verifier import DEFAULT_BUDGET, Falsified, JsonlTrace, ProvenUnsat, UnsatCache, Unknown, \
    classify_counterexample, TrueCounterexample, verify_candidate

log = logging.getLogger(__name__)

DEFAULT_DELTA = 1e-4
DEFAULT_MAX_K = 40
MAX_K_CAP = 10 ** 9


def compute_diam_threshold(delta: float, n: int) -> float:
    if not (delta > 0.0) or n < 1:
        raise ValueError("need delta > 0 and n >= 1")
    return 0.5 * delta * math.sqrt(2.0 * (n + 1) / n)


def max_k_holds(gamma: float, d: int, k: int) -> bool:
    """The ACCPM query bound inequality at k."""
    rhs = (0.5 + 2 * d * math.log(1.0 + (k + 1) / (8.0 * d * d))) / (2 * d + k + 1)
    return gamma * gamma / d >= rhs


def compute_max_k(gamma: float, d: int, cap: int = MAX_K_CAP) -> int:
    """Smallest k >= 0 at which the query bound inequality holds."""
    if not (0.0 < gamma < 1.0) or d < 1:
        raise ValueError("need 0 < gamma < 1 and d >= 1")
    lhs = gamma * gamma / d
    start = 0
    chunk = 1 << 16
    while start <= cap:
        k = np.arange(start, min(start + chunk, cap + 1), dtype=float)
        rhs = (0.5 + 2 * d * np.log(1.0 + (k + 1) / (8.0 * d * d))) / (2 * d + k + 1)
        hit = np.flatnonzero(lhs >= rhs * (1 - 1e-12))
        if hit.size:
            # settle the boundary with the scalar form
            kk = max(int(k[hit[0]]) - 2, 0)
            while not max_k_holds(gamma, d, kk):
                kk += 1
            return kk
        start += chunk
        chunk = min(chunk * 2, 1 << 22)
    raise OverflowError(f"no k <= {cap} satisfies the bound for gamma={gamma}, d={d}")


@dataclass
class CegisConfig:
    system: Union[str, BlackBoxSystem] = "vanderpol"
    roi: Optional[object] = None
    template: str = "quadratic"
    delta: float = DEFAULT_DELTA
    gamma: Optional[float] = None
    max_k: Optional[int] = None
    grid_per_axis: int = 6
    max_samples: int = 500_000
    verifier_budget: int = DEFAULT_BUDGET
    jobs: int = 1
    seed: int = 0
    time_limit: Optional[float] = None
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.gamma is not None and self.max_k is not None:
            raise ValueError("gamma and max_k are mutually exclusive")
        if self.gamma is not None and not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.max_k is not None and self.max_k < 1:
            raise ValueError("max_k must be positive")
        if not (self.delta > 0.0):
            raise ValueError("delta must be positive")
        if self.grid_per_axis < 2:
            raise ValueError("grid_per_axis must be at least 2")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")


@dataclass
class Stats:
    k: int = 0
    n_learn: int = 0
    n_samples: int = 0
    n_simplices: int = 0
    seconds: float = 0.0
    samples_used: int = 0

    def as_dict(self):
        return {"k": self.k, "S_L": self.n_learn, "S": self.n_samples, "C": self.n_simplices,
                "seconds": self.seconds, "samples_used": self.samples_used}


@dataclass
class Found:
    candidate: Candidate
    stats: Stats


@dataclass
class NoLyapunovInSpace:
    stats: Stats


@dataclass
class NotDeltaProvable:
    candidate: Candidate
    stats: Stats


@dataclass
class IterationLimit:
    candidate: Optional[Candidate]
    stats: Stats


@dataclass
class ResourceLimit:
    candidate: Optional[Candidate]
    reason: str
    stats: Stats


CegisOutcome = Union[Found, NoLyapunovInSpace, NotDeltaProvable, IterationLimit, ResourceLimit]


@dataclass
class RunState:
    """Everything a run leaves behind: the sample store, cover and trace."""

    system: BlackBoxSystem
    roi: object
    samples: list = field(default_factory=list)
    cover: object = None
    trace: list = field(default_factory=list)
    candidate: Optional[Candidate] = None

    def learn_set(self):
        return [s for s in self.samples if self.roi.contains(s.x)]


class _Resource(Exception):
    pass


def _resolve_max_k(cfg: CegisConfig, d: int) -> int:
    if cfg.max_k is not None:
        return cfg.max_k
    if cfg.gamma is not None:
        return compute_max_k(cfg.gamma, d)
    return DEFAULT_MAX_K


def run(cfg: CegisConfig, state_out: Optional[dict] = None) -> CegisOutcome:
    """Run the synthesis loop. ``state_out['state']`` receives the RunState."""
    t0 = time.perf_counter()
    system = get_system(cfg.system, cfg.max_samples) if isinstance(cfg.system, str) else cfg.system
    if not isinstance(cfg.system, str):
        system.max_samples = cfg.max_samples
    system.reset_counter()
    roi = cfg.roi if cfg.roi is not None else system.default_roi
    if roi is None:
        raise ValueError("no region of interest given and the system has no default")
    n = system.dim
    if roi.dim != n:
        raise ValueError("ROI dimension does not match the system")
    kind = make_template(cfg.template, n)
    diam_thres = compute_diam_threshold(cfg.delta, n)
    max_k = _resolve_max_k(cfg, kind.d)
    st = RunState(system, roi)
    if state_out is not None:
        state_out["state"] = st
    tracer = JsonlTrace(cfg.trace_path) if cfg.trace_path else None
    known = set()
    k = 0
    n_learn = 0

    def stats():
        return Stats(k=k, n_learn=n_learn, n_samples=len(st.samples),
                     n_simplices=st.cover.n_simplices if st.cover is not None else 0,
                     seconds=time.perf_counter() - t0, samples_used=system.samples_used)

    def add_samples(new):
        # a sample joins S only when the cover accepts its state, so S and
        # the triangulation's points stay in one-to-one correspondence
        fresh = []
        for s in new:
            if s.x in known:
                continue
            before = st.cover.n_points
            st.cover.insert([s.x], [s.y])
            if st.cover.n_points > before:
                known.add(s.x)
                st.samples.append(s)
                fresh.append(s)
        return fresh

    def check_time():
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            raise _Resource(f"time limit of {cfg.time_limit} s reached")

    try:
        lo, hi = roi.bounding_box()
        seeds = []
        for x in grid_states(lo, hi, cfg.grid_per_axis):
            x = tuple(float(v) for v in x)
            seeds.append(Sample(x, tuple(float(v) for v in system.evaluate(x))))
        for s in seeds:
            if s.x not in known:
                known.add(s.x)
                st.samples.append(s)
        st.cover = init_cover([s.x for s in st.samples], [s.y for s in st.samples])
        cache = UnsatCache()

        for k in range(1, max_k + 1):
            learn = st.learn_set()
            n_learn = len(learn)
            poly = CompatibilityPolytope.from_samples(kind, learn)
            cand = propose(learn, kind, polytope=poly)
            # samples[:n_samples] rebuilds this iteration's polytope from the store
            rec = {"k": k, "n_learn": len(learn), "n_samples": len(st.samples),
                   "rows": poly.n_rows, "passes": []}
            st.trace.append(rec)
            if isinstance(cand, NoCandidate):
                rec["outcome"] = "NoLyapunovInSpace"
                return NoLyapunovInSpace(stats())
            st.candidate = cand
            rec["theta"] = list(cand.theta)
            rec["candidate_id"] = cand.id
            stop_refine = False
            while True:
                check_time()
                if stop_refine:
                    rec["outcome"] = "NotDeltaProvable"
                    return NotDeltaProvable(cand, stats())
                res = verify_candidate(cand, st.cover, roi, system, cfg.verifier_budget,
                                       cfg.jobs, cache, tracer)
                bad = [sid for sid, v in res.verdicts.items() if not isinstance(v, ProvenUnsat)]
                p = {"regions": res.n_regions, "queries": res.n_queries,
                     "cache_hits": res.cache_hits, "splits": res.splits,
                     "falsified_regions": sum(isinstance(res.verdicts[s], Falsified) for s in bad),
                     "unknown_regions": sum(isinstance(res.verdicts[s], Unknown) for s in bad),
                     "new_states": len(res.new_states),
                     "true_counterexamples": len(res.true_counterexamples)}
                rec["passes"].append(p)
                if not bad:
                    pos = positivity_certificate(cand, roi)
                    p["positivity"] = type(pos).__name__
                    if isinstance(pos, Certified):
                        rec["outcome"] = "Found"
                        return Found(cand, stats())
                    if isinstance(pos, Inconclusive):
                        raise _Resource(f"positivity undecided: {pos.reason}")
                    x = pos.x
                    y = tuple(float(v) for v in system.evaluate(x))
                    add_samples([Sample(x, y)])
                    if isinstance(classify_counterexample(cand, x, y), TrueCounterexample):
                        rec["positivity_counterexample"] = list(x)
                        rec["counterexamples"] = [[list(x), list(y)]]
                        break
                    raise _Resource("positivity failed without a usable counterexample")
                for sid in bad:
                    if res.regions[sid].diameter <= diam_thres:
                        stop_refine = True
                        break
                add_samples(res.new_samples)
                if res.falsified:
                    rec["counterexamples"] = [[list(s.x), list(s.y)] for s in res.true_counterexamples]
                    break
            rec["outcome"] = "falsified"
        return IterationLimit(st.candidate, stats())
    except SampleBudgetExceeded as e:
        return ResourceLimit(st.candidate, str(e), stats())
    except _Resource as e:
        return ResourceLimit(st.candidate, str(e), stats())
    finally:
        if tracer is not None:
            tracer.close()
