import json
import math

import numpy as np
import pytest

from bblyap.cover import SimplexRegion, init_cover
from bblyap.sysmodel import Annulus, Sample, get_system, grid_states, linear_stable, linear_unstable, vanderpol
from bblyap.template import Candidate, Quadratic, TanhQuadratic
from bblyap.verifier import (Falsified, JsonlTrace, ProvenUnsat, RefinementOnly, RegionalQuery,
                             TrueCounterexample, UnsatCache, Unknown, classify_counterexample,
                             falsify_region, lie_upper_bound, verify_candidate)

from oracles import probe_contradictions, random_query

Q2 = Quadratic(2)
EYE = Candidate.from_matrix(Q2, np.eye(2))
BACKENDS = ["python", "generic"] + (["cython"] if __import__("bblyap.kernels").kernels.falsify_quadratic_ext else [])


def query(system, pts, cand=EYE, roi=Annulus(0.1, 1.0), budget=2000, lip=None):
    P = np.asarray(pts, dtype=float)
    reg = SimplexRegion(0, tuple(range(len(P))), P)
    Y = system.dynamics(P)
    samples = tuple(Sample(tuple(x), tuple(y)) for x, y in zip(P, Y))
    return RegionalQuery(cand, reg, samples, system.lipschitz if lip is None else lip, roi, budget)


def test_lie_upper_bound_examples():
    s = ((1.0, 0.0), (0.0, 1.0))
    assert lie_upper_bound(EYE, (1.0, 0.0), s, 4.632) == 0.0
    v = lie_upper_bound(EYE, (0.5, 0.5), s, 4.632)
    assert v == pytest.approx(math.sqrt(0.5) * 4.632 * math.sqrt(0.5) + 0.5)
    assert v == pytest.approx(2.816, abs=1e-12)
    rng = np.random.default_rng(60)
    for _ in range(100):
        x, xb = rng.normal(size=(2, 2))
        assert lie_upper_bound(EYE, x, (xb, (0.0, 0.0)), 3.0) >= 0.0


@pytest.mark.parametrize("name", ["linear_stable", "linear_unstable", "vanderpol", "stanley", "linear_stable_3d"])
def test_upper_bound_sound(name):
    sys_ = get_system(name)
    rng = np.random.default_rng(61)
    lo, hi = sys_.domain
    for kind in (Quadratic(sys_.dim), TanhQuadratic(sys_.dim)):
        for _ in range(500):
            c = Candidate(kind, rng.uniform(-0.5, 0.5, kind.d))
            x, xb = rng.uniform(lo, hi, (2, sys_.dim))
            fx, fb = sys_.dynamics(np.array([x, xb]))
            assert c.gradient(x) @ fx <= lie_upper_bound(c, x, (xb, fb), sys_.lipschitz) + 1e-9


@pytest.mark.parametrize("backend", BACKENDS)
def test_small_simplex_proven(backend):
    q = query(linear_stable(), [(0.5, 0.0), (0.51, 0.0), (0.5, 0.01)])
    assert isinstance(falsify_region(q, backend), ProvenUnsat)
    # dense grid confirms the hand argument
    assert probe_contradictions(q, None, 100_000, np.random.default_rng(0)) == 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_unstable_falsified(backend):
    q = query(linear_unstable(), [(0.9, -0.05), (0.99, 0.0), (0.9, 0.05)])
    v = falsify_region(q, backend)
    assert isinstance(v, Falsified)
    x = np.array(v.states[0])
    assert Annulus(0.1, 1.0).contains(x) and EYE.gradient(x) @ x > 0
    lam = q.simplex.barycentric(x)
    assert np.all(lam >= -1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_budget_gives_centroid(backend):
    # a root box that can neither be discarded nor yield a witness
    q = query(linear_stable(), [(0.3, 0.0), (1.0, 0.0), (0.3, 0.7)], budget=0)
    v = falsify_region(q, backend)
    assert isinstance(v, Unknown) and v.splits == 0
    assert np.allclose(v.centroid, np.mean(q.simplex.coords, axis=0))


def test_classify_examples():
    assert isinstance(classify_counterexample(EYE, (1.0, 0.0), (1.0, 0.0)), TrueCounterexample)
    assert isinstance(classify_counterexample(EYE, (1.0, 0.0), (-1.0, 0.0)), RefinementOnly)
    ind = Candidate.from_matrix(Q2, np.diag([1.0, -1.0]))
    assert isinstance(classify_counterexample(ind, (0.0, 1.0), (0.0, 1.0)), TrueCounterexample)


@pytest.fixture(scope="module")
def vdp_theta():
    from bblyap.cegis import CegisConfig, Found, run
    out = run(CegisConfig(system="vanderpol"))
    assert isinstance(out, Found)
    return out.candidate.theta_array


def test_proven_unsat_survives_probe(vdp_theta):
    rng = np.random.default_rng(62)
    sys_ = vanderpol()
    proven = 0
    for i in range(60):
        th = vdp_theta + (0 if i % 2 else rng.normal(scale=0.05, size=3))
        q = random_query(rng, sys_, th, Q2, size=rng.choice([0.01, 0.03]))
        if isinstance(falsify_region(q), ProvenUnsat):
            proven += 1
            assert probe_contradictions(q, sys_, 10_000, rng) == 0
    assert proven >= 20


def test_witnesses_valid():
    rng = np.random.default_rng(63)
    found = 0
    for name in ("vanderpol", "linear_unstable", "stanley"):
        sys_ = get_system(name)
        for _ in range(40):
            th = rng.uniform(-0.5, 0.5, 3)
            q = random_query(rng, sys_, th, Q2, size=0.1)
            for backend in BACKENDS:
                v = falsify_region(q, backend)
                if not isinstance(v, Falsified):
                    continue
                found += 1
                x = np.array(v.states[0])
                assert q.roi.contains(x)
                for xb, yb in q.witnesses:
                    assert lie_upper_bound(q.candidate, x, (xb, yb), q.lip) >= -1e-12
    assert found > 0


def test_adding_witness_keeps_unsat(vdp_theta):
    rng = np.random.default_rng(64)
    sys_ = vanderpol()
    checked = 0
    for _ in range(40):
        q = random_query(rng, sys_, vdp_theta, Q2, size=0.02)
        if not isinstance(falsify_region(q), ProvenUnsat):
            continue
        x = rng.uniform(-1.2, 1.2, (3, 2))
        extra = tuple(Sample(tuple(a), tuple(b)) for a, b in zip(x, sys_.dynamics(x)))
        q2 = RegionalQuery(q.candidate, q.simplex, q.vertex_samples, q.lip, q.roi, q.budget, extra)
        for backend in BACKENDS:
            assert isinstance(falsify_region(q2, backend), ProvenUnsat)
        checked += 1
    assert checked > 5


def _seeded(system, per_axis=6):
    lo, hi = system.default_roi.bounding_box()
    X = grid_states(lo, hi, per_axis)
    return init_cover(X, [tuple(y) for y in system.dynamics(X)])


def test_verify_all_proven_and_cache():
    sys_ = linear_stable()
    roi = Annulus(0.1, 1.0)
    lo, hi = roi.bounding_box()
    X = grid_states(lo, hi, 41)
    cov = init_cover(X, [tuple(y) for y in sys_.dynamics(X)])
    cache = UnsatCache()
    r = verify_candidate(EYE, cov, roi, sys_, cache=cache)
    assert not r.new_states and not r.falsified
    assert all(isinstance(v, ProvenUnsat) for v in r.verdicts.values())
    again = verify_candidate(EYE, cov, roi, sys_, cache=cache)
    assert again.n_queries == 0 and again.cache_hits == r.n_regions
    other = Candidate.from_matrix(Q2, np.diag([1.0, 0.9]))
    assert verify_candidate(other, cov, roi, sys_, cache=cache).cache_hits == 0


def test_verify_unstable_falsifies():
    sys_ = linear_unstable()
    cov = _seeded(sys_)
    r = verify_candidate(EYE, cov, sys_.default_roi, sys_)
    assert r.falsified
    xs = {s.x for s in r.true_counterexamples}
    assert xs and xs <= set(r.new_states)
    assert r.new_states == sorted(r.new_states)


def test_parallel_matches_serial():
    sys_ = vanderpol()
    cand = Candidate.from_matrix(Q2, np.array([[1.0, 0.2], [0.2, 0.8]]))
    a = verify_candidate(cand, _seeded(sys_), sys_.default_roi, sys_, jobs=1)
    b = verify_candidate(cand, _seeded(sys_), sys_.default_roi, sys_, jobs=8)
    assert a.new_states == b.new_states
    assert {k: type(v) for k, v in a.verdicts.items()} == {k: type(v) for k, v in b.verdicts.items()}


def test_tanh_candidate_uses_generic_path():
    sys_ = linear_stable()
    c = Candidate.from_matrix(TanhQuadratic(2), np.eye(2))
    q = query(sys_, [(0.5, 0.0), (0.51, 0.0), (0.5, 0.01)], cand=c)
    assert isinstance(falsify_region(q), ProvenUnsat)
    q = query(linear_unstable(), [(0.9, -0.05), (0.99, 0.0), (0.9, 0.05)], cand=c)
    assert isinstance(falsify_region(q), Falsified)


def test_jsonl_trace(tmp_path):
    sys_ = linear_unstable()
    path = tmp_path / "t.jsonl"
    tr = JsonlTrace(str(path))
    r = verify_candidate(EYE, _seeded(sys_), sys_.default_roi, sys_, trace=tr)
    tr.close()
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(recs) == r.n_queries
    assert {"simplex", "vertices", "verdict", "splits", "seconds"} <= set(recs[0])
