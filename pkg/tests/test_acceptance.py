"""Acceptance criteria, one PASS/FAIL line each (shown in the terminal summary).

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import functools
import math
import time

import numpy as np
import pytest

from bblyap import cegis
from bblyap.cegis import CegisConfig, Found, NoLyapunovInSpace, compute_diam_threshold, compute_max_k, max_k_holds
from bblyap.cli import build_report, canonical_report, validate_candidate
from bblyap.cover import init_cover
from bblyap.learner import CompatibilityPolytope, analytic_center
from bblyap.sysmodel import Annulus, get_system, linear_stable
from bblyap.template import Candidate, Quadratic, TanhQuadratic, evaluate_v, gradient_v, lie_features, v_features
from bblyap.verifier import ProvenUnsat, falsify_region, lie_upper_bound

import conftest
from oracles import circumsphere_violation, probe_contradictions, random_query

ROI1 = Annulus(0.1, 1.0)
BENCH = ["linear_stable", "linear_unstable", "vanderpol", "stanley", "linear_stable_3d"]


def criterion(label):
    """Record one PASS/FAIL line for the wrapped test; failures still fail the test."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*a, **kw):
            t0 = time.perf_counter()
            try:
                detail = fn(*a, **kw)
            except BaseException as e:
                msg = str(e).splitlines()[0] if str(e) else type(e).__name__
                conftest.ACCEPTANCE.append(f"FAIL  {label}: {msg[:160]}")
                raise
            conftest.ACCEPTANCE.append(f"PASS  {label}: {detail} [{time.perf_counter() - t0:.1f} s]")
        return wrapper
    return deco


def check(ok, msg):
    if not ok:
        raise AssertionError(msg)


def _run(cfg):
    h = {}
    t0 = time.perf_counter()
    out = cegis.run(cfg, h)
    return out, h["state"], time.perf_counter() - t0


@pytest.fixture(scope="module")
def linear_runs():
    return {j: _run(CegisConfig(system="linear_stable", roi=ROI1, delta=1e-4, max_k=40, jobs=j)) for j in (1, 8)}


@pytest.fixture(scope="module")
def unstable_runs():
    return {j: _run(CegisConfig(system="linear_unstable", roi=ROI1, delta=1e-4, max_k=40, jobs=j)) for j in (1, 8)}


@pytest.fixture(scope="module")
def vdp_run():
    return _run(CegisConfig(system="vanderpol", roi=Annulus(0.2, 1.2), delta=1e-4, max_k=40,
                            grid_per_axis=6, jobs=8))


@criterion("1 linear end to end")
def test_criterion_1(linear_runs):
    out, st, secs = linear_runs[1]
    check(isinstance(out, Found), f"outcome {type(out).__name__}")
    check(out.stats.k <= 5, f"k={out.stats.k}")
    check(out.stats.samples_used <= 2000, f"{out.stats.samples_used} samples")
    rep = validate_candidate(out.candidate, st.system, ROI1, trials=100_000)
    check(rep.n_violations == 0, f"{rep.n_violations} violations")
    check(secs < 30, f"{secs:.1f} s")
    return (f"Found k={out.stats.k}, {out.stats.samples_used} samples, 0/{rep.n_points} violations, "
            f"run {secs:.2f} s")


@criterion("2 Van der Pol envelope")
def test_criterion_2(vdp_run):
    out, st, secs = vdp_run
    check(isinstance(out, Found), f"outcome {type(out).__name__}")
    rep = validate_candidate(out.candidate, st.system, st.roi, trials=100_000)
    check(rep.n_violations == 0, f"{rep.n_violations} violations")
    check(st.system.lipschitz == 4.632, "L")
    check(out.stats.samples_used <= 25_000, f"{out.stats.samples_used} samples")
    check(out.stats.n_simplices <= 50_000, f"{out.stats.n_simplices} simplices")
    check(secs < 600, f"{secs:.1f} s")
    s = out.stats
    return (f"Found k={s.k} |S_L|={s.n_learn} |S|={s.n_samples} |C|={s.n_simplices} "
            f"samples={s.samples_used}, 0/{rep.n_points} violations, run {secs:.2f} s")


@criterion("3 unstable system rejected")
def test_criterion_3(unstable_runs):
    out, _, _ = unstable_runs[1]
    check(isinstance(out, NoLyapunovInSpace), f"outcome {type(out).__name__}")
    check(out.stats.k <= 3, f"k={out.stats.k}")
    check(out.stats.samples_used <= 200, f"{out.stats.samples_used} samples")
    return f"NoLyapunovInSpace k={out.stats.k}, {out.stats.samples_used} samples"


@criterion("4 threshold and iteration formulas")
def test_criterion_4():
    v = compute_diam_threshold(1e-4, 2)
    exact = 5e-5 * math.sqrt(3.0)
    # the quoted 8.660e-5 is the closed form rounded to four figures; it sits
    # 2.5e-9 from the exact value, so the 1e-9 tolerance is applied to the exact one
    check(abs(v - exact) <= 1e-9, f"diam_thres={v!r} vs {exact!r}")
    check(f"{v:.3e}" == "8.660e-05", f"diam_thres={v!r} does not round to 8.660e-05")
    rng = np.random.default_rng(4)
    pairs = []
    for _ in range(20):
        g, d = float(rng.uniform(0.05, 0.95)), int(rng.integers(1, 11))
        k = compute_max_k(g, d)
        check(max_k_holds(g, d, k), f"bound fails at k={k} for {(g, d)}")
        check(k == 0 or not max_k_holds(g, d, k - 1), f"k={k} not minimal for {(g, d)}")
        pairs.append(k)
    return f"diam_thres={v:.6e} (= 8.660e-05 to 4 figures, {abs(v - 8.660e-5):.1e} from the literal); max_k minimal on 20 pairs (k from {min(pairs)} to {max(pairs)})"


@criterion("5a LieUB soundness")
def test_criterion_5a():
    rng = np.random.default_rng(51)
    worst = np.inf
    for name in BENCH:
        s = get_system(name)
        lo, hi = s.domain
        kinds = (Quadratic(s.dim), TanhQuadratic(s.dim))
        X = rng.uniform(lo, hi, (10_000, s.dim))
        Xb = rng.uniform(lo, hi, (10_000, s.dim))
        F, Fb = s.dynamics(X), s.dynamics(Xb)
        for i in range(10_000):
            kind = kinds[i % 2]
            c = Candidate(kind, rng.uniform(-0.5, 0.5, kind.d))
            slack = lie_upper_bound(c, X[i], (Xb[i], Fb[i]), s.lipschitz) - c.gradient(X[i]) @ F[i]
            worst = min(worst, slack)
    check(worst >= -1e-9, f"slack {worst!r}")
    return f"5 x 10^4 triples, min slack {worst:.3e}"


@criterion("5b ProvenUnsat vs 10^6-point probe")
def test_criterion_5b(vdp_run):
    rng = np.random.default_rng(52)
    theta = vdp_run[0].candidate.theta_array
    vdp, lin3 = get_system("vanderpol"), get_system("linear_stable_3d")
    q3 = Quadratic(3)
    done = bad = 0
    while done < 100:
        if done % 2:
            A = rng.normal(size=(3, 3))
            th = q3.theta_from_matrix(A @ A.T + 0.1 * np.eye(3))
            q = random_query(rng, lin3, th / np.abs(th).max() / 2, q3, size=0.02)
            s = lin3
        else:
            q = random_query(rng, vdp, theta, Quadratic(2), size=float(rng.choice([0.005, 0.02])))
            s = vdp
        if not isinstance(falsify_region(q), ProvenUnsat):
            continue
        done += 1
        bad += probe_contradictions(q, s, 1_000_000, rng)
    check(bad == 0, f"{bad} contradicting probe points")
    return "100 queries (2D and 3D), 0 contradictions"


@criterion("5c empty circumsphere")
def test_criterion_5c():
    rng = np.random.default_rng(53)
    worst = np.inf
    for dim in (2, 3):
        for _ in range(50):
            P = rng.uniform(-1, 1, (100, dim))
            cov = init_cover(P)
            T = [s.vertex_ids for s in cov.simplices()]
            worst = min(worst, circumsphere_violation(cov.points_array(), T))
    check(worst >= -1e-9, f"violation {worst!r}")
    return f"100 instances, min relative clearance {worst:.3e}"


@criterion("5d analytic center closed form")
def test_criterion_5d():
    A = np.array([[1.0], [-1.0], [1.0]])
    p = CompatibilityPolytope(type("K", (), {"d": 1})(), A, np.array([0.5, 0.5, 0.0]))
    th = analytic_center(p).theta[0]
    err = abs(th + 1 / (2 * math.sqrt(3)))
    check(err <= 1e-6, f"error {err!r}")
    return f"theta*={th:.12f}, error {err:.1e}"


@criterion("5e feature linearity")
def test_criterion_5e():
    rng = np.random.default_rng(55)
    worst = 0.0
    for i in range(10_000):
        kind = (Quadratic(2), TanhQuadratic(2), Quadratic(3), TanhQuadratic(3))[i % 4]
        c = Candidate(kind, rng.uniform(-0.5, 0.5, kind.d))
        x, y = rng.normal(scale=2.0, size=(2, kind.n))
        phi, psi = v_features(kind, x), lie_features(kind, x, y)
        th = c.theta_array
        e1 = abs(phi @ th - evaluate_v(c, x)) / max(np.abs(phi * th).sum(), 1e-300)
        e2 = abs(psi @ th - gradient_v(c, x) @ y) / max(np.abs(psi * th).sum(), 1e-300)
        worst = max(worst, e1, e2)
    check(worst <= 1e-12, f"relative error {worst!r}")
    return f"10^4 inputs, max relative error {worst:.2e}"


@criterion("5f parallel determinism")
def test_criterion_5f(linear_runs, unstable_runs):
    for name, runs in (("criterion 1", linear_runs), ("criterion 3", unstable_runs)):
        texts = []
        for j in (1, 8):
            out, st, _ = runs[j]
            cfg = CegisConfig(system=st.system.name, roi=ROI1, max_k=40, jobs=j)
            texts.append(canonical_report(build_report(cfg, out, st)).encode())
        check(texts[0] == texts[1], f"{name} reports differ")
    return "1 vs 8 workers byte-identical for criteria 1 and 3"


def _cuts_hold(st):
    kind = Quadratic(st.system.dim)
    checked = 0
    for prev, nxt in zip(st.trace, st.trace[1:]):
        learn = [s for s in st.samples[:nxt["n_samples"]] if st.roi.contains(s.x)]
        p = CompatibilityPolytope.from_samples(kind, learn)
        check(p.n_rows == nxt["rows"], f"polytope for k={nxt['k']} not rebuilt from the trace")
        check(not p.contains(np.array(prev["theta"])), f"theta_{prev['k']} still feasible")
        checked += 1
    return checked


@criterion("6 cutting-plane progress")
def test_criterion_6(vdp_run):
    n_main = _cuts_hold(vdp_run[1])
    # the main run stops at k=1; a coarse seed grid forces several candidates
    _, st, _ = _run(CegisConfig(system="vanderpol", grid_per_axis=2, max_k=40))
    n_extra = _cuts_hold(st)
    check(n_extra >= 1, "coarse run produced a single candidate")
    return (f"{n_main} falsified candidates in the criterion-2 trace (k={vdp_run[0].stats.k}); "
            f"{n_extra} checked on the 2x2-seed run")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
