"""Independent float oracles shared by unit and acceptance tests."""
import numpy as np


def circumsphere_violation(P, T):
    """Smallest (|p - c|^2 - r^2) / r^2 over all simplices and points; >= -1e-9 means empty."""
    P = np.asarray(P, dtype=float)
    worst = np.inf
    for t in T:
        S = P[list(t)]
        A = 2.0 * (S[1:] - S[0])
        rhs = np.sum(S[1:] ** 2, axis=1) - np.sum(S[0] ** 2)
        c = np.linalg.solve(A, rhs)
        r2 = np.sum((S[0] - c) ** 2)
        d2 = np.sum((P - c) ** 2, axis=1)
        d2[list(t)] = np.inf
        worst = min(worst, float(((d2 - r2) / r2).min()))
    return worst


def barycentric_batch(S, X):
    """Barycentric coordinates of many points X in simplex S."""
    T = (S[1:] - S[0]).T
    lam = np.linalg.solve(T, (X - S[0]).T).T
    return np.hstack([1.0 - lam.sum(axis=1, keepdims=True), lam])


def sample_simplex(rng, S, k):
    """k uniform points in the simplex with vertex rows S."""
    w = rng.dirichlet(np.ones(len(S)), size=k)
    return w @ S, w


def lie_ub_batch(G, lip, X, xb, yb):
    """LieUB for a batch of states with gradients G against one vertex sample."""
    return np.linalg.norm(G, axis=1) * lip * np.linalg.norm(X - xb, axis=1) + G @ yb


def random_query(rng, system, theta, kind, size=0.05, roi=None, budget=2000):
    """A query on a random small simplex centred inside the ROI."""
    from bblyap.cover import SimplexRegion
    from bblyap.sysmodel import Sample, regional_lipschitz
    from bblyap.template import Candidate
    from bblyap.verifier import RegionalQuery

    roi = roi or system.default_roi
    lo, hi = roi.bounding_box()
    n = system.dim
    while True:
        c = rng.uniform(lo, hi)
        if not roi.contains(c):
            continue
        S = c + rng.uniform(-size, size, (n + 1, n))
        if abs(np.linalg.det(S[1:] - S[0])) > 1e-3 * size ** n:
            break
    reg = SimplexRegion(0, tuple(range(n + 1)), S)
    Y = system.dynamics(S)
    samples = tuple(Sample(tuple(x), tuple(y)) for x, y in zip(S, Y))
    return RegionalQuery(Candidate(kind, tuple(theta)), reg, samples, regional_lipschitz(system, reg), roi, budget)


def probe_contradictions(q, system, k, rng):
    """Points of simplex ∩ ROI where every vertex LieUB is >= 0 (plain float)."""
    S = np.asarray(q.simplex.coords)
    X, _ = sample_simplex(rng, S, k)
    X = np.vstack([X, S])
    X = X[q.roi.contains_batch(X)]
    if not len(X):
        return 0
    G = q.candidate.kind.gradient_batch(q.candidate.theta_array, X)
    for xb, yb in q.witnesses:
        keep = lie_ub_batch(G, q.lip, X, np.asarray(xb), np.asarray(yb)) >= 0.0
        X, G = X[keep], G[keep]
    return len(X)
