import math
import threading

import numpy as np
import pytest

from bblyap.sysmodel import (Annulus, BoxShell, SampleBudgetExceeded, evaluate, get_system,
                             global_lipschitz, grid_states, linear_stable, regional_lipschitz,
                             roi_bounding_box, roi_contains, roi_from_dict, stanley, vanderpol)


def test_evaluate_examples():
    vdp = vanderpol()
    assert np.array_equal(evaluate(vdp, (0.0, 0.0)), [0.0, 0.0])
    assert np.array_equal(evaluate(vdp, (1.0, 0.0)), [0.0, 1.0])
    assert np.array_equal(evaluate(linear_stable(), (2.0, -3.0)), [-2.0, 3.0])
    assert vdp.samples_used == 2


def test_equilibrium_at_origin():
    for name in ("linear_stable", "linear_unstable", "vanderpol", "stanley", "linear_stable_3d"):
        s = get_system(name)
        assert np.allclose(s.evaluate(np.zeros(s.dim)), 0.0, atol=1e-15)


def test_global_lipschitz_values():
    assert global_lipschitz(vanderpol()) == 4.632
    assert global_lipschitz(stanley()) == pytest.approx(math.sqrt((1 + 1.75 ** -2) * (2.8 ** 2 + 0.45 ** 2)))
    assert global_lipschitz(stanley()) == pytest.approx(3.266, abs=5e-4)
    assert global_lipschitz(linear_stable()) == pytest.approx(math.sqrt(2))


def test_budget_enforced():
    s = get_system("linear_stable", max_samples=3)
    for _ in range(3):
        s.evaluate((0.5, 0.5))
    with pytest.raises(SampleBudgetExceeded):
        s.evaluate((0.5, 0.5))


def test_domain_checked():
    with pytest.raises(ValueError):
        vanderpol().evaluate((5.0, 0.0))


def test_counter_thread_safe():
    s = get_system("linear_stable", max_samples=10_000)

    def work():
        for _ in range(500):
            s.evaluate((0.1, 0.2))

    ts = [threading.Thread(target=work) for _ in range(8)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert s.samples_used == 4000


def test_evaluate_deterministic():
    s = stanley()
    x = (0.3, -0.2)
    assert s.evaluate(x).tobytes() == s.evaluate(x).tobytes()


@pytest.mark.parametrize("name", ["linear_stable", "linear_unstable", "vanderpol", "stanley", "linear_stable_3d"])
def test_lipschitz_bound_holds_on_random_pairs(name):
    s = get_system(name)
    lo, hi = s.domain
    rng = np.random.default_rng(1)
    X = rng.uniform(lo, hi, (10_000, s.dim))
    Z = rng.uniform(lo, hi, (10_000, s.dim))
    lhs = np.linalg.norm(s.dynamics(X) - s.dynamics(Z), axis=1)
    rhs = s.lipschitz * np.linalg.norm(X - Z, axis=1)
    assert np.all(lhs <= rhs + 1e-12)


def test_regional_lipschitz():
    lin = linear_stable()
    assert regional_lipschitz(lin, np.array([[0.5, 0.0], [0.6, 0.0], [0.5, 0.1]])) == pytest.approx(math.sqrt(2))
    vdp = vanderpol()
    near = regional_lipschitz(vdp, np.array([[0.2, 0.0], [0.25, 0.0], [0.2, 0.05]]))
    assert near <= 4.632
    # independent oracle: sup of the Jacobian's Frobenius norm on a fine grid of the box
    g = grid_states([0.2, 0.0], [0.25, 0.05], 50)
    fro = np.sqrt(1 + (1 + 2 * g[:, 0] * g[:, 1]) ** 2 + (g[:, 0] ** 2 - 1) ** 2)
    assert fro.max() <= near
    s = stanley()
    assert regional_lipschitz(s, ((0.0, 0.0), (1.0, 0.5))) == s.lipschitz


def test_regional_never_exceeds_global():
    vdp = vanderpol()
    rng = np.random.default_rng(2)
    for _ in range(200):
        a = rng.uniform(-1.2, 1.2, 2)
        b = rng.uniform(-1.2, 1.2, 2)
        assert regional_lipschitz(vdp, (np.minimum(a, b), np.maximum(a, b))) <= 4.632


def test_roi_membership():
    ann = Annulus(0.2, 1.2)
    assert roi_contains(ann, (1.0, 0.0))
    assert not roi_contains(ann, (0.1, 0.0))
    box = BoxShell((1e-3, 1e-3), (2.0, math.pi / 4))
    assert roi_contains(box, (1.0, 0.5))
    assert not roi_contains(box, (0.0, 0.0))
    assert not roi_contains(box, (2.5, 0.0))
    lo, hi = roi_bounding_box(ann)
    assert np.array_equal(lo, [-1.2, -1.2]) and np.array_equal(hi, [1.2, 1.2])


def test_roi_validation():
    with pytest.raises(ValueError):
        Annulus(1.3, 1.2)
    with pytest.raises(ValueError):
        Annulus(0.0, 1.0)
    with pytest.raises(ValueError):
        BoxShell((0.0, 1.0), (1.0, 2.0))
    assert roi_from_dict({"type": "annulus", "r_min": 0.1, "r_max": 1.0}) == Annulus(0.1, 1.0)


def test_box_misses_is_conservative():
    rng = np.random.default_rng(3)
    rois = [Annulus(0.2, 1.2), BoxShell((0.1, 0.2), (1.0, 0.8))]
    for roi in rois:
        for _ in range(300):
            c = rng.uniform(-1.4, 1.4, 2)
            w = rng.uniform(0, 0.3, 2)
            lo, hi = c - w, c + w
            if roi.box_misses(lo, hi):
                P = rng.uniform(lo, hi, (400, 2))
                assert not roi.contains_batch(P).any()


def test_grid_includes_corners():
    G = grid_states([-1, -2], [1, 2], 6)
    assert len(G) == 36
    for c in ([-1, -2], [-1, 2], [1, -2], [1, 2]):
        assert any(np.array_equal(g, c) for g in G)
