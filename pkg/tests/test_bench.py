import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnrl.bench import (BoundConstants, bound_violations, cost_ratio, make_quadratic,
                        rosenbrock_eval, run_convex_bench, run_rosenbrock, theorem1_bound)
from qnrl.errors import DivergedError, InvalidInputError


def test_forced_spectrum_gives_identity():
    p = make_quadratic(0, 2, 1.0, 1.0)
    np.testing.assert_allclose(p.A, np.eye(2), atol=1e-12)


def test_eigenvalues_span_requested_range():
    for seed in range(10):
        n = 2 + seed % 9
        ev = np.linalg.eigvalsh(make_quadratic(seed, n, 0.5, 7.0).A)
        assert ev[0] == pytest.approx(0.5, abs=1e-10) and ev[-1] == pytest.approx(7.0, abs=1e-10)
        assert np.all(ev >= 0.5 - 1e-10) and np.all(ev <= 7.0 + 1e-10)


def test_minimizer_and_component_noise():
    p = make_quadratic(3, 8, 1.0, 10.0, partitions=6)
    assert np.max(np.abs(p.grad(p.w_star))) < 1e-12
    # components average back to the full objective
    w = p.w_star + 1.0
    avg = np.mean([p.grad(w, [i]) for i in range(6)], axis=0)
    np.testing.assert_allclose(avg, p.grad(w), atol=1e-12)
    assert p.loss(w, np.arange(6)) == pytest.approx(p.loss(w), abs=1e-12)
    np.testing.assert_allclose(p.b_vec, p.A @ p.w_star)


@pytest.mark.parametrize("args", [(0, 1, 1.0, 1.0), (0, 3, 2.0, 1.0), (0, 3, 0.0, 1.0),
                                  (0, 3, 1.0, 2.0, 0)])
def test_invalid_quadratics(args):
    with pytest.raises(InvalidInputError):
        make_quadratic(*args)


def test_bound_examples():
    c = BoundConstants(lam=1.0, Lam=2.0, lam_p=1.0, Lam_p=2.0, eta=1.0, alpha=0.1)
    assert theorem1_bound(0, 1.0, c) == 1.0
    assert c.residual == pytest.approx(0.02, rel=1e-15)
    assert theorem1_bound(10, 1.0, c) == pytest.approx(0.125226698752, abs=1e-12)
    assert theorem1_bound(2000, 1.0, c) == pytest.approx(c.residual, rel=1e-12)


def test_inadmissible_step_rejected():
    with pytest.raises(InvalidInputError):
        BoundConstants(1.0, 2.0, 1.0, 2.0, 1.0, alpha=0.5)
    with pytest.raises(InvalidInputError):
        BoundConstants(2.0, 1.0, 1.0, 2.0, 1.0, alpha=0.1)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(1e-4, 0.49), gap0=st.floats(1.0, 100.0), eta=st.floats(0.01, 1.0))
def test_bound_monotone_when_gap_exceeds_residual(alpha, gap0, eta):
    c = BoundConstants(1.0, 1.0, 1.0, 1.0, eta, alpha)
    if gap0 > c.residual:
        seq = [theorem1_bound(k, gap0, c) for k in range(50)]
        assert all(b <= a for a, b in zip(seq, seq[1:]))


def test_full_batch_exact_search_solves_in_n_steps():
    for n in (2, 5, 10, 20):
        for seed in range(3):
            p = make_quadratic(seed, n, 1.0, 10.0)
            res = run_convex_bench(p, "lbfgs-exact", m=n + 5, iterations=n + 5,
                                   batch_fraction=1.0, seed=seed)
            dense = np.linalg.solve(p.A, p.b_vec)  # closed-form minimizer
            assert np.allclose(dense, p.w_star)
            assert min(res.gaps) < 1e-10


def test_full_batch_wolfe_steps_decrease_gap():
    p = make_quadratic(1, 10, 1.0, 10.0)
    res = run_convex_bench(p, "lbfgs-wolfe", iterations=25, batch_fraction=1.0, seed=1)
    for k, ok in enumerate(res.wolfe_flags):
        if ok and res.gaps[k] > 1e-14:
            assert res.gaps[k + 1] < res.gaps[k]


def test_stochastic_bound_holds():
    p = make_quadratic(0, 20, 1.0, 10.0)
    res = run_convex_bench(p, "lbfgs-fixed-alpha", alpha=0.2, iterations=200, seed=0)
    count, bounds = bound_violations(res, p, 0.2)
    assert count == 0 and len(bounds) == 201


def test_vanishing_step_is_near_stationary():
    p = make_quadratic(0, 10, 1.0, 10.0)
    res = run_convex_bench(p, "lbfgs-fixed-alpha", alpha=1e-6, iterations=10)
    assert abs(res.gaps[-1] - res.gaps[0]) < 0.01 * res.gaps[0]


def test_divergence_detected():
    p = make_quadratic(0, 5, 1.0, 10.0)
    with pytest.raises(DivergedError):
        run_convex_bench(p, "sgd", alpha=1.0, iterations=100)


def test_unknown_optimizer():
    with pytest.raises(InvalidInputError):
        run_convex_bench(make_quadratic(0, 3, 1.0, 2.0), "adam")


def test_cost_ratio():
    assert cost_ratio(4, 5, 32, 2048, 20) == 0.6298828125
    assert round(cost_ratio(4, 5, 32, 2048, 20), 2) == 0.63
    assert cost_ratio(4, 5, 32, 2048, 0) == 4 * 5 / 32
    first = 4 * 5 / 32
    assert cost_ratio(4, 5, 32, 4096, 20) - first == pytest.approx(
        0.5 * (cost_ratio(4, 5, 32, 2048, 20) - first), rel=1e-15)
    rng = np.random.default_rng(0)
    for f, z, bs, b, m in rng.uniform(0.5, 100, size=(100, 5)):
        ref = f * z / bs + 4 * f * m / (b * bs)
        assert cost_ratio(f, z, bs, b, m) == pytest.approx(ref, rel=1e-15)


def test_rosenbrock_values():
    f, g = rosenbrock_eval([1.0, 1.0])
    assert f == 0.0 and np.all(g == 0.0)
    f, g = rosenbrock_eval([0.0, 0.0])
    assert f == 1.0 and np.array_equal(g, [-2.0, 0.0])


def test_rosenbrock_gradient_finite_differences():
    rng = np.random.default_rng(1)
    for w in rng.uniform(-2, 2, size=(100, 2)):
        _, g = rosenbrock_eval(w)
        fd = np.array([(rosenbrock_eval(w + e)[0] - rosenbrock_eval(w - e)[0]) / 2e-5
                       for e in np.eye(2) * 1e-5])
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0) < 1e-6


def test_rosenbrock_converges():
    res = run_rosenbrock()
    assert res.converged and res.iterations <= 200 and res.grad_norm < 1e-5
