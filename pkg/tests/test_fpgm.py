import numpy as np
import pytest

from deepmf.errors import NumericalError
from deepmf.fpgm import (
    FpgmConfig,
    StepMode,
    backtracking_step,
    fpgm_solve,
    momentum,
    next_alpha,
)
from deepmf.projections import project_nonneg

from oracles import nnls_enum

LONG = FpgmConfig(max_inner_iters=20000, rel_tol=0.0)


def quad(a, b):
    return (lambda x: 0.5 * np.vdot(x, a @ x) - np.vdot(b, x), lambda x: a @ x - b,
            float(np.linalg.eigvalsh(a).max()))


def lsq(a, b):
    f = lambda x: 0.5 * np.sum((a @ x - b) ** 2)  # noqa: E731
    g = lambda x: a.T @ (a @ x - b)  # noqa: E731
    return f, g, float(np.linalg.eigvalsh(a.T @ a).max())


def assert_monotone(res, m0, f):
    assert f(res.m) <= f(m0)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_alpha_recurrence():
    a = 0.5
    for _ in range(50):
        a1 = next_alpha(a)
        assert a1 ** 2 == pytest.approx((1 - a1) * a ** 2, rel=1e-12)
        assert 0 < a1 < a
        assert 0 <= momentum(a, a1) < 1
        a = a1


def test_nonneg_orthant_closed_form():
    c = np.array([[1.0], [-2.0]])
    f = lambda x: 0.5 * np.sum((x - c) ** 2)  # noqa: E731
    res = fpgm_solve(np.zeros((2, 1)), f, lambda x: x - c, project_nonneg, 1.0, FpgmConfig(max_inner_iters=100))
    np.testing.assert_allclose(res.m, [[1.0], [0.0]], atol=1e-8)


def test_unconstrained_quadratic_matches_solve(rng):
    for _ in range(5):
        q = rng.standard_normal((4, 4))
        a = q @ q.T + 0.5 * np.eye(4)
        b = rng.standard_normal((4, 1))
        f, g, lip = quad(a, b)
        m0 = np.zeros((4, 1))
        res = fpgm_solve(m0, f, g, lambda x: x, lip, LONG)
        np.testing.assert_allclose(res.m, np.linalg.solve(a, b), atol=1e-6)
        assert_monotone(res, m0, f)


@pytest.mark.parametrize("mode", [StepMode.LIPSCHITZ, StepMode.BACKTRACKING])
def test_nnls_matches_active_set_enumeration(rng, mode):
    cfg = FpgmConfig(max_inner_iters=20000, rel_tol=0.0, step_mode=mode)
    for _ in range(30):
        a = rng.standard_normal((7, 4))
        b = rng.standard_normal(7)
        f, g, lip = lsq(a, b)
        m0 = np.ones(4)
        res = fpgm_solve(m0, f, g, project_nonneg, lip, cfg)
        np.testing.assert_allclose(res.m, nnls_enum(a, b), atol=1e-6)
        assert_monotone(res, m0, f)


def test_restart_keeps_objective_monotone(rng):
    # ill-conditioned problems trigger restarts; accepted values must never rise
    a = np.diag([1e3, 1.0, 1e-2])
    b = rng.standard_normal((3, 1))
    f, g, lip = quad(a, b)
    m0 = 5 * np.ones((3, 1))
    res = fpgm_solve(m0, f, g, lambda x: x, lip, FpgmConfig(max_inner_iters=500, rel_tol=0.0))
    assert res.restarts > 0
    assert_monotone(res, m0, f)


def test_overestimated_step_still_decreases(rng):
    a = rng.standard_normal((6, 3))
    b = rng.standard_normal(6)
    f, g, lip = lsq(a, b)
    m0 = np.zeros(3)
    res = fpgm_solve(m0, f, g, project_nonneg, lip / 50, FpgmConfig(max_inner_iters=40))
    assert f(res.m) <= f(m0)


def test_nonfinite_objective_raises():
    f = lambda x: float("nan") if x[0, 0] > 0.5 else 0.5 * np.sum(x ** 2)  # noqa: E731
    with pytest.raises(NumericalError, match="iteration 1"):
        fpgm_solve(np.zeros((1, 1)), f, lambda x: x - 1.0, lambda x: x, 1.0)


def test_backtracking_examples(rng):
    q = rng.standard_normal((3, 3))
    a = q @ q.T + np.eye(3)
    b = rng.standard_normal((3, 1))
    f, g, lip = quad(a, b)
    y = rng.standard_normal((3, 1))
    cfg = FpgmConfig()
    _, t = backtracking_step(y, f, g, lambda x: x, 1.0 / lip, cfg)
    assert t == 1.0 / lip
    m, t = backtracking_step(y, f, g, lambda x: x, 1e6 / lip, cfg)
    assert 0 < t < 1e6 / lip and f(m) < f(y)
    m, t = backtracking_step(y, lambda x: 3.0, lambda x: np.zeros_like(x), lambda x: x, 2.0, cfg)
    assert t == 2.0
    np.testing.assert_array_equal(m, y)


def test_backtracking_gives_up_unchanged():
    # gradient pointing uphill: no step can satisfy sufficient decrease
    y = np.zeros((1, 1))
    m, t = backtracking_step(y, lambda x: float(x[0, 0]), lambda x: -np.ones_like(x), lambda x: x, 1.0, FpgmConfig())
    assert t == 0.0
    np.testing.assert_array_equal(m, y)


def test_zero_lipschitz_returns_start():
    m0 = np.ones((2, 2))
    res = fpgm_solve(m0, lambda x: 1.0, lambda x: np.zeros_like(x), lambda x: x, 0.0)
    assert res.m is m0 and res.iterations == 0


def test_alpha_beta_match_scalar_reimplementation():
    import math

    a_ref = 0.5
    a = 0.5
    for _ in range(100):
        nxt = (math.sqrt(a_ref ** 4 + 4 * a_ref ** 2) - a_ref ** 2) / 2
        beta_ref = a_ref * (1 - a_ref) / (a_ref ** 2 + nxt)
        a1 = next_alpha(a)
        assert abs(a1 - nxt) <= 1e-15
        assert abs(momentum(a, a1) - beta_ref) <= 1e-15
        a, a_ref = a1, nxt


def test_linear_contraction_on_strongly_convex_quadratic(rng):
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    a = q @ np.diag(np.linspace(1.0, 20.0, 6)) @ q.T
    xstar = rng.standard_normal((6, 1))
    b = a @ xstar
    f, g, lip = quad(a, b)
    m0 = np.zeros((6, 1))
    res = fpgm_solve(m0, f, g, lambda x: x, lip, FpgmConfig(max_inner_iters=200, rel_tol=0.0))
    assert np.linalg.norm(res.m - xstar) < 1e-6 * np.linalg.norm(m0 - xstar)


def test_returned_iterates_are_feasible(rng):
    from deepmf.projections import project_column_simplex

    for proj in (project_nonneg, project_column_simplex):
        a = rng.standard_normal((5, 3))
        b = rng.standard_normal((5, 4))
        f = lambda x: 0.5 * np.sum((a @ x - b) ** 2)  # noqa: E731
        g = lambda x: a.T @ (a @ x - b)  # noqa: E731
        lip = float(np.linalg.eigvalsh(a.T @ a).max())
        for mode in StepMode:
            res = fpgm_solve(proj(np.ones((3, 4))), f, g, proj, lip, FpgmConfig(max_inner_iters=50, step_mode=mode))
            np.testing.assert_allclose(proj(res.m), res.m, atol=1e-12)


def test_stalled_extrapolation_does_not_stop_early():
    # from the origin the momentum point is infeasible and projects back onto
    # the current iterate; the solver must not read that as convergence
    rng = np.random.default_rng(13)
    for _ in range(24):
        a = rng.standard_normal((8, 4))
        b = rng.standard_normal(8)
    f, g, lip = lsq(a, b)
    res = fpgm_solve(np.ones(4), f, g, project_nonneg, lip, FpgmConfig(max_inner_iters=20000, rel_tol=0.0))
    np.testing.assert_allclose(res.m, nnls_enum(a, b), atol=1e-6)
