import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from gridfreq.qp import INFEASIBLE, OPTIMAL, QpProblem, kkt_residuals, solve_qp


def test_lower_bound_active():
    # min x^2  s.t.  x >= 1
    sol = solve_qp(QpProblem([[1.0]], [0.0], [[-1.0]], [-1.0]))
    assert sol.status == OPTIMAL and sol.polished
    assert sol.x[0] == pytest.approx(1.0, abs=1e-12)
    assert sol.objective == pytest.approx(1.0, abs=1e-12)


def test_unconstrained_minimum_inside_box():
    # min (x-0.3)^2 + 2(y+0.1)^2 on the unit box; optimum interior
    K = np.diag([1.0, 2.0])
    q = np.array([-0.6, 0.4])
    G = np.vstack([np.eye(2), -np.eye(2)])
    sol = solve_qp(QpProblem(K, q, G, np.ones(4)))
    np.testing.assert_allclose(sol.x, [0.3, -0.1], atol=1e-12)


def test_equality_constraint():
    # min x^2 + y^2  s.t. x + y = 1, x <= 0.2  ->  (0.2, 0.8)
    sol = solve_qp(QpProblem(np.eye(2), None, [[1.0, 0.0]], [0.2], A=[[1.0, 1.0]], b=[1.0]))
    np.testing.assert_allclose(sol.x, [0.2, 0.8], atol=1e-12)


def test_pinned_pair_is_handled():
    # x <= 0 and -x <= 0 pin x to zero (filter box with alpha = 0)
    K = np.diag([1.0, 1.0])
    q = np.array([-2.0, 1.0])
    G = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])
    sol = solve_qp(QpProblem(K, q, G, np.array([0.0, 0.0, 0.5])))
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.x, [0.0, -0.5], atol=1e-12)


def test_infeasible_detected():
    G = np.array([[1.0], [-1.0]])
    sol = solve_qp(QpProblem([[1.0]], [0.0], G, np.array([-1.0, -1.0])))
    assert sol.status == INFEASIBLE


def test_problem_validation():
    with pytest.raises(ValueError, match="symmetric"):
        QpProblem([[1.0, 1.0], [0.0, 1.0]], None, np.zeros((0, 2)), [])
    with pytest.raises(ValueError, match="disagree"):
        QpProblem(np.eye(2), None, np.zeros((2, 2)), [1.0])


def test_dict_round_trip():
    prob = QpProblem(np.diag([1.0, 3.0]), [0.1, -0.2], [[1.0, 1.0]], [0.5])
    again = QpProblem.from_dict(prob.to_dict())
    for a in ("K", "q", "G", "w", "A", "b"):
        np.testing.assert_array_equal(getattr(prob, a), getattr(again, a))


def _random_qp(seed, n, m):
    r = np.random.default_rng(seed)
    L = r.normal(size=(n, n))
    K = L @ L.T / n + 0.1 * np.eye(n)
    q = r.normal(size=n)
    G = r.normal(size=(m, n))
    x_feas = r.normal(size=n) * 0.5
    w = G @ x_feas + r.uniform(0.0, 1.0, size=m)
    return QpProblem(K, q, G, w)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 14))
def test_random_qp_matches_slsqp(seed, n, m):
    prob = _random_qp(seed, n, m)
    sol = solve_qp(prob)
    assert sol.status == OPTIMAL
    primal, _ = kkt_residuals(prob, sol.x, sol.z)
    assert primal < 1e-7
    ref = minimize(
        prob.objective,
        np.zeros(n),
        jac=lambda x: 2 * prob.K @ x + prob.q,
        constraints=[{"type": "ineq", "fun": lambda x: prob.w - prob.G @ x, "jac": lambda x: -prob.G}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    # the IPM optimum is never worse than the reference, and they agree
    assert sol.objective <= ref.fun + 1e-7
    np.testing.assert_allclose(sol.x, ref.x, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_kkt_conditions(seed):
    prob = _random_qp(seed, 4, 10)
    sol = solve_qp(prob)
    primal, stat = kkt_residuals(prob, sol.x, sol.z)
    assert primal < 1e-7
    assert stat < 1e-6
    assert sol.z.min() >= 0


def test_deterministic():
    prob = _random_qp(7, 5, 12)
    a, b = solve_qp(prob), solve_qp(prob)
    assert a.x.tobytes() == b.x.tobytes()
