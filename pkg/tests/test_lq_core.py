import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from perturb_lq.errors import DimensionMismatch, NonPsdCost, NonPsdInitial, SingularInnerMatrix
from perturb_lq.lq_core import InitialState, LqProblem, solve_classical, value_at

from conftest import random_problem


def scalar(T, A, B, Q, R, QT):
    return LqProblem(T=T, A=[[A]], B=[[B]], D=[[0.0]], Q=[[Q]], R=[[R]], QT=[[QT]])


def test_scalar_one_step_hand_values():
    sol = solve_classical(scalar(1, 1.0, 1.0, 0.0, 1.0, 1.0))
    assert sol.P[1, 0, 0] == 1.0
    assert sol.K_star[0, 0, 0] == pytest.approx(0.5, abs=1e-15)
    assert sol.P[0, 0, 0] == pytest.approx(0.5, abs=1e-15)


def test_no_control_authority(rng):
    p = random_problem(rng, 3, 2, 1, 4).replace(B=np.zeros((3, 2)))
    sol = solve_classical(p)
    assert np.all(sol.K_star == 0)
    for t in range(p.T):
        expect = p.Q[t] + p.A[t].T @ sol.P[t + 1] @ p.A[t]
        np.testing.assert_allclose(sol.P[t], expect, rtol=1e-13, atol=1e-13)


def test_gain_matches_stagewise_argmin(rng):
    p = random_problem(rng, 3, 2, 1, 5)
    sol = solve_classical(p)
    x = rng.standard_normal(3)
    for t in range(p.T):
        P1 = sol.P[t + 1]

        def stage(u):
            y = p.A[t] @ x + p.B[t] @ u
            return u @ p.R[t] @ u + y @ P1 @ y

        # coarse grid, then local polish
        g = np.linspace(-4, 4, 41)
        U = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        u0 = U[np.argmin([stage(u) for u in U])]
        u_opt = minimize(stage, u0, method="BFGS", options={"gtol": 1e-12}).x
        np.testing.assert_allclose(-sol.K_star[t] @ x, u_opt, atol=1e-6)


def test_terminal_and_symmetry(rng):
    p = random_problem(rng, 3, 2, 2, 5)
    sol = solve_classical(p)
    assert np.array_equal(sol.P[-1], p.QT)
    assert np.all(sol.r == 0) and np.all(sol.q == 0) and np.all(sol.L_star == 0)
    for P in sol.P:
        assert np.abs(P - P.T).max() <= 1e-10 * np.abs(P).max()
        assert np.linalg.eigvalsh(P).min() >= -1e-10 * np.linalg.norm(P, 2)


def test_value_at():
    sol = solve_classical(scalar(2, 1.2, 0.7, 1.0, 0.5, 2.0))
    assert value_at(sol, 1, 0.0) == sol.q[1]
    assert value_at(sol, 2, 3.0) == pytest.approx(9.0 * 2.0)
    assert value_at(sol, 0, 1.5) == pytest.approx(1.5**2 * sol.P[0, 0, 0])


def test_simulated_cost_equals_value(rng):
    p = random_problem(rng, 3, 2, 1, 5)
    sol = solve_classical(p)
    x0 = rng.standard_normal(3)
    x, J = x0.copy(), 0.0
    for t in range(p.T):
        u = sol.control(t, x)
        J += x @ p.Q[t] @ x + u @ p.R[t] @ u
        x = p.A[t] @ x + p.B[t] @ u
    J += x @ p.QT @ x
    assert J == pytest.approx(value_at(sol, 0, x0), rel=1e-9)


@given(st.integers(0, 10_000))
def test_gain_is_first_order_stationary(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, 2, 2, 1, 3)
    sol = solve_classical(p)
    x = rng.standard_normal(2)
    for t in range(p.T):
        def bellman(K):
            u = -K @ x
            y = p.A[t] @ x + p.B[t] @ u
            return u @ p.R[t] @ u + y @ sol.P[t + 1] @ y

        base = bellman(sol.K_star[t])
        d = rng.standard_normal((2, 2))
        assert bellman(sol.K_star[t] + 1e-3 * d / np.linalg.norm(d)) >= base - 1e-12


def test_errors():
    with pytest.raises(NonPsdCost):
        scalar(1, 1.0, 1.0, -1.0, 1.0, 1.0)
    with pytest.raises(NonPsdCost):
        scalar(1, 1.0, 1.0, 1.0, 0.0, 1.0)
    with pytest.raises(DimensionMismatch):
        LqProblem(T=2, A=[np.eye(2)] * 3, B=np.eye(2), D=np.eye(2), Q=np.eye(2), R=np.eye(2), QT=np.eye(2))
    with pytest.raises(DimensionMismatch):
        LqProblem(T=1, A=np.eye(2), B=np.ones((3, 1)), D=np.eye(2), Q=np.eye(2), R=np.eye(1), QT=np.eye(2))
    with pytest.raises(NonPsdInitial):
        InitialState.gaussian([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])


def test_ill_conditioned_inner_matrix():
    p = LqProblem(T=1, A=[[1.0]], B=[[1e7, 0.0]], D=[[0.0]], Q=[[1.0]], R=np.diag([1e-6, 1e-6]), QT=[[1.0]])
    with pytest.raises(SingularInnerMatrix):
        solve_classical(p)


def test_json_round_trip(rng):
    p = random_problem(rng, 2, 1, 2, 3)
    q = LqProblem.from_dict(json.loads(json.dumps(p.to_dict())))
    for name in ("A", "B", "D", "Q", "R", "QT"):
        assert np.array_equal(getattr(p, name), getattr(q, name))
    init = InitialState.empirical(rng.standard_normal((5, 2)))
    back = InitialState.from_dict(json.loads(json.dumps(init.to_dict())))
    np.testing.assert_array_equal(back.samples, init.samples)
