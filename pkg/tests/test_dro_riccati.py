import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from perturb_lq.ambiguity import broadcast_noise, build_noise_model
from perturb_lq.dro_riccati import (
    adversary_objective,
    dro_policy_eval,
    solve_dro,
    solve_nominal,
    worst_case_noise,
)
from perturb_lq.errors import DimensionMismatch, InvalidConfig, PenaltyTooSmall
from perturb_lq.lq_core import LqProblem, solve_classical, value_at

from conftest import random_noise, random_problem

ONE = [[1.0]]


def scalar_problem(T, Q=1.0):
    return LqProblem(T=T, A=ONE, B=ONE, D=ONE, Q=[[Q]], R=ONE, QT=ONE)


def test_no_noise_loading_reduces_to_classical(rng):
    p = random_problem(rng, 3, 2, 2, 4).replace(D=np.zeros((3, 2)))
    noise = random_noise(rng, 4, 2)
    dro = solve_dro(p, noise, 3.0)
    cl = solve_classical(p)
    np.testing.assert_allclose(dro.riccati.P, cl.P, rtol=0, atol=1e-12)
    np.testing.assert_allclose(dro.K_star, cl.K_star, rtol=0, atol=1e-12)
    assert np.all(dro.riccati.r == 0) and np.all(dro.L_star == 0)
    for s in dro.stages:
        np.testing.assert_allclose(s.Delta, np.eye(3), atol=0)
        np.testing.assert_allclose(s.Delta_prime, np.eye(2) / 3.0, rtol=1e-15)


def test_large_penalty_matches_classical():
    p = scalar_problem(2)
    noise = broadcast_noise([[1.0], [-1.0]], 2)
    dro = solve_dro(p, noise, 1e8)
    cl = solve_classical(p)
    np.testing.assert_allclose(dro.riccati.P, cl.P, atol=1e-6)
    np.testing.assert_allclose(dro.K_star, cl.K_star, atol=1e-6)


def test_hand_instance():
    p = scalar_problem(1, Q=0.0)
    dro = solve_dro(p, broadcast_noise([[0.0]], 1), 2.0)
    st0 = dro.stages[0]
    assert st0.Delta_prime[0, 0] == pytest.approx(1.0)
    assert st0.Delta[0, 0] == pytest.approx(2.0)
    assert dro.K_star[0, 0, 0] == pytest.approx(2.0 / 3.0, abs=1e-15)
    # zero sample and zero r_1 leave no offset
    assert dro.L_star[0, 0] == 0.0
    assert dro_policy_eval(dro, 0, np.array([1.0]))[0] == pytest.approx(-2.0 / 3.0)
    assert np.all(dro_policy_eval(dro, 0, np.zeros(1)) == 0)
    assert np.array_equal(dro.riccati.P[-1], p.QT) and dro.riccati.q[-1] == 0 and np.all(dro.riccati.r[-1] == 0)


def test_worst_case_examples():
    p = scalar_problem(1)
    z = np.zeros((1, 1))
    w = worst_case_noise(0, z, np.zeros(1), [3.0], [1.0], [0.7], 2.0, p)
    assert w[0] == pytest.approx(0.7)
    w = worst_case_noise(0, np.ones((1, 1)), np.zeros(1), [1.0], [0.0], [0.0], 2.0, p)
    assert w[0] == pytest.approx(1.0)
    # stationary point of (1 + w)^2 - 2 w^2
    assert 2 * (1 + w[0]) - 4 * w[0] == pytest.approx(0.0)
    w = worst_case_noise(0, np.ones((1, 1)), np.zeros(1), [0.0], [0.0], [0.0], 2.0, p)
    assert w[0] == 0.0


def _stage_setup(seed):
    rng = np.random.default_rng(seed)
    m, n, k = (int(v) for v in rng.integers(1, 4, 3))
    p = random_problem(rng, m, n, k, 1)
    G = rng.standard_normal((m, m))
    P_next = G @ G.T / m + 0.1 * np.eye(m)
    r_next = rng.standard_normal(m)
    lam = 1.5 * np.linalg.eigvalsh(p.D[0].T @ P_next @ p.D[0])[-1] + 0.5
    return rng, p, P_next, r_next, lam


def _grid_polish_max(f, k, center, radius=6.0):
    g = np.linspace(-radius, radius, 25 if k <= 2 else 9)
    grid = np.array(np.meshgrid(*[g] * k)).reshape(k, -1).T + center
    w0 = grid[np.argmax([f(w) for w in grid])]
    return minimize(lambda w: -f(w), w0, method="BFGS", options={"gtol": 1e-12}).x


@pytest.mark.parametrize("seed", range(20))
def test_worst_case_matches_numerical_max(seed):
    rng, p, P_next, r_next, lam = _stage_setup(seed)
    x, u, w_hat = rng.standard_normal(p.m), rng.standard_normal(p.n), rng.standard_normal(p.k)
    phi = lambda w: adversary_objective(0, P_next, r_next, 0.0, x, u, w, w_hat, lam, p)
    w_num = _grid_polish_max(phi, p.k, w_hat)
    w_cf = worst_case_noise(0, P_next, r_next, x, u, w_hat, lam, p)
    np.testing.assert_allclose(w_cf, w_num, atol=1e-6)


def _outer(p, t, P1, r1, q1, x, noise, lam):
    """Stage cost plus sample-average of the adversary's numerical maximum."""
    def J(u):
        total = x @ p.Q[t] @ x + u @ p.R[t] @ u
        for w_hat in noise.samples[t]:
            phi = lambda w: adversary_objective(t, P1, r1, q1, x, u, w, w_hat, lam, p)
            w = minimize(lambda w: -phi(w), w_hat, method="BFGS", options={"gtol": 1e-12}).x
            total += phi(w) / len(noise.samples[t])
        return total
    return J


@pytest.mark.parametrize("seed", range(5))
def test_bellman_consistency_by_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    p = random_problem(rng, 2, 1, 2, 2)
    noise = random_noise(rng, 2, 2, M=3)
    lam = 10.0 * max(1.0, np.linalg.norm(solve_classical(p).P, axis=(1, 2), ord=2).max() * 4)
    sol = solve_dro(p, noise, lam)
    ric = sol.riccati
    x = rng.standard_normal(2)
    for t in range(p.T):
        J = _outer(p, t, ric.P[t + 1], ric.r[t + 1], ric.q[t + 1], x, noise, lam)
        res = minimize(J, np.zeros(1), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-13})
        assert res.fun == pytest.approx(value_at(ric, t, x), rel=1e-8, abs=1e-8)
        np.testing.assert_allclose(res.x, ric.control(t, x), atol=1e-4)
        # outer stationarity at the returned control
        u_star = ric.control(t, x)
        h = 1e-5
        fd = (J(u_star + h) - J(u_star - h)) / (2 * h)
        assert abs(fd) < 1e-6 * (1 + abs(res.fun))


def test_nominal_bellman(rng):
    p = random_problem(rng, 2, 2, 2, 3)
    noise = random_noise(rng, 3, 2)
    sol = solve_nominal(p, noise)
    x = rng.standard_normal(2)
    for t in range(p.T):
        def J(u):
            ys = (p.A[t] @ x + p.B[t] @ u)[None] + noise.samples[t] @ p.D[t].T
            V = np.einsum("pi,ij,pj->p", ys, sol.P[t + 1], ys) + 2 * ys @ sol.r[t + 1] + sol.q[t + 1]
            return x @ p.Q[t] @ x + u @ p.R[t] @ u + V.mean()
        res = minimize(J, np.zeros(2), method="BFGS", options={"gtol": 1e-12})
        assert res.fun == pytest.approx(value_at(sol, t, x), rel=1e-10)
    big = solve_dro(p, noise, 1e9)
    np.testing.assert_allclose(big.K_star, sol.K_star, atol=1e-6)
    np.testing.assert_allclose(big.L_star, sol.L_star, atol=1e-6)


@given(st.integers(0, 5000))
def test_adversary_moves_less_as_penalty_grows(seed):
    rng, p, P_next, r_next, lam0 = _stage_setup(seed)
    x, u, w_hat = rng.standard_normal(p.m), rng.standard_normal(p.n), rng.standard_normal(p.k)
    dists = [np.linalg.norm(worst_case_noise(0, P_next, r_next, x, u, w_hat, lam0 * s, p) - w_hat)
             for s in (1, 1.5, 2, 4, 10, 100)]
    assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))


def test_penalty_too_small_reports_stage():
    p = scalar_problem(3)
    with pytest.raises(PenaltyTooSmall) as info:
        solve_dro(p, broadcast_noise([[0.0]], 3), 1.0)
    assert info.value.t == 2 and info.value.lambda_bar == pytest.approx(1.0)
    assert info.value.to_dict()["error"] == "penalty_too_small"


def test_input_errors():
    p = scalar_problem(2)
    with pytest.raises(InvalidConfig):
        solve_dro(p, broadcast_noise([[0.0]], 2), 0.0)
    with pytest.raises(DimensionMismatch):
        solve_dro(p, broadcast_noise([[0.0]], 3), 5.0)
    with pytest.raises(DimensionMismatch):
        solve_nominal(p, build_noise_model([[[0.0, 1.0]]] * 2))


def test_serializes(rng):
    p = random_problem(rng, 2, 1, 1, 2)
    d = solve_dro(p, random_noise(rng, 2, 1), 50.0).to_dict()
    back = json.loads(json.dumps(d))
    assert back["lambda"] == 50.0 and len(back["lambda_bar"]) == 2
