"""Wasserstein-penalized minimax LQ: modified Riccati recursion and worst-case noise.

The adversary picks each noise sample ``w`` to maximize
``V_{t+1}(A x + B u + D w) - lam * |w - w_hat|^2``; for ``lam`` above the
largest eigenvalue of ``D' P_{t+1} D`` this is a concave quadratic in ``w`` and
the resulting value function stays quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ambiguity import NoiseModel
from .errors import DimensionMismatch, InvalidConfig, PenaltyTooSmall
from .lq_core import LqProblem, RiccatiSolution, spd_solve, sym


@dataclass(frozen=True)
class DroStage:
    Delta_prime: np.ndarray
    Delta: np.ndarray
    lambda_bar: float


@dataclass
class DroSolution:
    riccati: RiccatiSolution
    stages: tuple
    lam: float

    @property
    def K_star(self):
        return self.riccati.K_star

    @property
    def L_star(self):
        return self.riccati.L_star

    def to_dict(self):
        d = self.riccati.to_dict()
        d["lambda"] = self.lam
        d["lambda_bar"] = [s.lambda_bar for s in self.stages]
        return d


def _stage_inverse(D, P_next, lam, t):
    """Return (Delta', lambda_bar) or raise when the adversary's problem is not concave."""
    DPD = sym(D.T @ P_next @ D)
    lam_bar = float(np.linalg.eigvalsh(DPD)[-1]) if DPD.size else 0.0
    if lam <= lam_bar:
        raise PenaltyTooSmall(t, lam_bar, lam)
    k = D.shape[1]
    Dp = sym(spd_solve(lam * np.eye(k) - DPD, np.eye(k), what=f"lam*I - D'PD at stage {t}"))
    return Dp, lam_bar


def solve_dro(problem: LqProblem, noise: NoiseModel, lam: float) -> DroSolution:
    """Backward recursion for the penalized minimax problem.

    Returns value coefficients (P, r, q) and the affine policy
    ``u = -K_star[t] x - L_star[t]``.
    """
    if not lam > 0:
        raise InvalidConfig("penalty lambda must be positive")
    T, m, n = problem.T, problem.m, problem.n
    if noise.T != T or noise.k != problem.k:
        raise DimensionMismatch(
            f"noise model has T={noise.T}, k={noise.k}; problem needs T={T}, k={problem.k}"
        )
    P = np.zeros((T + 1, m, m))
    r = np.zeros((T + 1, m))
    q = np.zeros(T + 1)
    K = np.zeros((T, n, m))
    L = np.zeros((T, n))
    P[T] = problem.QT
    stages = [None] * T
    I_m = np.eye(m)
    for t in range(T - 1, -1, -1):
        A, B, D = problem.A[t], problem.B[t], problem.D[t]
        Q, R = problem.Q[t], problem.R[t]
        wbar, Sw = noise.mean[t], noise.second_moment[t]
        Pn, rn = P[t + 1], r[t + 1]

        Dp, lam_bar = _stage_inverse(D, Pn, lam, t)
        Delta = I_m + D @ Dp @ D.T @ Pn
        S = sym(Pn @ Delta)
        s = Delta.T @ rn + lam * (Pn @ D @ Dp @ wbar)
        stages[t] = DroStage(Dp, Delta, lam_bar)

        G = R + B.T @ S @ B
        sol = spd_solve(G, np.column_stack([B.T @ S @ A, B.T @ s]), what=f"R + B'SB at stage {t}")
        K[t], L[t] = sol[:, :m], sol[:, m]
        P[t] = sym(Q + A.T @ S @ A - (B.T @ S @ A).T @ K[t])
        r[t] = A.T @ s - (B.T @ S @ A).T @ L[t]
        Dr = D.T @ rn
        q[t] = (
            q[t + 1]
            + Dr @ Dp @ Dr
            + 2.0 * lam * Dr @ Dp @ wbar
            + np.trace(lam**2 * Dp @ Sw - lam * Sw)
            - (B.T @ s) @ L[t]
        )
    ric = RiccatiSolution(P=P, r=r, q=q, K_star=K, L_star=L, meta={"lambda": lam})
    return DroSolution(ric, tuple(stages), float(lam))


def worst_case_noise(t, P_next, r_next, x, u, w_hat, lam, problem: LqProblem):
    """Maximizer of ``V_{t+1}(A x + B u + D w) - lam |w - w_hat|^2`` over w."""
    A, B, D = problem.A[t], problem.B[t], problem.D[t]
    Dp, _ = _stage_inverse(D, np.asarray(P_next, float), lam, t)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w_hat = np.atleast_1d(np.asarray(w_hat, dtype=float))
    drive = D.T @ P_next @ (A @ x + B @ u) + D.T @ np.atleast_1d(r_next) + lam * w_hat
    return Dp @ drive


def dro_policy_eval(sol: DroSolution, t, x):
    return sol.riccati.control(t, x)


def adversary_objective(t, P_next, r_next, q_next, x, u, w, w_hat, lam, problem: LqProblem):
    """``V_{t+1}(A x + B u + D w) - lam |w - w_hat|^2``; used for validation."""
    y = problem.A[t] @ x + problem.B[t] @ u + problem.D[t] @ np.atleast_1d(w)
    diff = np.atleast_1d(w) - np.atleast_1d(w_hat)
    return float(y @ P_next @ y + 2 * np.atleast_1d(r_next) @ y + q_next - lam * diff @ diff)


def solve_nominal(problem: LqProblem, noise: NoiseModel) -> RiccatiSolution:
    """Optimal affine policy when the noise follows the empirical law exactly.

    This is the limit of ``solve_dro`` as the penalty grows without bound; the
    noise mean produces the offsets ``L_star``.
    """
    T, m, n = problem.T, problem.m, problem.n
    if noise.T != T or noise.k != problem.k:
        raise DimensionMismatch(
            f"noise model has T={noise.T}, k={noise.k}; problem needs T={T}, k={problem.k}"
        )
    P = np.zeros((T + 1, m, m))
    r = np.zeros((T + 1, m))
    q = np.zeros(T + 1)
    K = np.zeros((T, n, m))
    L = np.zeros((T, n))
    P[T] = problem.QT
    for t in range(T - 1, -1, -1):
        A, B, D = problem.A[t], problem.B[t], problem.D[t]
        Pn, rn = P[t + 1], r[t + 1]
        s = rn + Pn @ D @ noise.mean[t]
        G = problem.R[t] + B.T @ Pn @ B
        sol = spd_solve(G, np.column_stack([B.T @ Pn @ A, B.T @ s]), what=f"R + B'PB at stage {t}")
        K[t], L[t] = sol[:, :m], sol[:, m]
        P[t] = sym(problem.Q[t] + A.T @ Pn @ A - (B.T @ Pn @ A).T @ K[t])
        r[t] = A.T @ s - (B.T @ Pn @ A).T @ L[t]
        q[t] = q[t + 1] + 2 * rn @ D @ noise.mean[t] + np.trace(D.T @ Pn @ D @ noise.second_moment[t]) - (B.T @ s) @ L[t]
    return RiccatiSolution(P=P, r=r, q=q, K_star=K, L_star=L)
