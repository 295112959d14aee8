"""Scalar-state LQ with state-scaled polyhedral control constraints.

Admissible controls are ``u = K x`` with ``H_t K <= d_t``. The optimal policy is
piecewise linear in x: one gain for x >= 0 and another for x < 0, obtained from
two coupled backward recursions of convex stage problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.stats import norm

from .ambiguity import NoiseModel
from .errors import DimensionMismatch, InfeasibleConstraint, NotScalarState
from .lq_core import InitialState, LqProblem

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class ConstraintSpec:
    """Per-stage polyhedron ``{K : H[t] K <= d[t]}`` of admissible gains."""

    H: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        d = np.asarray(self.d, dtype=float)
        if H.ndim != 3 or d.ndim != 2 or H.shape[:2] != d.shape:
            raise DimensionMismatch(f"constraint shapes H{H.shape}, d{d.shape} are inconsistent")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "d", d)
        for t in range(H.shape[0]):
            if feasible_point(H[t], d[t]) is None:
                raise InfeasibleConstraint(f"constraint set at stage {t} is empty")

    @classmethod
    def broadcast(cls, H, d, T):
        H = np.array(H, dtype=float, ndmin=2)
        d = np.atleast_1d(np.asarray(d, dtype=float))
        if H.ndim == 2:
            H = np.broadcast_to(H, (T,) + H.shape)
        if d.ndim == 1:
            d = np.broadcast_to(d, (T,) + d.shape)
        return cls(np.array(H), np.array(d))

    @classmethod
    def unconstrained(cls, T, n):
        return cls(np.zeros((T, 1, n)), np.zeros((T, 1)))

    @classmethod
    def box(cls, lo, hi, T, n):
        """``lo <= K_j <= hi`` for every coordinate j."""
        H = np.vstack([np.eye(n), -np.eye(n)])
        d = np.concatenate([np.full(n, hi), np.full(n, -lo)])
        return cls.broadcast(H, d, T)

    @property
    def T(self):
        return self.H.shape[0]

    @property
    def n(self):
        return self.H.shape[2]

    def cone_condition_holds(self):
        """Whether ``{K : H K <= d, H K <= 0}`` is nonempty at every stage.

        Box constraints with a strictly positive lower bound fail this while
        still giving a well-posed problem, so it is reported, not enforced.
        """
        return all(feasible_point(self.H[t], np.minimum(self.d[t], 0.0)) is not None for t in range(self.T))

    def contains(self, t, K, tol=1e-8):
        return bool(np.all(self.H[t] @ K <= self.d[t] + tol))

    def to_dict(self):
        return {"H": self.H.tolist(), "d": self.d.tolist()}

    @classmethod
    def from_dict(cls, doc, T):
        return cls.broadcast(doc["H"], doc["d"], T)


def feasible_point(H, d):
    """A point of ``{K : H K <= d}`` via an LP, or None if the set is empty."""
    n = H.shape[1]
    res = linprog(np.zeros(n), A_ub=H, b_ub=d, bounds=[(None, None)] * n, method="highs")
    return res.x if res.status == 0 else None


@dataclass
class PiecewisePolicy:
    K_hat: np.ndarray
    K_bar: np.ndarray
    P_hat: np.ndarray
    P_bar: np.ndarray

    @property
    def T(self):
        return self.K_hat.shape[0]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("K_hat", "K_bar", "P_hat", "P_bar")}


def _require_scalar(problem):
    if problem.m != 1:
        raise NotScalarState(f"state dimension must be 1, got {problem.m}")


def _next_states(K, t, problem, samples, sign):
    A = problem.A[t, 0, 0]
    B = problem.B[t, 0]
    D = problem.D[t, 0]
    if samples is None or not np.any(D):
        noise = np.zeros(1)
    else:
        noise = np.asarray(samples, dtype=float).reshape(-1, D.size) @ D
    return A + sign * (B @ K + noise), B


def _objective(K, t, y, z, problem, samples, sign):
    s, B = _next_states(K, t, problem, samples, sign)
    R = problem.R[t]
    if sign > 0:
        wgt = np.where(s >= 0, y, z)
    else:
        wgt = np.where(s <= 0, y, z)
    val = problem.Q[t, 0, 0] + K @ R @ K + np.mean(wgt * s**2)
    grad = 2.0 * R @ K + sign * 2.0 * np.mean(wgt * s) * B
    return float(val), grad


def eval_p_hat(K, t, y, z, problem: LqProblem, samples=None):
    """Sample-average ``Q + K'RK + (A + BK + Dw)^2 (y if >= 0 else z)``."""
    _require_scalar(problem)
    return _objective(np.atleast_1d(np.asarray(K, float)), t, y, z, problem, samples, +1)[0]


def eval_p_bar(K, t, y, z, problem: LqProblem, samples=None):
    """Sample-average ``Q + K'RK + (A - BK - Dw)^2 (y if <= 0 else z)``."""
    _require_scalar(problem)
    return _objective(np.atleast_1d(np.asarray(K, float)), t, y, z, problem, samples, -1)[0]


def minimize_stage(t, y, z, problem, cons: ConstraintSpec, samples, sign, n_starts=8, seed=0):
    """Minimize one branch objective over the stage polyhedron with SLSQP multistart."""
    H, d = cons.H[t], cons.d[t]
    n = problem.n
    x_feas = feasible_point(H, d)
    if x_feas is None:
        raise InfeasibleConstraint(f"constraint set at stage {t} is empty")
    rng = np.random.default_rng(seed)
    starts = [x_feas] + [x_feas + rng.standard_normal(n) for _ in range(n_starts - 1)]
    fun = lambda K: _objective(K, t, y, z, problem, samples, sign)
    active = np.any(H != 0)
    constraints = [{"type": "ineq", "fun": lambda K: d - H @ K, "jac": lambda K: -H}] if active else []
    best = None
    for x0 in starts:
        res = minimize(fun, x0, jac=True, method="SLSQP", constraints=constraints,
                       options={"ftol": 1e-15, "maxiter": 500})
        K = res.x
        if np.any(H @ K > d + 1e-7):
            continue
        val = fun(K)[0]
        if best is None or val < best[1]:
            best = (K, val)
    if best is None:
        # every start drifted out; fall back to the LP point
        best = (x_feas, fun(x_feas)[0])
    return best


def solve_constrained(problem: LqProblem, cons: ConstraintSpec, noise: NoiseModel | None = None,
                      n_starts=8) -> PiecewisePolicy:
    """Backward recursion for the two branch value scalars and gains."""
    _require_scalar(problem)
    T, n = problem.T, problem.n
    if cons.T != T or cons.n != n:
        raise DimensionMismatch(f"constraints cover T={cons.T}, n={cons.n}; problem has T={T}, n={n}")
    if noise is not None and noise.T != T:
        raise DimensionMismatch("noise model horizon differs from problem horizon")
    P_hat = np.zeros(T + 1)
    P_bar = np.zeros(T + 1)
    K_hat = np.zeros((T, n))
    K_bar = np.zeros((T, n))
    P_hat[T] = P_bar[T] = problem.QT[0, 0]
    for t in range(T - 1, -1, -1):
        samples = None if noise is None else noise.samples[t]
        y, z = P_hat[t + 1], P_bar[t + 1]
        K_hat[t], P_hat[t] = minimize_stage(t, y, z, problem, cons, samples, +1, n_starts, seed=2 * t)
        K_bar[t], P_bar[t] = minimize_stage(t, y, z, problem, cons, samples, -1, n_starts, seed=2 * t + 1)
    return PiecewisePolicy(K_hat, K_bar, P_hat, P_bar)


def piecewise_control(policy: PiecewisePolicy, t, x):
    """``K_hat x`` for x >= 0 and ``-K_bar x`` for x < 0; accepts a scalar or a batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return policy.K_hat[t] * x if x >= 0 else -policy.K_bar[t] * x
    x = x.reshape(-1, 1)
    return np.where(x >= 0, x * policy.K_hat[t], -x * policy.K_bar[t])


def optimal_value_constrained(policy: PiecewisePolicy, x0) -> float:
    x0 = float(np.asarray(x0).ravel()[0])
    return x0**2 * (policy.P_hat[0] if x0 >= 0 else policy.P_bar[0])


def expected_value_constrained(policy: PiecewisePolicy, init: InitialState) -> float:
    """Expected optimal cost over a scalar initial law.

    Exact for deterministic and Gaussian x0 (truncated second moments), a
    sample mean for empirical x0.
    """
    if init.m != 1:
        raise NotScalarState("initial state must be scalar")
    mu = float(init.mean[0])
    var = float(init.cov[0, 0])
    if init.kind == "empirical":
        x = init.samples[:, 0]
        return float(np.mean(np.where(x >= 0, policy.P_hat[0], policy.P_bar[0]) * x**2))
    if var == 0:
        return optimal_value_constrained(policy, mu)
    sd = np.sqrt(var)
    a = mu / sd
    # E[x^2 1{x >= 0}] for x ~ N(mu, var)
    pos = (mu**2 + var) * norm.cdf(a) + mu * sd * norm.pdf(a)
    return float(policy.P_hat[0] * pos + policy.P_bar[0] * (mu**2 + var - pos))
