"""Exact policy gradient on augmented affine policies.

The state is augmented with a constant 1 so that an affine feedback
``u = -K x - L`` becomes linear, ``u = -[K L] (x, 1)``. Cost and gradient are
evaluated in closed form from a forward moment recursion and a backward value
recursion; no sampling is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import NoiseModel
from .errors import DegenerateStats, DimensionMismatch, DivergenceDetected, InvalidConfig, PenaltyTooSmall
from .lq_core import TOL_PD, InitialState, LqProblem, RiccatiSolution, sym


@dataclass(frozen=True)
class AugmentedProblem:
    T: int
    A_hat: np.ndarray
    B_hat: np.ndarray
    D_hat: np.ndarray
    Q_hat: np.ndarray
    R: np.ndarray
    Q_hat_T: np.ndarray
    base: LqProblem

    @property
    def m(self):
        return self.base.m

    @property
    def n(self):
        return self.base.n

    def strip(self) -> LqProblem:
        m = self.m
        return LqProblem(
            T=self.T,
            A=self.A_hat[:, :m, :m],
            B=self.B_hat[:, :m, :],
            D=self.D_hat[:, :m, :],
            Q=self.Q_hat[:, :m, :m],
            R=self.R,
            QT=self.Q_hat_T[:m, :m],
        )


def augment(problem: LqProblem) -> AugmentedProblem:
    """Embed the plant in the state (x, 1)."""
    T, m = problem.T, problem.m
    A = np.zeros((T, m + 1, m + 1))
    A[:, :m, :m] = problem.A
    A[:, m, m] = 1.0
    B = np.zeros((T, m + 1, problem.n))
    B[:, :m] = problem.B
    D = np.zeros((T, m + 1, problem.k))
    D[:, :m] = problem.D
    Q = np.zeros((T, m + 1, m + 1))
    Q[:, :m, :m] = problem.Q
    QT = np.zeros((m + 1, m + 1))
    QT[:m, :m] = problem.QT
    return AugmentedProblem(T, A, B, D, Q, np.array(problem.R), QT, problem)


@dataclass
class AugmentedPolicy:
    """Per-stage gains ``K_hat[t] = [K_t | L_t]`` of shape (n, m+1); ``u = -K_hat x_hat``."""

    K_hat: np.ndarray

    def __post_init__(self):
        self.K_hat = np.array(self.K_hat, dtype=float)
        if self.K_hat.ndim != 3:
            raise DimensionMismatch("K_hat must have shape (T, n, m+1)")

    @property
    def T(self):
        return self.K_hat.shape[0]

    @classmethod
    def from_affine(cls, K, L):
        K = np.asarray(K, dtype=float)
        L = np.asarray(L, dtype=float)
        return cls(np.concatenate([K, L[:, :, None]], axis=2))

    @classmethod
    def from_solution(cls, sol: RiccatiSolution):
        return cls.from_affine(sol.K_star, sol.L_star)

    @classmethod
    def zeros(cls, T, n, m):
        return cls(np.zeros((T, n, m + 1)))

    def split_affine(self):
        return self.K_hat[:, :, :-1].copy(), self.K_hat[:, :, -1].copy()

    def control(self, t, x):
        """Vectorized ``u = -K x - L`` for a batch of states (N, m) or one state (m,)."""
        K, L = self.K_hat[t, :, :-1], self.K_hat[t, :, -1]
        return -(np.asarray(x) @ K.T) - L

    def to_dict(self):
        return {"K_hat": self.K_hat.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["K_hat"])


@dataclass
class StateStats:
    """Augmented first and second moments ``mu[t] = E[x_hat_t]``, ``Sigma[t] = E[x_hat_t x_hat_t']``."""

    mu: np.ndarray
    Sigma: np.ndarray

    @property
    def Sigma_K(self):
        return self.Sigma.sum(axis=0)

    @property
    def mu_K(self):
        return self.mu.sum(axis=0)

    @property
    def sigma_X(self):
        return float(min(np.linalg.svd(S, compute_uv=False)[-1] for S in self.Sigma))


@dataclass
class BackwardPass:
    P_hat: np.ndarray
    r_hat: np.ndarray
    q_hat: np.ndarray
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray  # R + B'SB per stage
    Gamma: np.ndarray | None = None
    c_mean: np.ndarray | None = None
    c_second: np.ndarray | None = None


def _check(aug, policy, noise):
    if policy.K_hat.shape != (aug.T, aug.n, aug.m + 1):
        raise DimensionMismatch(f"policy shape {policy.K_hat.shape} does not match {(aug.T, aug.n, aug.m + 1)}")
    if noise.T != aug.T or noise.k != aug.D_hat.shape[2]:
        raise DimensionMismatch("noise model does not match problem horizon/dimension")


def _stage_terms(aug, t, P_next, r_next, noise, lam):
    """Noise terms of one stage for either the nominal or the penalized-adversary model.

    Returns ``(Gamma, c_mean, c_second, S, s, q_inc)`` such that the next state is
    ``Gamma (A - B K) x + c`` with ``E[c] = c_mean``, ``E[c c'] = c_second``, and the
    stage value recursion reads ``P = Q + K'RK + M'SM``, ``r = M's``.
    """
    D = aug.D_hat[t]
    wbar, Sw = noise.mean[t], noise.second_moment[t]
    if lam is None:
        Dw = D @ wbar
        S = P_next
        s = r_next + P_next @ Dw
        q_inc = 2.0 * r_next @ Dw + np.trace(D.T @ P_next @ D @ Sw)
        return np.eye(D.shape[0]), Dw, D @ Sw @ D.T, S, s, q_inc
    k = D.shape[1]
    DPD = sym(D.T @ P_next @ D)
    lam_bar = float(np.linalg.eigvalsh(DPD)[-1])
    if lam <= lam_bar:
        raise PenaltyTooSmall(t, lam_bar, lam)
    Dp = sym(np.linalg.inv(lam * np.eye(k) - DPD))
    Gamma = np.eye(D.shape[0]) + D @ Dp @ D.T @ P_next
    S = sym(P_next @ Gamma)
    s = Gamma.T @ r_next + lam * (P_next @ D @ Dp @ wbar)
    Dr = D.T @ r_next
    q_inc = Dr @ Dp @ Dr + 2 * lam * Dr @ Dp @ wbar + np.trace(lam**2 * Dp @ Sw - lam * Sw)
    # adversarial offset c_i = D Dp (D'r + lam w_i), averaged over samples
    c_mean = D @ Dp @ (Dr + lam * wbar)
    cross = np.outer(Dr, wbar)
    inner = np.outer(Dr, Dr) + lam * (cross + cross.T) + lam**2 * Sw
    return Gamma, c_mean, sym(D @ Dp @ inner @ Dp @ D.T), S, s, q_inc


def forward_stats(aug: AugmentedProblem, policy: AugmentedPolicy, init: InitialState, noise: NoiseModel,
                  lam=None, bp=None) -> StateStats:
    """Closed-loop augmented moments.

    With ``lam`` set, the noise at each stage is the penalized adversary's best
    response to the policy, which needs the policy's value recursion ``bp``.
    """
    _check(aug, policy, noise)
    if init.m != aug.m:
        raise DimensionMismatch("initial state dimension does not match problem")
    if lam is not None and bp is None:
        bp = backward_pass(aug, policy, noise, lam)
    T, d = aug.T, aug.m + 1
    mu = np.zeros((T + 1, d))
    S = np.zeros((T + 1, d, d))
    mu[0], S[0] = init.augmented_moments()
    for t in range(T):
        if lam is None:
            Gamma, c, cc = np.eye(d), aug.D_hat[t] @ noise.mean[t], aug.D_hat[t] @ noise.second_moment[t] @ aug.D_hat[t].T
        else:
            Gamma, c, cc = bp.Gamma[t], bp.c_mean[t], bp.c_second[t]
        M = Gamma @ (aug.A_hat[t] - aug.B_hat[t] @ policy.K_hat[t])
        cross = np.outer(M @ mu[t], c)
        mu[t + 1] = M @ mu[t] + c
        S[t + 1] = sym(M @ S[t] @ M.T + cross + cross.T + cc)
    return StateStats(mu, S)


def backward_pass(aug: AugmentedProblem, policy: AugmentedPolicy, noise: NoiseModel, lam=None) -> BackwardPass:
    """Value recursion of a fixed policy; with ``lam`` the noise is chosen adversarially."""
    _check(aug, policy, noise)
    T, d, n = aug.T, aug.m + 1, aug.n
    P = np.zeros((T + 1, d, d))
    r = np.zeros((T + 1, d))
    q = np.zeros(T + 1)
    E = np.zeros((T, n, d))
    F = np.zeros((T, n))
    G = np.zeros((T, n, n))
    Gammas = np.zeros((T, d, d))
    c_mean = np.zeros((T, d))
    c_second = np.zeros((T, d, d))
    P[T] = aug.Q_hat_T
    for t in range(T - 1, -1, -1):
        A, B, K = aug.A_hat[t], aug.B_hat[t], policy.K_hat[t]
        Gammas[t], c_mean[t], c_second[t], S, s, q_inc = _stage_terms(aug, t, P[t + 1], r[t + 1], noise, lam)
        G[t] = sym(aug.R[t] + B.T @ S @ B)
        E[t] = G[t] @ K - B.T @ S @ A
        F[t] = B.T @ s
        M = A - B @ K
        P[t] = sym(aug.Q_hat[t] + K.T @ aug.R[t] @ K + M.T @ S @ M)
        r[t] = M.T @ s
        q[t] = q[t + 1] + q_inc
    return BackwardPass(P, r, q, E, F, G, Gammas, c_mean, c_second)


def _cost_from(bp: BackwardPass, stats: StateStats):
    return float(np.trace(bp.P_hat[0] @ stats.Sigma[0]) + 2.0 * bp.r_hat[0] @ stats.mu[0] + bp.q_hat[0])


def _grad_from(bp: BackwardPass, stats: StateStats):
    T = bp.E.shape[0]
    return np.stack([2.0 * bp.E[t] @ stats.Sigma[t] - 2.0 * np.outer(bp.F[t], stats.mu[t]) for t in range(T)])


def cost(aug, policy, init, noise, lam=None) -> float:
    """Expected total cost of the policy, evaluated in closed form.

    With ``lam`` the cost is the penalized worst case: noise samples may be moved
    at price ``lam |w - w_hat|^2`` by an adversary who knows the policy.
    """
    bp = backward_pass(aug, policy, noise, lam)
    return _cost_from(bp, forward_stats(aug, policy, init, noise, lam, bp))


def cost_by_moments(aug, policy, init, noise) -> float:
    """Same cost summed stage by stage from the forward second moments."""
    st = forward_stats(aug, policy, init, noise)
    total = np.trace(aug.Q_hat_T @ st.Sigma[-1])
    for t in range(aug.T):
        K = policy.K_hat[t]
        total += np.trace((aug.Q_hat[t] + K.T @ aug.R[t] @ K) @ st.Sigma[t])
    return float(total)


def gradient(aug, policy, init, noise, lam=None) -> np.ndarray:
    """Per-stage gradient ``2 E_t Sigma_t - 2 F_t mu_t'``, shape (T, n, m+1)."""
    return evaluate(aug, policy, init, noise, lam).grad


@dataclass
class Evaluation:
    cost: float
    grad: np.ndarray
    stats: StateStats
    bp: BackwardPass


def evaluate(aug, policy, init, noise, lam=None) -> Evaluation:
    bp = backward_pass(aug, policy, noise, lam)
    st = forward_stats(aug, policy, init, noise, lam, bp)
    return Evaluation(_cost_from(bp, st), _grad_from(bp, st), st, bp)


# ---------------------------------------------------------------------------
# step size


def sigma_Q_of(problem: LqProblem, floor=1e-6):
    """Smallest eigenvalue over all state-cost matrices, or ``floor`` if some is singular.

    The augmented cost always has a zero eigenvalue in the constant direction,
    so the original blocks are used instead.
    """
    lo = min(np.linalg.eigvalsh(Q)[0] for Q in list(problem.Q) + [problem.QT])
    return float(lo) if lo > TOL_PD else float(floor)


def step_size_formula(rho, sigma_X, sigma_Q, C, T, B_norm, D_norm, wbar_norm, mu_norm, Sw_norm,
                      grad_norms, G_norms):
    """Both terms of the step-size condition; returns ``(eta, term1, term2, C1)``."""
    grad_norms = np.asarray(grad_norms, dtype=float)
    G_norms = np.asarray(G_norms, dtype=float)
    g_sum = grad_norms.sum()
    g_max = grad_norms.max() if grad_norms.size else 0.0
    noise_drive = T * (2 * rho * D_norm * wbar_norm * mu_norm + D_norm**2 * Sw_norm)
    sq = math.sqrt(sigma_Q)
    geo2 = rho ** (2 * T) - 1.0
    geo1 = rho**T - 1.0
    Dn1 = (C + sigma_Q * noise_drive) * (2 * rho + 1) * geo2 * (rho - 1) * sq
    Dn2 = (math.sqrt(T * C) + sq * T * D_norm * wbar_norm) * geo1 * (rho**2 - 1) * sigma_Q
    C1 = (
        (C / sigma_Q + noise_drive) * ((2 * rho + 1) * B_norm * geo2 / ((rho**2 - 1) * sigma_X) * g_sum)
        + 2 * D_norm * wbar_norm * mu_norm / sigma_X * g_sum
        + (math.sqrt(T * C / sigma_Q) + T * D_norm * wbar_norm) * (B_norm * geo1 / ((rho - 1) * sigma_X) * g_sum)
        + 2 * C / sigma_Q * G_norms.sum()
    )
    denom = 2 * T * (Dn1 + Dn2) * B_norm * g_max
    term1 = math.inf if denom == 0 else (rho**2 - 1) * (rho - 1) * sigma_Q * sq * sigma_X / denom
    term2 = math.inf if C1 == 0 else 1.0 / (2 * C1)
    return min(term1, term2), term1, term2, C1


@dataclass
class StepSizeInfo:
    eta: float
    term1: float
    term2: float
    C1: float
    rho: float
    sigma_X: float
    sigma_Q: float
    sigma_R: float


def _closed_loop_norm(aug, K_hat):
    return max(np.linalg.norm(aug.A_hat[t] - aug.B_hat[t] @ K_hat[t], 2) for t in range(aug.T))


def step_size_bound(aug, policy, init, noise, xi=0.01, sigma_Q_floor=1e-6, ev: Evaluation | None = None,
                    max_rounds=100, lam=None) -> StepSizeInfo:
    """Largest step admitted by the global convergence condition at the current policy.

    The contraction constant rho depends on the next iterate, which depends on
    the step; rho is raised until it covers the step it produces.
    """
    if not xi > 0:
        raise InvalidConfig("xi must be positive")
    ev = ev or evaluate(aug, policy, init, noise, lam)
    sigma_X = ev.stats.sigma_X
    sigma_Q = sigma_Q_of(aug.base, sigma_Q_floor)
    if sigma_X <= 0 or sigma_Q <= 0:
        raise DegenerateStats(f"sigma_X={sigma_X:.3e}, sigma_Q={sigma_Q:.3e} must be positive")
    sigma_R = float(min(np.linalg.eigvalsh(R)[0] for R in aug.R))
    T = aug.T
    consts = dict(
        sigma_X=sigma_X,
        sigma_Q=sigma_Q,
        C=ev.cost,
        T=T,
        B_norm=max(np.linalg.norm(B, 2) for B in aug.B_hat),
        D_norm=max(np.linalg.norm(D, 2) for D in aug.D_hat),
        wbar_norm=float(np.linalg.norm(noise.mean, axis=1).max()),
        mu_norm=float(np.linalg.norm(ev.stats.mu, axis=1).max()),
        Sw_norm=max(np.linalg.norm(S, 2) for S in noise.second_moment),
        grad_norms=[np.linalg.norm(g, 2) for g in ev.grad],
        G_norms=[np.linalg.norm(G, 2) for G in ev.bp.G],
    )
    rho = max(_closed_loop_norm(aug, policy.K_hat), 1.0 + xi)
    for _ in range(max_rounds):
        eta, t1, t2, C1 = step_size_formula(rho, **consts)
        rho_next = max(rho, _closed_loop_norm(aug, policy.K_hat - eta * ev.grad))
        if rho_next <= rho:
            break
        rho = rho_next
    else:
        raise DegenerateStats("contraction constant did not settle")
    return StepSizeInfo(eta, t1, t2, C1, rho, sigma_X, sigma_Q, sigma_R)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    eta: float | str = "auto"
    max_iters: int = 1000
    tol_norm_grad: float = 1e-10
    tol_cost_gap: float = 0.0
    xi: float = 0.01
    sigma_Q_floor: float = 1e-6
    seed: int = 0
    divergence_patience: int = 5

    def __post_init__(self):
        if self.eta != "auto":
            self.eta = float(self.eta)
            if not self.eta > 0:
                raise InvalidConfig("fixed step size must be positive")
        if not self.xi > 0:
            raise InvalidConfig("xi must be positive")
        if self.max_iters < 0:
            raise InvalidConfig("max_iters must be non-negative")


@dataclass
class TrainResult:
    policy: AugmentedPolicy
    history: list = field(default_factory=list)
    converged: bool = False

    def column(self, key):
        return np.array([h[key] for h in self.history])


def train(aug, K0: AugmentedPolicy, init, noise, cfg: TrainConfig = TrainConfig(), c_star=None,
          keep_policies=False, lam=None) -> TrainResult:
    """Gradient descent ``K <- K - eta grad C(K)``.

    History rows hold iteration, cost, normalized_error (when ``c_star`` is
    given), grad_norm and the step used at that iterate. With ``lam`` the
    objective is the penalized worst-case cost.
    """
    K = AugmentedPolicy(K0.K_hat.copy())
    res = TrainResult(K)
    ups = 0
    prev = None
    for it in range(cfg.max_iters + 1):
        # overflow is reported below as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            ev = evaluate(aug, K, init, noise, lam)
        if not np.isfinite(ev.cost):
            raise DivergenceDetected(f"cost became non-finite at iteration {it}")
        gnorm = float(np.sqrt(np.sum(ev.grad**2)))
        if cfg.eta == "auto":
            eta = step_size_bound(aug, K, init, noise, cfg.xi, cfg.sigma_Q_floor, ev=ev, lam=lam).eta
        else:
            eta = cfg.eta
        row = {"iteration": it, "cost": ev.cost}
        if c_star is not None:
            row["normalized_error"] = (ev.cost - c_star) / ev.cost
        row.update(grad_norm=gnorm, eta=eta)
        if keep_policies:
            row["K_hat"] = K.K_hat.copy()
        res.history.append(row)

        if prev is not None and ev.cost > prev:
            ups += 1
            if cfg.eta != "auto" and ups >= cfg.divergence_patience:
                raise DivergenceDetected(
                    f"cost rose for {ups} consecutive iterations with eta={cfg.eta:g}; reduce the step size"
                )
        else:
            ups = 0
        prev = ev.cost

        if gnorm < cfg.tol_norm_grad:
            res.converged = True
            break
        if c_star is not None and cfg.tol_cost_gap > 0 and row["normalized_error"] < cfg.tol_cost_gap:
            res.converged = True
            break
        if it == cfg.max_iters:
            break
        K = AugmentedPolicy(K.K_hat - eta * ev.grad)
    res.policy = K
    return res


# ---------------------------------------------------------------------------
# diagnostics


def almost_smoothness_residual(aug, K: AugmentedPolicy, K_new: AugmentedPolicy, init, noise) -> float:
    """Relative mismatch of the exact cost-difference expansion between two policies."""
    bp = backward_pass(aug, K, noise)
    st_new = forward_stats(aug, K_new, init, noise)
    c_old = _cost_from(bp, forward_stats(aug, K, init, noise))
    c_new = cost(aug, K_new, init, noise)
    rhs = 0.0
    for t in range(aug.T):
        dK = K_new.K_hat[t] - K.K_hat[t]
        S = st_new.Sigma[t]
        rhs += 2 * np.trace(S @ dK.T @ bp.E[t]) + np.trace(S @ dK.T @ bp.G[t] @ dK) - 2 * st_new.mu[t] @ dK.T @ bp.F[t]
    return abs((c_new - c_old) - rhs) / max(abs(c_new), abs(c_old), 1e-300)


def gap_bounds(aug, K: AugmentedPolicy, K_star: AugmentedPolicy, init, noise, sigma_Q_floor=1e-6) -> dict:
    """Both sides of the gradient-domination sandwich and the norm bounds on P, Sigma_K, mu_K.

    ``lower`` carries the factor ``sigma_X + 1`` and is reported as is; it is
    not a valid inequality in general. ``lower_one_step`` and ``lower_corrected`` are the
    chain that does hold, the latter only when the linear terms ``F`` vanish.
    """
    ev = evaluate(aug, K, init, noise)
    st_star = forward_stats(aug, K_star, init, noise)
    c_star = cost(aug, K_star, init, noise)
    sigma_X = ev.stats.sigma_X
    sigma_Q = sigma_Q_of(aug.base, sigma_Q_floor)
    if sigma_X <= 0 or sigma_Q <= 0:
        raise DegenerateStats(f"sigma_X={sigma_X:.3e}, sigma_Q={sigma_Q:.3e} must be positive")
    sigma_R = float(min(np.linalg.eigvalsh(R)[0] for R in aug.R))
    bp = ev.bp
    lower = (sigma_X + 1) * sum(
        (np.sum(bp.E[t] ** 2) + bp.F[t] @ bp.F[t]) / np.linalg.norm(bp.G[t], 2) for t in range(aug.T)
    )
    upper = (np.linalg.norm(st_star.Sigma_K, 2) + 1) / (4 * sigma_X**2 * sigma_R) * float(np.sum(ev.grad**2))
    C = ev.cost
    # one exact Newton-like step K' = K - G^{-1} E; C(K*) <= C(K') gives a valid lower bound,
    # and with F = 0 it dominates sigma_min of the K' moments times sum Tr(E'E)/|G|
    K_next = AugmentedPolicy(np.stack([K.K_hat[t] - np.linalg.solve(bp.G[t], bp.E[t]) for t in range(aug.T)]))
    one_step = C - cost(aug, K_next, init, noise)
    sigma_X_next = forward_stats(aug, K_next, init, noise).sigma_X
    corrected = sigma_X_next * sum(np.sum(bp.E[t] ** 2) / np.linalg.norm(bp.G[t], 2) for t in range(aug.T))
    return {
        "gap": C - c_star,
        "lower": float(lower),
        "lower_one_step": float(one_step),
        "lower_corrected": float(corrected),
        "upper": float(upper),
        "P_norm_max": float(max(np.linalg.norm(P, 2) for P in bp.P_hat)),
        "P_norm_bound": C / sigma_X,
        "Sigma_K_norm": float(np.linalg.norm(ev.stats.Sigma_K, 2)),
        "Sigma_K_bound": C / sigma_Q,
        "mu_K_norm": float(np.linalg.norm(ev.stats.mu_K)),
        "mu_K_bound": math.sqrt(aug.T * C / sigma_Q),
        "sigma_X": sigma_X,
        "sigma_Q": sigma_Q,
        "sigma_R": sigma_R,
    }
