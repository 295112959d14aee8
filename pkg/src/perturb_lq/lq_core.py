"""Finite-horizon LQ problem data, classical Riccati recursion and value evaluation.

Conventions used throughout the package:

* dynamics ``x_{t+1} = A_t x_t + B_t u_t + D_t w_t``
* stage cost ``x_t' Q_t x_t + u_t' R_t u_t``, terminal cost ``x_T' Q_T x_T``
* affine feedback ``u_t = -K_t x_t - L_t``

Matrices are dense float arrays; sequences are stacked along axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import DimensionMismatch, NonPsdCost, NonPsdInitial, SingularInnerMatrix

TOL_PD = 1e-12
COND_CAP = 1e12


def _stack(seq, T, name, ndim=2):
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == ndim:
        arr = np.broadcast_to(arr, (T,) + arr.shape).copy()
    if arr.ndim != ndim + 1 or arr.shape[0] != T:
        raise DimensionMismatch(f"{name}: expected {T} stages of {ndim}-d arrays, got shape {arr.shape}")
    return arr


def tol_psd(M):
    return 1e-9 * (1.0 + np.linalg.norm(M, 2))


def check_psd(M, name):
    if not np.allclose(M, M.T, rtol=0, atol=1e-10 * (1 + np.abs(M).max())):
        raise NonPsdCost(f"{name} is not symmetric")
    lo = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    if lo < -tol_psd(M):
        raise NonPsdCost(f"{name} has negative eigenvalue {lo:.3e}")


def check_pd(M, name):
    if not np.allclose(M, M.T, rtol=0, atol=1e-10 * (1 + np.abs(M).max())):
        raise NonPsdCost(f"{name} is not symmetric")
    lo = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    if lo <= TOL_PD:
        raise NonPsdCost(f"{name} is not positive definite (min eigenvalue {lo:.3e})")


def spd_solve(M, rhs, what="inner matrix"):
    """Solve ``M X = rhs`` for symmetric positive-definite ``M``.

    Raises SingularInnerMatrix when M is not numerically PD or its condition
    number exceeds ``COND_CAP``; no silent regularization.
    """
    M = 0.5 * (M + M.T)
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_CAP:
        raise SingularInnerMatrix(
            f"{what} is singular or ill-conditioned (eigenvalues in [{ev[0]:.3e}, {ev[-1]:.3e}])"
        )
    return la.cho_solve(la.cho_factor(M), rhs)


def sym(M):
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class LqProblem:
    """Time-varying finite-horizon LQ plant and cost.

    Any of A..R may be given as a single matrix, which is broadcast over the
    horizon.
    """

    T: int
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    QT: np.ndarray

    def __post_init__(self):
        T = int(self.T)
        if T < 1:
            raise DimensionMismatch("horizon T must be >= 1")
        object.__setattr__(self, "T", T)
        for name in ("A", "B", "D", "Q", "R"):
            arr = _stack(getattr(self, name), T, name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        QT = np.array(self.QT, dtype=float, ndmin=2)
        QT.setflags(write=False)
        object.__setattr__(self, "QT", QT)

        m, n, k = self.m, self.n, self.k
        shapes = {"A": (m, m), "B": (m, n), "D": (m, k), "Q": (m, m), "R": (n, n)}
        for name, shp in shapes.items():
            if getattr(self, name).shape[1:] != shp:
                raise DimensionMismatch(f"{name} stages must be {shp}, got {getattr(self, name).shape[1:]}")
        if QT.shape != (m, m):
            raise DimensionMismatch(f"QT must be {(m, m)}, got {QT.shape}")
        for t in range(T):
            check_psd(self.Q[t], f"Q[{t}]")
            check_pd(self.R[t], f"R[{t}]")
        check_psd(QT, "QT")

    @property
    def m(self):
        return self.A.shape[1]

    @property
    def n(self):
        return self.B.shape[2]

    @property
    def k(self):
        return self.D.shape[2]

    def replace(self, **changes):
        kw = dict(T=self.T, A=self.A, B=self.B, D=self.D, Q=self.Q, R=self.R, QT=self.QT)
        kw.update(changes)
        return LqProblem(**kw)

    def to_dict(self):
        return {
            "T": self.T,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "D": self.D.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "QT": self.QT.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(T=d["T"], A=d["A"], B=d["B"], D=d["D"], Q=d["Q"], R=d["R"], QT=d["QT"])
        except KeyError as exc:
            raise DimensionMismatch(f"problem document missing key {exc}") from None


@dataclass(frozen=True)
class InitialState:
    """Distribution of x_0: deterministic point, Gaussian, or empirical sample set."""

    kind: str
    mean: np.ndarray
    cov: np.ndarray
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "gaussian", "empirical"):
            raise ValueError(f"unknown initial-state kind {self.kind!r}")
        cov = np.asarray(self.cov, dtype=float)
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise NonPsdInitial("initial covariance is not symmetric")
        if cov.size and np.linalg.eigvalsh(cov).min() < -tol_psd(cov):
            raise NonPsdInitial("initial covariance is not PSD")

    @classmethod
    def deterministic(cls, x0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls("deterministic", x0, np.zeros((x0.size, x0.size)))

    @classmethod
    def gaussian(cls, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.array(cov, dtype=float, ndmin=2)
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch("initial covariance shape does not match mean")
        return cls("gaussian", mean, cov)

    @classmethod
    def empirical(cls, samples):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.shape[0] == 0:
            raise NonPsdInitial("empirical initial-state sample set is empty")
        mean = samples.mean(axis=0)
        centered = samples - mean
        cov = centered.T @ centered / samples.shape[0]
        return cls("empirical", mean, sym(cov), samples)

    @property
    def m(self):
        return self.mean.size

    def second_moment(self):
        return self.cov + np.outer(self.mean, self.mean)

    def augmented_moments(self):
        """Mean and second moment of the augmented state (x_0, 1)."""
        m = self.m
        mu = np.append(self.mean, 1.0)
        S = np.empty((m + 1, m + 1))
        S[:m, :m] = self.second_moment()
        S[:m, m] = self.mean
        S[m, :m] = self.mean
        S[m, m] = 1.0
        return mu, S

    def sample(self, rng, n):
        if self.kind == "deterministic":
            return np.broadcast_to(self.mean, (n, self.m)).copy()
        if self.kind == "gaussian":
            z = rng.standard_normal((n, self.m))
            return self.mean + z @ psd_sqrt(self.cov).T
        idx = rng.integers(0, self.samples.shape[0], size=n)
        return self.samples[idx].copy()

    def to_dict(self):
        if self.kind == "empirical":
            return {"kind": "empirical", "samples": self.samples.tolist()}
        if self.kind == "deterministic":
            return {"kind": "deterministic", "x0": self.mean.tolist()}
        return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "deterministic")
        if kind == "deterministic":
            return cls.deterministic(d["x0"])
        if kind == "gaussian":
            return cls.gaussian(d["mean"], d["cov"])
        if kind == "empirical":
            return cls.empirical(d["samples"])
        raise ValueError(f"unknown initial-state kind {kind!r}")


def psd_sqrt(S):
    """Symmetric square root of a PSD matrix (eigenvalues clipped at zero)."""
    w, V = np.linalg.eigh(sym(S))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass
class RiccatiSolution:
    """Quadratic value-function coefficients and the optimal affine gains.

    ``V_t(x) = x' P_t x + 2 r_t' x + q_t``; the optimal control is
    ``u_t = -K_star[t] x - L_star[t]``.
    """

    P: np.ndarray
    r: np.ndarray
    q: np.ndarray
    K_star: np.ndarray
    L_star: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.K_star.shape[0]

    def control(self, t, x):
        x = np.asarray(x, dtype=float)
        return -(x @ self.K_star[t].T) - self.L_star[t]

    def to_dict(self):
        return {
            "P": self.P.tolist(),
            "r": self.r.tolist(),
            "q": self.q.tolist(),
            "K_star": self.K_star.tolist(),
            "L_star": self.L_star.tolist(),
        }


def riccati_step(A, B, Q, R, S):
    """One backward step with cost-to-go curvature ``S``.

    Returns ``(P, K, G)`` where ``G = R + B' S B`` and
    ``P = Q + A' S A - A' S B G^{-1} B' S A``.
    """
    G = R + B.T @ S @ B
    BSA = B.T @ S @ A
    K = spd_solve(G, BSA)
    P = sym(Q + A.T @ S @ A - BSA.T @ K)
    return P, K, G


def solve_classical(problem: LqProblem) -> RiccatiSolution:
    """Backward Riccati recursion for the zero-mean-noise LQ problem."""
    T, m, n = problem.T, problem.m, problem.n
    P = np.zeros((T + 1, m, m))
    K = np.zeros((T, n, m))
    P[T] = problem.QT
    for t in range(T - 1, -1, -1):
        P[t], K[t], _ = riccati_step(problem.A[t], problem.B[t], problem.Q[t], problem.R[t], P[t + 1])
    return RiccatiSolution(P=P, r=np.zeros((T + 1, m)), q=np.zeros(T + 1), K_star=K, L_star=np.zeros((T, n)))


def value_at(sol: RiccatiSolution, t: int, x) -> float:
    """Evaluate ``x' P_t x + 2 r_t' x + q_t``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not 0 <= t < sol.P.shape[0]:
        raise DimensionMismatch(f"stage {t} outside 0..{sol.P.shape[0] - 1}")
    if x.shape != (sol.P.shape[1],):
        raise DimensionMismatch(f"state must have shape {(sol.P.shape[1],)}, got {x.shape}")
    return float(x @ sol.P[t] @ x + 2.0 * sol.r[t] @ x + sol.q[t])
