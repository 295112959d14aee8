import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from perturb_lq.ambiguity import build_noise_model
from perturb_lq.constrained_scalar import ConstraintSpec
from perturb_lq.lq_core import InitialState, LqProblem

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def spd(rng, d, floor=0.5):
    G = rng.standard_normal((d, d))
    return floor * np.eye(d) + G @ G.T / d


def random_problem(rng, m, n, k, T, D_scale=0.5, q_floor=0.5):
    return LqProblem(
        T=T,
        A=[rng.standard_normal((m, m)) / np.sqrt(m) for _ in range(T)],
        B=[rng.standard_normal((m, n)) for _ in range(T)],
        D=[D_scale * rng.standard_normal((m, k)) for _ in range(T)],
        Q=[spd(rng, m, q_floor) for _ in range(T)],
        R=[spd(rng, n) for _ in range(T)],
        QT=spd(rng, m, q_floor),
    )


def random_noise(rng, T, k, M=6, shift=0.5):
    return build_noise_model([rng.standard_normal((M, k)) + shift * rng.standard_normal(k) for _ in range(T)])


def random_init(rng, m):
    return InitialState.gaussian(rng.standard_normal(m), spd(rng, m))


def random_instance(seed):
    """Small instance with nonzero noise mean; sizes drawn from the seed."""
    rng = np.random.default_rng(seed)
    m, n, k = (int(v) for v in rng.integers(1, 4, 3))
    T = int(rng.integers(2, 6))
    return random_problem(rng, m, n, k, T), random_noise(rng, T, k), random_init(rng, m), rng


def _oracle_branch(problem, t, y, z, H, d, sign, samples=None, rounds=10):
    """Zooming grid search of the branch objective over {K : H K <= d}."""
    n = problem.n
    A, B, Q, R = problem.A[t, 0, 0], problem.B[t, 0], problem.Q[t, 0, 0], problem.R[t]
    Dl = problem.D[t, 0]
    noise = np.zeros(1) if samples is None else samples @ Dl

    def f(Ks):
        s = A + sign * (Ks @ B)[:, None] + sign * noise[None, :]
        if sign > 0:
            wgt = np.where(s >= 0, y, z)
        else:
            wgt = np.where(s <= 0, y, z)
        return Q + np.einsum("pi,ij,pj->p", Ks, R, Ks) + np.mean(wgt * s**2, axis=1)

    per_axis = 10_000 if n == 1 else 100
    lo, hi = np.full(n, -3.0), np.full(n, 3.0)
    best_K, best = None, np.inf
    for _ in range(rounds):
        axes = [np.linspace(lo[j], hi[j], per_axis) for j in range(n)]
        Ks = np.array(np.meshgrid(*axes)).reshape(n, -1).T
        Ks = Ks[np.all(Ks @ H.T <= d + 1e-12, axis=1)]
        vals = f(Ks)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, best_K = vals[i], Ks[i]
        width = (hi - lo) / per_axis * 4
        lo, hi = best_K - width, best_K + width
    return best


def dp_oracle(problem, cons, noise=None):
    T = problem.T
    P_hat = np.empty(T + 1)
    P_bar = np.empty(T + 1)
    P_hat[T] = P_bar[T] = problem.QT[0, 0]
    for t in range(T - 1, -1, -1):
        smp = None if noise is None else noise.samples[t]
        args = (problem, t, P_hat[t + 1], P_bar[t + 1], cons.H[t], cons.d[t])
        P_hat[t] = _oracle_branch(*args, +1, smp)
        P_bar[t] = _oracle_branch(*args, -1, smp)
    return P_hat, P_bar


def random_scalar_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    T = int(rng.integers(1, 4))
    p = LqProblem(
        T=T,
        A=[[rng.uniform(-1.2, 1.2)]],
        B=[rng.uniform(-1, 1, (1, n)) for _ in range(T)],
        D=[[0.0]],
        Q=[[rng.uniform(0, 1)]],
        R=np.diag(rng.uniform(0.5, 2, n)),
        QT=[[rng.uniform(0.5, 2)]],
    )
    lo = rng.uniform(-1, 0.2, n)
    hi = lo + rng.uniform(0.2, 1.0, n)
    H = np.vstack([np.eye(n), -np.eye(n), rng.standard_normal((1, n))])
    d = np.concatenate([hi, -lo, [1.0]])
    return p, ConstraintSpec.broadcast(H, d, T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
