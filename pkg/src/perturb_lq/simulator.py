"""Seeded Monte Carlo rollouts of LQ closed loops.

Paths are generated in fixed-size chunks, each from its own counter-based
stream keyed by ``(seed, chunk index)``; asking for more paths never changes the
earlier ones, and the noise drawn does not depend on the policy, so policies
compared under one seed see identical disturbances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import NoiseModel
from .constrained_scalar import PiecewisePolicy, piecewise_control
from .errors import DimensionMismatch, InvalidConfig
from .lq_core import InitialState, LqProblem, psd_sqrt

CHUNK = 4096


@dataclass(frozen=True)
class NoiseSource:
    """Where rollout disturbances come from.

    ``empirical`` resamples the per-stage samples uniformly, ``gaussian`` draws
    from a normal law with the samples' mean and centered covariance, and
    ``historical`` replays one fixed path for every rollout.
    """

    kind: str
    seed: int = 0
    noise: NoiseModel | None = None
    path: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("empirical", "gaussian", "historical"):
            raise InvalidConfig(f"unknown noise source kind {self.kind!r}")
        if self.kind == "historical":
            if self.path is None:
                raise InvalidConfig("historical noise source needs a path")
            path = np.asarray(self.path, dtype=float)
            if path.ndim == 1:
                path = path[:, None]
            object.__setattr__(self, "path", path)
        elif self.noise is None:
            raise InvalidConfig(f"{self.kind} noise source needs a noise model")

    def with_seed(self, seed):
        return NoiseSource(self.kind, seed, self.noise, self.path)

    def check(self, problem: LqProblem):
        if self.kind == "historical":
            if self.path.shape[0] < problem.T:
                raise DimensionMismatch(f"historical path has {self.path.shape[0]} steps, horizon is {problem.T}")
            if self.path.shape[1] != problem.k:
                raise DimensionMismatch("historical path dimension differs from noise dimension")
        elif self.noise.T != problem.T or self.noise.k != problem.k:
            raise DimensionMismatch("noise model does not match problem horizon/dimension")

    def draw(self, rng, t, size):
        if self.kind == "historical":
            return np.broadcast_to(self.path[t], (size, self.path.shape[1]))
        if self.kind == "empirical":
            samples = self.noise.samples[t]
            return samples[rng.integers(0, samples.shape[0], size=size)]
        cov = self.noise.centered_cov(t)
        return self.noise.mean[t] + rng.standard_normal((size, self.noise.k)) @ psd_sqrt(cov).T


@dataclass
class RolloutReport:
    mean_cost: float
    stderr: float
    n_paths: int
    state_mean: np.ndarray
    state_second_moment: np.ndarray
    costs: np.ndarray = field(repr=False, default=None)
    states: np.ndarray | None = field(repr=False, default=None)
    controls: np.ndarray | None = field(repr=False, default=None)

    def to_dict(self):
        return {"mean_cost": self.mean_cost, "stderr": self.stderr, "n_paths": self.n_paths}

    def write_trajectories(self, path):
        if self.states is None:
            raise InvalidConfig("rollout was run without storing trajectories")
        N, T1, m = self.states.shape
        n = self.controls.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "t"] + [f"x{i}" for i in range(m)] + [f"u{j}" for j in range(n)])
            for p in range(N):
                for t in range(T1):
                    u = self.controls[p, t] if t < T1 - 1 else np.full(n, np.nan)
                    w.writerow([p, t] + [repr(float(v)) for v in self.states[p, t]] + [repr(float(v)) for v in u])


def controller(policy):
    """Adapt any supported policy to ``f(t, X) -> U`` on batches of states."""
    if isinstance(policy, PiecewisePolicy):
        return lambda t, X: piecewise_control(policy, t, X[:, 0])
    if hasattr(policy, "control"):
        return policy.control
    if callable(policy):
        return policy
    raise InvalidConfig(f"unsupported policy type {type(policy).__name__}")


def _stream(seed, chunk):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk)])))


def rollout(problem: LqProblem, policy, init: InitialState, src: NoiseSource, n_paths: int,
            store=False) -> RolloutReport:
    """Simulate ``n_paths`` closed-loop trajectories and average their costs."""
    if n_paths < 1:
        raise InvalidConfig("n_paths must be >= 1")
    if init.m != problem.m:
        raise DimensionMismatch("initial state dimension does not match problem")
    src.check(problem)
    ctrl = controller(policy)
    T, m, n = problem.T, problem.m, problem.n
    costs = np.empty(n_paths)
    s1 = np.zeros((T + 1, m))
    s2 = np.zeros((T + 1, m, m))
    states = np.empty((n_paths, T + 1, m)) if store else None
    controls = np.empty((n_paths, T, n)) if store else None
    for c, start in enumerate(range(0, n_paths, CHUNK)):
        size = min(CHUNK, n_paths - start)
        rng = _stream(src.seed, c)
        # always draw a full chunk so a shorter run is an exact prefix of a longer one
        X = init.sample(rng, CHUNK)[:size]
        J = np.zeros(size)
        for t in range(T):
            U = np.asarray(ctrl(t, X), dtype=float).reshape(size, n)
            if U.shape != (size, n):
                raise DimensionMismatch("policy returned controls of the wrong shape")
            s1[t] += X.sum(axis=0)
            s2[t] += X.T @ X
            if store:
                states[start:start + size, t] = X
                controls[start:start + size, t] = U
            J += np.einsum("pi,ij,pj->p", X, problem.Q[t], X) + np.einsum("pi,ij,pj->p", U, problem.R[t], U)
            W = src.draw(rng, t, CHUNK)[:size]
            X = X @ problem.A[t].T + U @ problem.B[t].T + W @ problem.D[t].T
        J += np.einsum("pi,ij,pj->p", X, problem.QT, X)
        s1[T] += X.sum(axis=0)
        s2[T] += X.T @ X
        if store:
            states[start:start + size, T] = X
        costs[start:start + size] = J
    stderr = float(costs.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return RolloutReport(
        mean_cost=float(costs.mean()),
        stderr=stderr,
        n_paths=n_paths,
        state_mean=s1 / n_paths,
        state_second_moment=s2 / n_paths,
        costs=costs,
        states=states,
        controls=controls,
    )


def compare(problem: LqProblem, policies: dict, init: InitialState, src: NoiseSource, n_paths: int,
            common_random_numbers=True) -> dict:
    """Roll out several policies; with common random numbers they share every draw."""
    out = {}
    for i, (name, pol) in enumerate(policies.items()):
        s = src if common_random_numbers else src.with_seed(src.seed + 7919 * (i + 1))
        out[name] = rollout(problem, pol, init, s, n_paths)
    return out
