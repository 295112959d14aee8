"""Empirical noise model, Wasserstein-ball radius and a 1-D W2 distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DimensionUnsupported, EmptySampleSet, InvalidConfig


@dataclass(frozen=True)
class NoiseModel:
    """Per-stage empirical noise samples with their mean and uncentered second moment.

    ``samples[t]`` has shape (M_t, k); ``mean`` is (T, k) and
    ``second_moment`` is (T, k, k).
    """

    samples: tuple
    mean: np.ndarray
    second_moment: np.ndarray

    @property
    def T(self):
        return len(self.samples)

    @property
    def k(self):
        return self.mean.shape[1]

    def centered_cov(self, t):
        return self.second_moment[t] - np.outer(self.mean[t], self.mean[t])

    def to_dict(self):
        return {"samples": [s.tolist() for s in self.samples]}


def build_noise_model(samples) -> NoiseModel:
    """Build a NoiseModel from a per-stage sequence of sample arrays.

    Each entry may be (M,) for scalar noise or (M, k).
    """
    stages = []
    for t, s in enumerate(samples):
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise EmptySampleSet(f"stage {t} has no noise samples")
        s = s.copy()
        s.setflags(write=False)
        stages.append(s)
    if not stages:
        raise EmptySampleSet("no stages given")
    k = stages[0].shape[1]
    if any(s.shape[1] != k for s in stages):
        raise DimensionMismatch("noise samples have inconsistent dimension across stages")
    mean = np.stack([s.mean(axis=0) for s in stages])
    second = np.stack([s.T @ s / s.shape[0] for s in stages])
    second = 0.5 * (second + second.transpose(0, 2, 1))
    return NoiseModel(tuple(stages), mean, second)


def broadcast_noise(samples, T) -> NoiseModel:
    """Use one sample set (M, k) for every stage."""
    return build_noise_model([samples] * T)


def zero_noise(T, k) -> NoiseModel:
    return broadcast_noise(np.zeros((1, k)), T)


@dataclass(frozen=True)
class RadiusConfig:
    """Constants of the light-tailed measure-concentration bound.

    With the default c1 = c2 = 1 the radius only has the right shape in M;
    it is not a certified bound.
    """

    c1: float = 1.0
    c2: float = 1.0
    a: float = 2.0
    m_dim: int = 1
    beta: float = 0.05

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise InvalidConfig("c1 and c2 must be positive")
        if not self.a > 1:
            raise InvalidConfig("light-tail exponent a must exceed 1")
        if not 0 < self.beta < 1:
            raise InvalidConfig("beta must lie in (0, 1)")
        if int(self.m_dim) != self.m_dim or self.m_dim < 1:
            raise InvalidConfig("m_dim must be a positive integer")
        if self.m_dim == 2:
            raise InvalidConfig("m_dim = 2 is excluded by the concentration bound")
        if self.c1 <= self.beta:
            # log(c1/beta) <= 0 would give a non-positive radius
            raise InvalidConfig("c1 must exceed beta for a positive radius")


def calibrate_radius(M: int, cfg: RadiusConfig) -> float:
    """Radius of the Wasserstein ball holding the true law with confidence 1 - beta."""
    if M < 1:
        raise InvalidConfig("sample count M must be >= 1")
    log_term = math.log(cfg.c1 / cfg.beta)
    ratio = log_term / (cfg.c2 * M)
    if M >= log_term / cfg.c2:
        power = 1.0 / max(cfg.m_dim, 2)
    else:
        power = 1.0 / cfg.a
    return ratio**power


def wasserstein2_1d(a, b) -> float:
    """W2 distance between two equal-size scalar empirical measures."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for x in (a, b):
        if x.ndim == 2 and x.shape[1] > 1:
            raise DimensionUnsupported("only scalar samples are supported")
    a, b = a.ravel(), b.ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySampleSet("empty sample set")
    if a.size != b.size:
        raise DimensionMismatch("sample sets must have equal cardinality")
    return float(np.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2)))


def load_noise_csv(path, T) -> NoiseModel:
    """Read samples (one row each, one column per noise coordinate, header row) and use them at every stage."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] == 0:
        raise EmptySampleSet(f"{path} holds no samples")
    return broadcast_noise(data, T)
