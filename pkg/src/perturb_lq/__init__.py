"""Finite-horizon LQ control: classical, constrained-scalar and Wasserstein-penalized
solvers, an exact policy-gradient trainer on the affine-augmented state, a Monte
Carlo simulator, and the portfolio and tracking experiments built on them."""

from .ambiguity import NoiseModel, RadiusConfig, build_noise_model, calibrate_radius, wasserstein2_1d
from .constrained_scalar import ConstraintSpec, PiecewisePolicy, solve_constrained
from .dro_riccati import solve_dro, solve_nominal, worst_case_noise
from .errors import PerturbLqError
from .lq_core import InitialState, LqProblem, RiccatiSolution, solve_classical
from .policy_gradient import AugmentedPolicy, TrainConfig, augment, cost, gradient, train
from .simulator import NoiseSource, compare, rollout

__all__ = [
    "AugmentedPolicy",
    "ConstraintSpec",
    "InitialState",
    "LqProblem",
    "NoiseModel",
    "NoiseSource",
    "PerturbLqError",
    "PiecewisePolicy",
    "RadiusConfig",
    "RiccatiSolution",
    "TrainConfig",
    "augment",
    "build_noise_model",
    "calibrate_radius",
    "compare",
    "cost",
    "gradient",
    "rollout",
    "solve_classical",
    "solve_constrained",
    "solve_dro",
    "solve_nominal",
    "train",
    "wasserstein2_1d",
    "worst_case_noise",
]
