"""Experiment drivers: mean-variance allocation, DRO benchmark tracking and parameter sweeps.

Drivers return pandas frames; ``cli`` writes them to disk.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .ambiguity import zero_noise
from .constrained_scalar import ConstraintSpec, expected_value_constrained, solve_constrained
from .data_pipeline import PriceTable, TrackingConfig, build_tracking_problem, load_prices
from .dro_riccati import solve_dro, solve_nominal
from .errors import InvalidConfig
from .lq_core import InitialState, LqProblem, solve_classical
from .policy_gradient import AugmentedPolicy, TrainConfig, augment, cost, train
from .simulator import NoiseSource, rollout

SWEEP_PARAMS = ("T", "kappa_tc", "lambda_step", "L_ols")


def make_config(cls, d):
    """``cls(**d)`` with unknown keys reported as InvalidConfig."""
    if not isinstance(d, dict):
        raise InvalidConfig(f"{cls.__name__} config must be a JSON object")
    known = set(cls.__dataclass_fields__)
    extra = sorted(set(d) - known)
    if extra:
        raise InvalidConfig(f"unknown {cls.__name__} keys {extra}")
    return cls(**d)


def fixture_dir() -> Path:
    """Directory of the bundled synthetic price CSVs."""
    return Path(str(resources.files("perturb_lq") / "fixtures" / "synthetic"))


def _history_frame(res, extra=None):
    df = pd.DataFrame([{k: v for k, v in row.items() if k != "K_hat"} for row in res.history])
    if extra:
        for k, v in extra.items():
            df[k] = v
    return df


# ---------------------------------------------------------------------------
# mean-variance


@dataclass
class MvConfig:
    """Scalar-wealth allocation: one risk-free asset and ``len(excess)`` risky ones.

    ``K0`` is the initial fraction invested in every risky asset. Cost
    matrices are ``R_t = I + W'W`` with ``W`` uniform on [0, R_spread], drawn
    from ``seed``. ``constrained=False`` drops the allocation band.
    """

    T: int = 5
    rate: float = 1.06
    excess: tuple = (0.148, 0.16, 0.098)
    x0_mean: float = 10.0
    x0_var: float = 0.05
    lower: float = 0.1
    upper: float = 0.2
    constrained: bool = True
    K0: float = 0.08
    eta: float | str = 1e-4
    iters: int = 500
    seed: int = 0
    R_spread: float = 0.5

    def __post_init__(self):
        self.excess = tuple(float(e) for e in self.excess)
        if self.T < 1 or not self.excess:
            raise InvalidConfig("need T >= 1 and at least one risky asset")
        if self.constrained and self.lower > self.upper:
            raise InvalidConfig("allocation band is empty")

    def to_dict(self):
        d = asdict(self)
        d["excess"] = list(self.excess)
        return d


def mv_problem(cfg: MvConfig):
    """Problem, initial law and allocation constraints for the MV study."""
    T, n = cfg.T, len(cfg.excess)
    rng = np.random.default_rng(cfg.seed)
    W = rng.uniform(0.0, cfg.R_spread, (T, n, n))
    R = np.eye(n) + np.einsum("tji,tjk->tik", W, W)
    problem = LqProblem(
        T=T,
        A=[[cfg.rate]],
        B=[list(cfg.excess)],
        D=np.zeros((1, 1)),
        Q=np.zeros((1, 1)),
        R=R,
        QT=np.ones((1, 1)),
    )
    init = InitialState.gaussian([cfg.x0_mean], [[cfg.x0_var]])
    if cfg.constrained:
        cons = ConstraintSpec.box(cfg.lower, cfg.upper, T, n)
    else:
        cons = ConstraintSpec.unconstrained(T, n)
    return problem, init, cons


@dataclass
class MvResult:
    history: pd.DataFrame
    compare: pd.DataFrame
    policy: AugmentedPolicy
    c_star: float


def run_mv(cfg: MvConfig = MvConfig()) -> MvResult:
    """Unconstrained policy gradient against the classical optimum and the constrained benchmark."""
    problem, init, cons = mv_problem(cfg)
    T, n = problem.T, problem.n
    noise = zero_noise(T, 1)
    aug = augment(problem)
    classical = solve_classical(problem)
    c_star = cost(aug, AugmentedPolicy.from_solution(classical), init, noise)
    # the allocation convention is u = K x; the gradient policy is u = -K x - L
    K0 = AugmentedPolicy.from_affine(np.full((T, n, 1), -cfg.K0), np.zeros((T, n)))
    res = train(aug, K0, init, noise, TrainConfig(eta=cfg.eta, max_iters=cfg.iters, tol_norm_grad=0.0),
                c_star=c_star)
    pw = solve_constrained(problem, cons)
    c_cons = expected_value_constrained(pw, init)
    c_pg = res.history[-1]["cost"]
    compare = pd.DataFrame(
        {
            "policy": ["pg_final", "classical", "constrained"],
            "cost": [c_pg, c_star, c_cons],
            "normalized_error": [(c - c_star) / c for c in (c_pg, c_star, c_cons)],
        }
    )
    return MvResult(_history_frame(res), compare, res.policy, c_star)


# ---------------------------------------------------------------------------
# benchmark tracking


def fixture_tracking_config(**changes) -> TrackingConfig:
    """Reduced-scale calibration for the bundled fixture.

    Chosen so Q, R and Q_T are of order one and drifts (in shares) of order
    one; at full scale the admissible step size is around 1e-22 and training
    does not move.
    """
    base = dict(T=5, L_ols=60, L_adv=60, lambda_step=1.1e5, q_bar=1.0, kappa_tc=500.0,
                notional=1.5e4, x0_std=1.0)
    base.update(changes)
    return TrackingConfig(**base)


@dataclass
class TrackExperiment:
    """Tracking run settings. ``data`` is a CSV directory; None uses the bundled fixture."""

    tracking: TrackingConfig = field(default_factory=fixture_tracking_config)
    data: str | None = None
    eta: float | str = "auto"
    iters: int = 3000
    lam: float | None = None
    lam_factor: float = 10.0
    K0_gain: float = -0.5
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["tracking"] = self.tracking.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        base = fixture_tracking_config() if d.get("data") is None else TrackingConfig()
        tracking = d.get("tracking", {})
        make_config(TrackingConfig, tracking)
        d["tracking"] = base.replace(**tracking)
        return make_config(cls, d)


def default_penalty(problem: LqProblem, noise, factor=10.0) -> float:
    """``factor`` times the largest ``eig(D' P D)`` over stages of the nominal pre-solve."""
    P = solve_nominal(problem, noise).P
    lam_bar = max(np.linalg.eigvalsh(problem.D[t].T @ P[t + 1] @ problem.D[t])[-1] for t in range(problem.T))
    return float(factor * lam_bar)


@dataclass
class TrackResult:
    history: pd.DataFrame
    compare: pd.DataFrame
    policy: AugmentedPolicy
    c_star: float
    lam: float
    tracking: object


def load_table(exp: TrackExperiment) -> PriceTable:
    return load_prices(exp.data or fixture_dir(), benchmark=exp.tracking.benchmark)


def run_tracking(exp: TrackExperiment = None, table: PriceTable | None = None) -> TrackResult:
    """Train the DRO tracker by policy gradient on the penalized worst-case cost."""
    exp = exp or TrackExperiment()
    table = table if table is not None else load_table(exp)
    tp = build_tracking_problem(table, exp.tracking)
    problem, noise, init = tp.problem, tp.noise, tp.init
    T, m = problem.T, problem.m
    lam = exp.lam if exp.lam is not None else default_penalty(problem, noise, exp.lam_factor)
    aug = augment(problem)
    dro = solve_dro(problem, noise, lam)
    dro_pol = AugmentedPolicy.from_solution(dro.riccati)
    c_star = cost(aug, dro_pol, init, noise, lam)
    K0 = AugmentedPolicy.from_affine(np.broadcast_to(exp.K0_gain * np.eye(m), (T, m, m)), np.zeros((T, m)))
    res = train(aug, K0, init, noise, TrainConfig(eta=exp.eta, max_iters=exp.iters, tol_norm_grad=0.0),
                c_star=c_star, keep_policies=True, lam=lam)
    gains = [float(np.linalg.norm(row["K_hat"])) for row in res.history]
    history = _history_frame(res, {"gain_norm": gains})

    nominal_pol = AugmentedPolicy.from_solution(solve_nominal(problem, noise))
    policies = {"pg_final": res.policy, "dro_riccati": dro_pol, "nominal": nominal_pol}
    rows = []
    for name, pol in policies.items():
        row = {"policy": name, "penalized_cost": cost(aug, pol, init, noise, lam)}
        if tp.holdout is not None:
            src = NoiseSource("historical", exp.seed, path=tp.holdout)
            row["holdout_cost"] = rollout(problem, pol, init, src, 1000).mean_cost
        rows.append(row)
    return TrackResult(history, pd.DataFrame(rows), res.policy, c_star, lam, tp)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepSpec:
    """One-parameter sensitivity sweep around the baseline tracking run."""

    param: str
    grid: list
    baseline: float | None = None
    window: int = 50

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise InvalidConfig(f"sweep parameter must be one of {SWEEP_PARAMS}")
        if not self.grid:
            raise InvalidConfig("sweep grid is empty")
        if self.window < 1:
            raise InvalidConfig("running-mean window must be >= 1")
        if self.param in ("T", "L_ols"):
            self.grid = [int(v) for v in self.grid]


def running_mean(x, window):
    """Trailing mean over up to ``window`` points."""
    return pd.Series(np.asarray(x, float)).rolling(window, min_periods=1).mean().to_numpy()


def run_sweep(exp: TrackExperiment, spec: SweepSpec, table: PriceTable | None = None) -> pd.DataFrame:
    """Percent cost difference of each grid value against the baseline curve, smoothed.

    Long format: one row per (value, iteration).
    """
    table = table if table is not None else load_table(exp)
    base_val = spec.baseline if spec.baseline is not None else getattr(exp.tracking, spec.param)

    def curve(v):
        e = TrackExperiment(**{**exp.__dict__, "tracking": exp.tracking.replace(**{spec.param: v})})
        return run_tracking(e, table).history["cost"].to_numpy()

    base = curve(base_val)
    frames = []
    for v in spec.grid:
        c = base if v == base_val else curve(v)
        n = min(len(c), len(base))
        pct = 100.0 * (c[:n] - base[:n]) / base[:n]
        frames.append(
            pd.DataFrame(
                {
                    "param": spec.param,
                    "value": v,
                    "iteration": np.arange(n),
                    "cost": c[:n],
                    "baseline_cost": base[:n],
                    "pct_diff": pct,
                    "running_mean": running_mean(pct, spec.window),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def sweep_summary(df: pd.DataFrame, tail_frac=0.1) -> pd.DataFrame:
    """Start gap (first running-mean point) and tail gap (mean over the last ``tail_frac``) per value."""
    out = []
    for v, g in df.groupby("value", sort=False):
        rm = g["running_mean"].to_numpy()
        k = max(1, int(round(tail_frac * rm.size)))
        out.append({"value": v, "start": rm[0], "tail": float(rm[-k:].mean())})
    return pd.DataFrame(out)
