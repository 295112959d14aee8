import numpy as np
import pytest

from perturb_lq.ambiguity import broadcast_noise, zero_noise
from perturb_lq.constrained_scalar import ConstraintSpec, expected_value_constrained, solve_constrained
from perturb_lq.errors import DimensionMismatch, InvalidConfig
from perturb_lq.lq_core import InitialState, LqProblem, solve_classical
from perturb_lq.policy_gradient import AugmentedPolicy, augment, cost, forward_stats
from perturb_lq.simulator import NoiseSource, compare, rollout

from conftest import random_instance, random_problem


def unit_scalar(T=1, D=0.0):
    return LqProblem(T=T, A=[[1.0]], B=[[1.0]], D=[[D]], Q=[[1.0]], R=[[1.0]], QT=[[1.0]])


def test_zero_everything_costs_nothing():
    p = unit_scalar(3)
    src = NoiseSource("empirical", 0, zero_noise(3, 1))
    rep = rollout(p, AugmentedPolicy.zeros(3, 1, 1), InitialState.deterministic([0.0]), src, 50)
    assert rep.mean_cost == 0.0 and rep.stderr == 0.0


def test_one_step_hand_mean():
    # x0 = 1, u = 0: cost = 1 + 1
    p = unit_scalar(1)
    src = NoiseSource("empirical", 0, zero_noise(1, 1))
    rep = rollout(p, AugmentedPolicy.zeros(1, 1, 1), InitialState.deterministic([1.0]), src, 10)
    assert rep.mean_cost == 2.0
    np.testing.assert_array_equal(rep.state_mean[:, 0], [1.0, 1.0])


@pytest.mark.parametrize("seed", range(3))
def test_monte_carlo_matches_closed_form(seed):
    p, noise, init, rng = random_instance(seed)
    pol = AugmentedPolicy.from_solution(solve_classical(p))
    rep = rollout(p, pol, init, NoiseSource("empirical", seed, noise), 20_000)
    exact = cost(augment(p), pol, init, noise)
    assert abs(rep.mean_cost - exact) <= 4 * rep.stderr


def test_second_moments_match_forward_stats(rng):
    p = random_problem(rng, 2, 1, 2, 3)
    noise = broadcast_noise(rng.standard_normal((4, 2)) + 0.5, 3)
    init = InitialState.gaussian([1.0, -0.5], np.eye(2))
    pol = AugmentedPolicy(0.3 * rng.standard_normal((3, 1, 3)))
    rep = rollout(p, pol, init, NoiseSource("empirical", 3, noise), 40_000)
    st = forward_stats(augment(p), pol, init, noise)
    scale = np.abs(st.Sigma[:, :2, :2]).max()
    np.testing.assert_allclose(rep.state_mean, st.mu[:, :2], atol=0.03 * np.sqrt(scale))
    np.testing.assert_allclose(rep.state_second_moment, st.Sigma[:, :2, :2], atol=0.05 * scale)


def test_same_seed_is_deterministic_and_prefix_stable(rng):
    p, noise, init, _ = random_instance(7)
    pol = AugmentedPolicy.from_solution(solve_classical(p))
    src = NoiseSource("gaussian", 11, noise)
    a = rollout(p, pol, init, src, 5000)
    b = rollout(p, pol, init, src, 5000)
    assert np.array_equal(a.costs, b.costs)
    longer = rollout(p, pol, init, src, 9000)
    assert np.array_equal(longer.costs[:5000], a.costs)
    other = rollout(p, pol, init, src.with_seed(12), 5000)
    assert not np.array_equal(other.costs, a.costs)


def test_common_random_numbers():
    p = unit_scalar(2, D=1.0)
    noise = broadcast_noise([[-1.0], [0.5], [2.0]], 2)
    init = InitialState.gaussian([0.0], [[1.0]])
    src = NoiseSource("empirical", 4, noise)
    same = AugmentedPolicy.zeros(2, 1, 1)
    out = compare(p, {"a": same, "b": AugmentedPolicy(same.K_hat.copy())}, init, src, 3000)
    assert np.array_equal(out["a"].costs, out["b"].costs)
    indep = compare(p, {"a": same, "b": same}, init, src, 3000, common_random_numbers=False)
    assert not np.array_equal(indep["a"].costs, indep["b"].costs)


def test_piecewise_policy_rollout_matches_value():
    p = LqProblem(T=3, A=[[1.06]], B=[[0.148, 0.16]], D=[[0.0]], Q=[[0.0]], R=np.eye(2), QT=[[1.0]])
    pol = solve_constrained(p, ConstraintSpec.box(0.1, 0.2, 3, 2))
    init = InitialState.gaussian([0.5], [[1.0]])
    rep = rollout(p, pol, init, NoiseSource("empirical", 0, zero_noise(3, 1)), 20_000)
    assert abs(rep.mean_cost - expected_value_constrained(pol, init)) <= 4 * rep.stderr


def test_historical_source_replays_one_path(tmp_path):
    p = unit_scalar(2, D=1.0)
    src = NoiseSource("historical", path=[0.5, -1.0])
    rep = rollout(p, AugmentedPolicy.zeros(2, 1, 1), InitialState.deterministic([1.0]), src, 4, store=True)
    # x: 1 -> 1.5 -> 0.5
    np.testing.assert_allclose(rep.states[0, :, 0], [1.0, 1.5, 0.5])
    assert np.all(rep.costs == rep.costs[0])
    assert rep.costs[0] == pytest.approx(1.0 + 2.25 + 0.25)
    out = tmp_path / "traj.csv"
    rep.write_trajectories(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "path,t,x0,u0" and len(lines) == 1 + 4 * 3


def test_callable_policy():
    p = unit_scalar(1)
    src = NoiseSource("empirical", 0, zero_noise(1, 1))
    rep = rollout(p, lambda t, X: -0.5 * X, InitialState.deterministic([1.0]), src, 3)
    assert rep.mean_cost == pytest.approx(1.5)


def test_errors():
    p = unit_scalar(2)
    init = InitialState.deterministic([1.0])
    pol = AugmentedPolicy.zeros(2, 1, 1)
    with pytest.raises(DimensionMismatch):
        rollout(p, pol, init, NoiseSource("empirical", 0, zero_noise(3, 1)), 10)
    with pytest.raises(DimensionMismatch):
        rollout(p, pol, init, NoiseSource("historical", path=[0.1]), 10)
    with pytest.raises(DimensionMismatch):
        rollout(p, pol, InitialState.deterministic([1.0, 2.0]), NoiseSource("empirical", 0, zero_noise(2, 1)), 10)
    with pytest.raises(InvalidConfig):
        rollout(p, pol, init, NoiseSource("empirical", 0, zero_noise(2, 1)), 0)
    with pytest.raises(InvalidConfig):
        NoiseSource("bootstrap", 0, zero_noise(2, 1))
    with pytest.raises(InvalidConfig):
        NoiseSource("historical")
    with pytest.raises(InvalidConfig):
        rollout(p, 3.0, init, NoiseSource("empirical", 0, zero_noise(2, 1)), 10)
