import numpy as np
import pytest

from distral.envsuite import TabularMdp
from distral.oracles import (
    exact_objective, exact_occupancy, finite_horizon_dp, monte_carlo_objective, policy_evaluation,
    regularized_reward_table, truncated_occupancy,
)
from distral.tabular import RegularizationConfig, soft_value_iteration, soft_values, uniform_policy

from helpers import random_mdp, random_policy


def cfg(alpha, beta):
    return RegularizationConfig.from_alpha_beta(alpha, beta)


def test_single_absorbing_state():
    m = TabularMdp(np.ones((1, 2, 1)), np.zeros((1, 2)), 0.9)
    mu = exact_occupancy(m, uniform_policy(1, 2), np.array([1.0]))
    assert mu.sum() == pytest.approx(10.0, abs=1e-12)


def test_symmetric_chain():
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 1] = P[1, 1, 0] = 1.0
    m = TabularMdp(P, np.zeros((2, 2)), 0.8)
    mu = exact_occupancy(m, uniform_policy(2, 2), np.array([0.5, 0.5]))
    assert np.allclose(mu[0], mu[1], atol=1e-14)


def test_occupancy_against_power_series(rng):
    for _ in range(5):
        m = random_mdp(rng, 5, 3)
        pi = random_policy(rng, 5, 3)
        start = rng.dirichlet(np.ones(5))
        mu = exact_occupancy(m, pi, start)
        assert np.abs(mu - truncated_occupancy(m, pi, start, 2000)).max() <= 1e-8
        assert mu.sum() == pytest.approx(1 / (1 - m.discount), abs=1e-9)


def test_objective_zero_for_prior_match(rng):
    m = random_mdp(rng, 4, 2)
    m = TabularMdp(m.transition, np.zeros((4, 2)), m.discount)
    pi = random_policy(rng, 4, 2)
    assert exact_objective([m, m], pi, [pi, pi], cfg(1.0, 3.0)) == pytest.approx(0.0, abs=1e-12)


def test_objective_reduces_to_return(rng):
    m = random_mdp(rng, 4, 3)
    pi = random_policy(rng, 4, 3)
    start = m.nonterminal_start()
    v, _ = policy_evaluation(m, pi)
    assert exact_objective([m], pi, [pi], cfg(1.0, 2.0)) == pytest.approx(start @ v, abs=1e-10)


def test_objective_minus_inf_for_zero_prob(rng):
    m = random_mdp(rng, 3, 2)
    pi = uniform_policy(3, 2)
    pi0 = pi.copy()
    pi0[0] = [1.0, 0.0]
    assert exact_objective([m], pi0, [pi], cfg(1.0, 1.0)) == -np.inf


def test_terminal_states_excluded(rng):
    m = random_mdp(rng, 4, 2, terminal=True)
    pi = random_policy(rng, 4, 2)
    pi[3] = [1.0, 0.0]  # a deterministic row at the absorbing state costs nothing
    assert np.isfinite(exact_objective([m], uniform_policy(4, 2), [pi], cfg(0.5, 2.0)))


def test_reg_reward_table(rng):
    m = random_mdp(rng, 3, 2, terminal=True)
    pi0, pi = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
    r = regularized_reward_table(m, pi0, pi, 0.5, 2.0)
    ref = m.reward + 0.25 * np.log(pi0) - 0.5 * np.log(pi)
    assert np.allclose(r[:2], ref[:2], atol=1e-14) and np.all(r[2] == 0)


def test_objective_permutation_invariant(rng):
    for _ in range(3):
        ms = [random_mdp(rng, 4, 3) for _ in range(2)]
        ms = [TabularMdp(x.transition, x.reward, 0.9) for x in ms]
        pi0 = random_policy(rng, 4, 3)
        pis = [random_policy(rng, 4, 3) for _ in ms]
        c = cfg(0.4, 2.5)
        start = rng.dirichlet(np.ones(4))
        base = exact_objective(ms, pi0, pis, c, start)
        ps, pa = rng.permutation(4), rng.permutation(3)
        permuted = []
        for x in ms:
            P = x.transition[np.ix_(ps, pa, ps)]
            permuted.append(TabularMdp(P, x.reward[np.ix_(ps, pa)], x.discount))
        got = exact_objective(permuted, pi0[np.ix_(ps, pa)], [p[np.ix_(ps, pa)] for p in pis], c, start[ps])
        assert got == pytest.approx(base, abs=1e-10)


@pytest.mark.slow
def test_objective_matches_monte_carlo():
    rng = np.random.default_rng(7)
    ms = [random_mdp(rng, 3, 2, discount=0.8) for _ in range(2)]
    pi0 = random_policy(rng, 3, 2)
    pis = [random_policy(rng, 3, 2) for _ in ms]
    c = cfg(0.5, 2.0)
    start = np.full(3, 1 / 3)
    exact = exact_objective(ms, pi0, pis, c, start)
    mean, se = monte_carlo_objective(ms, pi0, pis, c, start, 10**6, 80, np.random.default_rng(8))
    # horizon truncation bias: 0.8^80 is about 2e-8
    assert abs(mean - exact) <= 3 * se


def test_finite_horizon_one_step(rng):
    m = random_mdp(rng, 4, 3, discount=0.0)
    pi0 = random_policy(rng, 4, 3)
    c = cfg(0.7, 3.0)
    assert np.allclose(finite_horizon_dp(m, pi0, c, 1), soft_values(m.reward, pi0, c), atol=1e-14)


def test_finite_horizon_monotone(rng):
    m = random_mdp(rng, 4, 2)
    m = TabularMdp(m.transition, np.abs(m.reward), m.discount)
    pi0 = random_policy(rng, 4, 2)
    c = cfg(1.0, 2.0)
    prev = finite_horizon_dp(m, pi0, c, 1)
    for h in range(2, 30):
        v = finite_horizon_dp(m, pi0, c, h)
        assert np.all(v >= prev - 1e-14)
        prev = v


def test_finite_horizon_converges_to_fixed_point(rng):
    m = random_mdp(rng, terminal=True)
    pi0 = random_policy(rng, m.n_states, m.n_actions)
    c = cfg(0.3, 4.0)
    _, v, _ = soft_value_iteration(m, pi0, c, tol=1e-12)
    assert np.abs(finite_horizon_dp(m, pi0, c, 1000) - v).max() <= 1e-6


def test_finite_horizon_rejects_zero():
    with pytest.raises(ValueError):
        finite_horizon_dp(random_mdp(np.random.default_rng(0)), uniform_policy(2, 2), cfg(1, 1), 0)


def test_policy_evaluation_bellman(rng):
    m = random_mdp(rng, 5, 3)
    pi = random_policy(rng, 5, 3)
    v, q = policy_evaluation(m, pi)
    assert np.allclose(v, (pi * q).sum(axis=1), atol=1e-12)
