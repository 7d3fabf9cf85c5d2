"""Belief filtering, the exact finite-horizon solver, and the closed-form
pattern Q-table, each checked against independent oracles."""

import numpy as np
import pytest

from dynchan import (
    CapacityError,
    ConfigError,
    FiniteHorizonSolver,
    FixedPatternModel,
    ImpossibleObservation,
    NumericError,
    PhaseCycleModel,
    bellman_backup,
    belief_step,
    build_joint_from_marginals,
    discounted_return,
    even_partition,
    exact_finite_horizon_solve,
    expand_to_joint,
    fixed_pattern_q,
    marginal_channel_chain,
    observation_update,
    spawn_rng,
    transition_update,
    truncation_error_bound,
    uniform_belief,
)
from dynchan.beliefs import belief_from_state, channel_marginals, validate_belief
from dynchan.models import bits_table


def rr_joint(n, p):
    return FixedPatternModel(even_partition(n, 1), p).to_joint()


class TestBeliefBasics:
    def test_uniform_and_point_beliefs(self):
        np.testing.assert_allclose(uniform_belief(2), 0.25)
        b = belief_from_state(3, 2)
        assert b[3] == 1.0 and b.sum() == 1.0

    def test_validate_belief(self):
        with pytest.raises(ConfigError):
            validate_belief(np.array([0.5, 0.5, 0.1]))  # not 2^N
        with pytest.raises(ConfigError):
            validate_belief(np.array([0.9, 0.3, -0.1, -0.1]))
        with pytest.raises(ConfigError):
            validate_belief(np.array([0.5, 0.1, 0.1, 0.1]))

    def test_channel_marginals(self):
        b = np.array([0.1, 0.2, 0.3, 0.4])
        # P(ch0 good) = w1 + w3, P(ch1 good) = w2 + w3
        np.testing.assert_allclose(channel_marginals(b), [0.6, 0.7])


class TestObservationUpdate:
    def test_conditions_and_renormalizes(self):
        b = np.array([0.1, 0.2, 0.3, 0.4])
        out = observation_update(b, 0, 1)
        np.testing.assert_allclose(out, [0.0, 0.2 / 0.6, 0.0, 0.4 / 0.6])
        out = observation_update(b, 1, 0)
        np.testing.assert_allclose(out, [0.1 / 0.3, 0.2 / 0.3, 0.0, 0.0])

    def test_inconsistent_states_get_exact_zeros(self):
        out = observation_update(uniform_belief(3), 2, 1)
        idx = np.arange(8)
        assert (out[(idx >> 2) & 1 == 0] == 0.0).all()

    def test_impossible_observation(self):
        with pytest.raises(ImpossibleObservation):
            observation_update(belief_from_state(1, 2), 0, 0)

    def test_action_bounds(self):
        with pytest.raises(ConfigError):
            observation_update(uniform_belief(2), 2, 1)


class TestTransitionUpdate:
    def test_matches_matrix_product(self):
        joint = rr_joint(2, 0.7)
        b = np.array([0.0, 0.8, 0.2, 0.0])
        out = transition_update(b, joint)
        np.testing.assert_allclose(out, [0.0, 0.38, 0.62, 0.0], atol=1e-12)

    def test_accepts_raw_matrix(self):
        P = np.array([[0.5, 0.5], [0.0, 1.0]])
        np.testing.assert_allclose(transition_update(np.array([1.0, 0.0]), P), [0.5, 0.5])

    def test_chained_updates_stay_normalized(self):
        joint = build_joint_from_marginals([
            np.array([[0.8, 0.2], [0.3, 0.7]]),
            np.array([[0.6, 0.4], [0.1, 0.9]]),
        ])
        rng = spawn_rng(3, 0)
        b = uniform_belief(2)
        g = bits_table(2)
        for _ in range(1000):
            a = int(rng.integers(2))
            marg = float(b @ g[:, a])
            obs = 1 if rng.random() < marg else 0
            b = belief_step(b, joint, a, obs)
            assert abs(b.sum() - 1.0) <= 1e-9
            assert b.min() >= 0.0


class TestMarginalChannelChain:
    def test_round_trips_product_joints(self):
        rng = spawn_rng(11, 0)
        for _ in range(20):
            chains = []
            for _ in range(2):
                p01 = rng.uniform(0.05, 0.95)
                p11 = rng.uniform(0.05, 0.95)
                chains.append(np.array([[1 - p01, p01], [1 - p11, p11]]))
            joint = build_joint_from_marginals(chains)
            for k, chain in enumerate(chains):
                np.testing.assert_allclose(marginal_channel_chain(joint, k), chain, atol=1e-9)

    def test_never_good_channel_rejected(self):
        joint = PhaseCycleModel(3, [(0,), (1,)], 0.5).to_joint()
        with pytest.raises(ConfigError):
            marginal_channel_chain(joint, 2)
        with pytest.raises(ConfigError):
            marginal_channel_chain(joint, 3)


def brute_force_expectimax(belief, joint, gamma, horizon):
    """Reference expectimax written from the Bayes filter definitions,
    no memoization, no shared code with the solver internals."""
    P = joint.transition.toarray()
    table = bits_table(joint.n_channels)

    def value(b, h):
        best = -np.inf
        for a in range(joint.n_channels):
            g = float(b @ table[:, a])
            v = 2.0 * g - 1.0
            if h > 1:
                for obs, prob in ((1, g), (0, 1.0 - g)):
                    if prob <= 0.0:
                        continue
                    mask = table[:, a] == float(obs)
                    post = np.where(mask, b, 0.0)
                    post = (post / post.sum()) @ P
                    v += gamma * prob * value(post / post.sum(), h - 1)
            best = max(best, v)
        return best

    return value(np.asarray(belief, dtype=np.float64), horizon)


class TestFiniteHorizonSolver:
    def test_horizon_one_is_myopic(self):
        joint = rr_joint(3, 0.6)
        b = np.array([0, 0.5, 0.3, 0, 0.2, 0, 0, 0], dtype=np.float64)
        value, action = exact_finite_horizon_solve(joint, 0.9, 1, b)
        marg = channel_marginals(b)
        assert action == int(np.argmax(marg))
        assert value == pytest.approx(2 * marg.max() - 1)

    def test_matches_brute_force(self):
        models = [
            rr_joint(2, 0.8),
            rr_joint(3, 0.55),
            build_joint_from_marginals([
                np.array([[0.7, 0.3], [0.2, 0.8]]),
                np.array([[0.9, 0.1], [0.4, 0.6]]),
            ]),
        ]
        for joint in models:
            solver = FiniteHorizonSolver(joint, 0.9)
            b = joint.stationary()
            for h in range(1, 5):
                value, _ = solver.solve(b, h)
                ref = brute_force_expectimax(b, joint, 0.9, h)
                assert value == pytest.approx(ref, abs=1e-9)

    def test_action_values_agree_with_solve(self):
        joint = rr_joint(3, 0.7)
        solver = FiniteHorizonSolver(joint, 0.9)
        b = joint.stationary()
        vals = solver.action_values(b, 4)
        value, action = solver.solve(b, 4)
        assert vals.max() == pytest.approx(value, abs=1e-12)
        assert int(np.argmax(vals)) == action

    def test_capacity_limits(self):
        with pytest.raises(CapacityError):
            FiniteHorizonSolver(rr_joint(5, 0.5), 0.9)
        solver = FiniteHorizonSolver(rr_joint(2, 0.5), 0.9)
        with pytest.raises(CapacityError):
            solver.solve(uniform_belief(2), 11)
        with pytest.raises(CapacityError):
            solver.solve(uniform_belief(2), 0)
        with pytest.raises(ConfigError):
            FiniteHorizonSolver(rr_joint(2, 0.5), 1.0)

    def test_bellman_backup_with_continuation(self):
        joint = rr_joint(2, 0.7)
        b = np.array([0.0, 0.6, 0.4, 0.0])
        value, action = bellman_backup(b, joint, 0.9, continuation=lambda _: 5.0)
        # every branch continues at 5.0, so value = 2 max(g) - 1 + 0.9 * 5
        assert action == 0
        assert value == pytest.approx(2 * 0.6 - 1 + 4.5)


def generic_q_oracle(subsets, p, gamma, sweeps=2000):
    """Plain value iteration over the (previous subset, channel) table,
    coupling the reward and the successor through one advance draw."""
    m = len(subsets)
    n = sum(len(s) for s in subsets)
    subset_of = np.empty(n, dtype=int)
    for i, ss in enumerate(subsets):
        subset_of[list(ss)] = i
    states = np.arange(m)
    r_adv = np.where(subset_of[None, :] == ((states + 1) % m)[:, None], 1.0, -1.0)
    r_stay = np.where(subset_of[None, :] == states[:, None], 1.0, -1.0)
    q = np.zeros((m, n))
    for _ in range(sweeps):
        v = q.max(axis=1)
        q_new = p * (r_adv + gamma * np.roll(v, -1)[:, None]) + (1 - p) * (r_stay + gamma * v[:, None])
        if np.abs(q_new - q).max() < 1e-13:
            return q_new
        q = q_new
    return q


class TestFixedPatternQ:
    def test_matches_generic_value_iteration(self):
        for subsets, p in [
            (even_partition(4, 1), 0.8),
            (even_partition(6, 2), 0.3),
            (even_partition(4, 2), 0.5),
        ]:
            table = fixed_pattern_q(subsets, p, 0.9)
            np.testing.assert_allclose(table.q, generic_q_oracle(subsets, p, 0.9), atol=1e-8)

    def test_deterministic_cycle_closed_form(self):
        table = fixed_pattern_q(even_partition(2, 1), 1.0, 0.9)
        np.testing.assert_allclose(table.values, 10.0, atol=1e-8)
        assert table.greedy_action(0) == 1
        assert table.greedy_action(1) == 0
        assert table.q[0, 0] == pytest.approx(8.0, abs=1e-8)

    def test_half_probability_ties_span_both_subsets(self):
        table = fixed_pattern_q(even_partition(4, 1), 0.5, 0.9)
        assert table.argmax_channels(0) == (0, 1)
        assert table.argmax_channels(3) == (0, 3)

    def test_argmax_follows_the_tracking_rule(self):
        # p above 1/2: bet on the advance; below: bet on the hold
        table = fixed_pattern_q(even_partition(6, 2), 0.9, 0.9)
        assert table.argmax_channels(0) == (2, 3)
        table = fixed_pattern_q(even_partition(6, 2), 0.2, 0.9)
        assert table.argmax_channels(0) == (0, 1)

    def test_single_subset(self):
        table = fixed_pattern_q([(0, 1)], 0.4, 0.9)
        np.testing.assert_allclose(table.values, 10.0, atol=1e-8)
        assert np.isnan(table.q_other).all()
        assert table.argmax_channels(0) == (0, 1)

    def test_two_subsets_have_no_other_class(self):
        table = fixed_pattern_q(even_partition(2, 1), 0.7, 0.9)
        assert np.isnan(table.q_other).all()

    def test_non_convergence_raises(self):
        with pytest.raises(NumericError):
            fixed_pattern_q(even_partition(4, 1), 0.9, 0.9, max_iters=3)

    def test_gamma_validation(self):
        with pytest.raises(ConfigError):
            fixed_pattern_q(even_partition(2, 1), 0.5, 1.0)


class TestReturnHelpers:
    def test_discounted_return(self):
        assert discounted_return([1.0, -1.0, 1.0], 0.5) == pytest.approx(1 - 0.5 + 0.25)
        assert discounted_return([], 0.9) == 0.0

    def test_truncation_bound(self):
        assert truncation_error_bound(0.9, 100) < 3e-4
        assert truncation_error_bound(0.9, 100) == pytest.approx(0.9 ** 100 / 0.1)
