import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polopt import oracle
from polopt.errors import NonErgodicChain, SingularSystem, ValidationError
from polopt.mdp import (DeterministicTablePolicy, Setup, SoftmaxPolicy, TabularMdp, bellman_residual,
                        grad_log_pi, induced_chain, is_ergodic, load_mdp, mdp_from_dict, objective,
                        random_episodic_mdp, random_mdp, save_mdp, score_table, terminalize,
                        value_functions)


def bandit(rewards):
    rewards = np.atleast_2d(rewards).astype(float)
    A = rewards.shape[1]
    return TabularMdp(np.ones((1, A, 1)), rewards, np.ones(1))


def chain(P, R, rho0=None):
    """MDP with a single action from a state chain and per-state reward."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    rho0 = np.full(n, 1.0 / n) if rho0 is None else rho0
    return TabularMdp(P[:, None, :], np.asarray(R, dtype=float)[:, None], rho0)


class TestSetup:
    def test_kinds(self):
        assert Setup.average().is_average
        assert Setup.discounted(0.9).kind == "discounted"
        assert str(Setup.discounted(0.9)) == "discounted(0.9)"

    @pytest.mark.parametrize("text", ["average", "discounted(0.7)", "discounted(1)"])
    def test_parse_roundtrip(self, text):
        assert str(Setup.parse(text)) == text

    @pytest.mark.parametrize("gamma", [0.0, -0.1, 1.5])
    def test_rejects_bad_gamma(self, gamma):
        with pytest.raises(ValidationError):
            Setup.discounted(gamma)

    def test_gamma_one_needs_terminal(self):
        with pytest.raises(ValidationError, match="terminal"):
            value_functions(random_mdp(3, 2, 0), SoftmaxPolicy.uniform(3, 2), Setup.discounted(1.0))


class TestTabularMdp:
    def test_rows_must_sum_to_one(self):
        P = np.full((2, 1, 2), 0.5)
        P[1, 0] = [0.7, 0.4]
        with pytest.raises(ValidationError, match=r"transition\[1\]\[0\] sums"):
            TabularMdp(P, np.zeros((2, 1)), np.array([0.5, 0.5]))

    def test_negative_entry_reported_with_indices(self):
        P = np.full((2, 2, 2), 0.5)
        P[0, 1] = [1.5, -0.5]
        with pytest.raises(ValidationError, match=r"transition\[0\]\[1\]\[1\]"):
            TabularMdp(P, np.zeros((2, 2)), np.array([1.0, 0.0]))

    def test_rho0_checked(self):
        with pytest.raises(ValidationError, match="rho0"):
            TabularMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), np.array([0.7, 0.7]))

    def test_arrays_are_read_only(self):
        mdp = random_mdp(3, 2, 0)
        with pytest.raises(ValueError):
            mdp.reward[0, 0] = 1.0

    def test_json_roundtrip(self, tmp_path):
        mdp = random_episodic_mdp(4, 2, 3)
        path = tmp_path / "m.json"
        save_mdp(mdp, path)
        back = load_mdp(path)
        assert np.array_equal(back.transition, mdp.transition)
        assert back.terminal == mdp.terminal

    def test_loader_reports_missing_field(self):
        with pytest.raises(ValidationError, match="reward"):
            mdp_from_dict({"transition": [[[1.0]]], "rho0": [1.0]})

    def test_loader_checks_declared_sizes(self, tmp_path):
        d = random_mdp(3, 2, 0).to_dict()
        d["n_states"] = 4
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(d))
        with pytest.raises(ValidationError, match="n_states"):
            load_mdp(path)


class TestPolicies:
    def test_softmax_rows_sum_to_one(self):
        p = SoftmaxPolicy.random(4, 3, 0, scale=30.0)
        assert np.allclose(p.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_deterministic_range_checked(self):
        with pytest.raises(ValidationError, match="state 1"):
            DeterministicTablePolicy(np.array([0, 3]), 2)

    def test_deterministic_equality(self):
        a = DeterministicTablePolicy(np.array([0, 1]), 2)
        assert a == DeterministicTablePolicy([0, 1], 2)
        assert a != DeterministicTablePolicy([1, 1], 2)
        assert a.action_of(1) == 1


class TestGradLogPi:
    def test_uniform_two_actions(self):
        g = grad_log_pi(SoftmaxPolicy.uniform(3, 2), 1, 0).reshape(3, 2)
        assert np.array_equal(g[1], [0.5, -0.5])
        assert not g[[0, 2]].any()

    def test_score_identity(self):
        p = SoftmaxPolicy.random(4, 3, 2)
        for s in range(4):
            total = sum(p.probs[s, a] * grad_log_pi(p, s, a) for a in range(3))
            assert np.abs(total).max() < 1e-10

    def test_matches_finite_difference(self):
        p = SoftmaxPolicy.random(3, 4, 2)
        for s in range(3):
            for a in range(4):
                fd = oracle.finite_difference(lambda th: np.log(p.with_theta(th).probs[s, a]),
                                              p.theta.reshape(-1), 1e-6)
                assert np.abs(fd - grad_log_pi(p, s, a)).max() < 1e-7

    def test_table_agrees(self):
        p = SoftmaxPolicy.random(3, 2, 5)
        table = score_table(p)
        assert np.array_equal(table[2, 1], grad_log_pi(p, 2, 1))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (3, 4), elements=st.floats(-20, 20)))
    def test_score_identity_property(self, theta):
        p = SoftmaxPolicy(theta)
        assert np.allclose(p.probs.sum(axis=1), 1.0, atol=1e-12)
        weighted = np.einsum("sa,sap->sp", p.probs, score_table(p))
        assert np.abs(weighted).max() < 1e-10


class TestValueFunctions:
    def test_single_state_discounted(self):
        vals = value_functions(bandit([1.0]), SoftmaxPolicy.uniform(1, 1), Setup.discounted(0.9))
        assert vals.objective == pytest.approx(10.0, abs=1e-12)
        assert vals.v[0] == pytest.approx(10.0, abs=1e-12)
        assert vals.adv[0, 0] == 0.0

    def test_single_state_average(self):
        vals = value_functions(bandit([1.0]), SoftmaxPolicy.uniform(1, 1), Setup.average())
        assert vals.objective == pytest.approx(1.0, abs=1e-12)
        assert vals.v[0] == pytest.approx(0.0, abs=1e-12)

    def test_neumann_series(self):
        mdp = random_mdp(5, 3, 0)
        policy = SoftmaxPolicy.random(5, 3, 0)
        P, r = induced_chain(mdp, policy)
        v = value_functions(mdp, policy, Setup.discounted(0.9)).v
        assert np.abs(v - oracle.neumann_values(P, r, 0.9, 10_000)).max() < 1e-8

    @pytest.mark.parametrize("setup", [Setup.discounted(0.95), Setup.average()])
    def test_bundle_invariants(self, setup):
        for seed in range(10):
            mdp = random_mdp(6, 3, seed)
            policy = SoftmaxPolicy.random(6, 3, seed)
            vals = value_functions(mdp, policy, setup)
            assert bellman_residual(mdp, policy, vals) <= 1e-10
            assert np.array_equal(vals.adv, vals.q - vals.v[:, None])
            assert np.abs((policy.probs * vals.adv).sum(axis=1)).max() <= 1e-10

    def test_average_bias_normalized(self):
        from polopt.measures import stationary_measure
        mdp = random_mdp(5, 2, 4)
        policy = SoftmaxPolicy.random(5, 2, 4)
        vals = value_functions(mdp, policy, Setup.average())
        assert abs(stationary_measure(mdp, policy).weights @ vals.v) < 1e-12

    def test_non_ergodic_rejected(self):
        mdp = chain(np.eye(2), [0.0, 1.0])
        with pytest.raises(NonErgodicChain):
            value_functions(mdp, SoftmaxPolicy.uniform(2, 1), Setup.average())
        assert not is_ergodic(np.eye(2))

    def test_singular_total_reward_system(self):
        # γ = 1 with a recurrent non-terminal class never reaches the terminal
        P = np.zeros((3, 1, 3))
        P[0, 0, 1] = P[1, 0, 0] = P[2, 0, 2] = 1.0
        mdp = TabularMdp(P, np.array([[1.0], [1.0], [0.0]]), np.array([1.0, 0, 0]), terminal=2)
        with pytest.raises(SingularSystem):
            value_functions(mdp, SoftmaxPolicy.uniform(3, 1), Setup.discounted(1.0))


class TestObjective:
    def test_point_mass_start(self):
        mdp = random_mdp(4, 2, 3)
        start = TabularMdp(mdp.transition, mdp.reward, np.eye(4)[2])
        policy = SoftmaxPolicy.random(4, 2, 3)
        setup = Setup.discounted(0.8)
        assert objective(start, policy, setup) == value_functions(mdp, policy, setup).v[2]

    def test_deterministic_cycle(self):
        mdp = chain([[0, 1], [1, 0]], [0.0, 2.0])
        assert objective(mdp, SoftmaxPolicy.uniform(2, 1), Setup.average()) == pytest.approx(1.0, abs=1e-12)

    def test_abel_limit_at_099(self):
        mdp = random_mdp(4, 2, 1)
        policy = SoftmaxPolicy.random(4, 2, 1)
        j_mu = objective(mdp, policy, Setup.average())
        j_gamma = objective(mdp, policy, Setup.discounted(0.99))
        assert abs(0.01 * j_gamma - j_mu) < 0.05 * abs(j_mu)

    def test_deterministic_policy(self):
        mdp = random_mdp(3, 2, 0)
        det = DeterministicTablePolicy([1, 0, 1], 2)
        soft = SoftmaxPolicy(np.where(det.probs > 0, 50.0, -50.0))
        setup = Setup.discounted(0.9)
        assert objective(mdp, det, setup) == pytest.approx(objective(mdp, soft, setup), abs=1e-9)


class TestTerminalize:
    def test_idempotent(self):
        mdp = random_mdp(4, 2, 0)
        once = terminalize(mdp, 3)
        twice = terminalize(once, 3)
        assert np.array_equal(once.transition, twice.transition)
        assert np.array_equal(once.reward, twice.reward)

    def test_three_state_chain(self):
        P = np.zeros((3, 1, 3))
        P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 0] = 1.0
        mdp = terminalize(TabularMdp(P, np.ones((3, 1)), np.array([1.0, 0, 0])), 2)
        assert objective(mdp, SoftmaxPolicy.uniform(3, 1), Setup.discounted(1.0)) == pytest.approx(2.0, abs=1e-12)

    def test_gamma_continuity(self):
        mdp = random_episodic_mdp(5, 2, 3)
        policy = SoftmaxPolicy.random(5, 2, 3)
        total = objective(mdp, policy, Setup.discounted(1.0))
        near = objective(mdp, policy, Setup.discounted(0.999999))
        assert abs(total - near) < 1e-3

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            terminalize(random_mdp(3, 2, 0), 3)


class TestLimits:
    def test_abel_monotone(self):
        for seed in range(5):
            mdp = random_mdp(5, 3, seed)
            policy = SoftmaxPolicy.random(5, 3, seed)
            gaps = [row[3] for row in oracle.abel_limit_study(mdp, policy)]
            assert all(a > b for a, b in zip(gaps, gaps[1:]))
            assert gaps[-1] < 1e-3 * max(1.0, abs(objective(mdp, policy, Setup.average())))

    def test_advantage_limit(self):
        mdp = random_mdp(6, 2, 8)
        policy = SoftmaxPolicy.random(6, 2, 8)
        avg = value_functions(mdp, policy, Setup.average()).adv
        disc = value_functions(mdp, policy, Setup.discounted(0.9999)).adv
        assert np.abs(disc - avg).max() < 1e-2 * max(1.0, np.abs(avg).max())
