"""Finite hypothesis classes and their realized members.

The audits recompute every defining identity from scratch; the build helpers
must produce classes that pass them on arbitrary solvable models, and must
refuse construction when the covering setup makes realization impossible.
"""
import numpy as np
import pytest

from voprlab.function_classes import (FiniteFunctionClass, UnrealizableError,
                                      audit_realizability,
                                      build_realizable_classes,
                                      load_function_class,
                                      optimal_density_ratio,
                                      optimal_policy_ratio,
                                      save_function_class,
                                      validate_function_class)
from voprlab.harness import build_counterexample, random_mdp
from voprlab.mdp import Policy, ValidationError, greedy_policy, optimal_q
from voprlab.occupancy import (SADistribution, StateDistribution, compose,
                               occupancy_measure)

from conftest import random_policy, uniform_policy, uniform_start


def _setup(seed, S=5, A=3):
    mdp = random_mdp(S, A, seed=seed)
    mu = uniform_start(mdp)
    pi_b = uniform_policy(mdp)
    # match the harness convention: data pairs come from the product law
    d_data = compose(mu, pi_b)
    pi_c = pi_b
    d_c = compose(mu, pi_c)
    return mdp, mu, pi_c, d_c, d_data


# ---------------------------------------------------------------------------
# realized members

@pytest.mark.parametrize("seed", range(5))
def test_built_classes_pass_audit(seed):
    mdp, mu, pi_c, d_c, d_data = _setup(seed)
    q_cls, w_cls, b_cls = build_realizable_classes(mdp, d_c, d_data, pi_c,
                                                   n_distractors=4, seed=seed)
    audit_realizability(mdp, q_cls, w_cls, b_cls, d_c, d_data, pi_c)


def test_q_member_zero_is_optimal(medium_mdp):
    mdp, mu, pi_c, d_c, d_data = _setup(7)
    q_cls, _, _ = build_realizable_classes(mdp, d_c, d_data, pi_c, 3, seed=0)
    q_star, _ = optimal_q(mdp)
    assert np.allclose(q_cls.members[0], q_star.values, atol=1e-9, rtol=0)


def test_b_member_zero_extracts_optimal_policy():
    mdp, mu, pi_c, d_c, d_data = _setup(3)
    _, _, b_cls = build_realizable_classes(mdp, d_c, d_data, pi_c, 3, seed=1)
    _, pi_star = optimal_q(mdp)
    prod = pi_c.probs * b_cls.members[0]
    prod /= prod.sum(axis=1, keepdims=True)
    assert np.allclose(prod, pi_star.probs, atol=1e-9, rtol=0)


def test_class_sizes_and_kinds():
    mdp, mu, pi_c, d_c, d_data = _setup(9)
    q_cls, w_cls, b_cls = build_realizable_classes(mdp, d_c, d_data, pi_c, 6, seed=2)
    for cls, kind in ((q_cls, "Q"), (w_cls, "W"), (b_cls, "B")):
        assert cls.kind == kind
        assert len(cls.members) == 7
    assert q_cls.bound == pytest.approx(mdp.v_max)
    # W and B bounds are the realized maxima over members
    assert w_cls.bound == pytest.approx(max(m.max() for m in w_cls.members))
    assert b_cls.bound == pytest.approx(max(m.max() for m in b_cls.members))


def test_distractors_are_distinct():
    mdp, mu, pi_c, d_c, d_data = _setup(4)
    q_cls, _, _ = build_realizable_classes(mdp, d_c, d_data, pi_c, 5, seed=3)
    for i in range(len(q_cls.members)):
        for j in range(i + 1, len(q_cls.members)):
            assert not np.array_equal(q_cls.members[i], q_cls.members[j])


# ---------------------------------------------------------------------------
# density ratio oracle

def test_density_ratio_identity_on_full_support():
    """The stationarity equation the weight member must satisfy, recomputed
    through the dense linear system: the weighted data distribution solves
    (I - g M) x = d_c * Q* with M the flow kernel under the optimal policy."""
    from voprlab.occupancy import sa_transition_matrix
    mdp, mu, pi_c, d_c, d_data = _setup(11)
    w = optimal_density_ratio(mdp, d_c, d_data)
    q_star, pi_star = optimal_q(mdp)
    S, A = mdp.n_states, mdp.n_actions
    M = sa_transition_matrix(mdp, pi_star)
    rhs = (d_c.weights * q_star.values).ravel()
    x = np.linalg.solve(np.eye(S * A) - mdp.gamma * M, rhs)
    assert np.allclose(w * d_data.weights, x.reshape(S, A), atol=1e-9, rtol=0)


def test_density_ratio_unrealizable_when_data_misses_mass(fig_mdp):
    # behavior visits only the two loop states; the covering start needs
    # state 0, which the data never contains
    d_data = SADistribution(np.array([
        [0.0, 0.0], [0.25, 0.25], [0.0, 0.0], [0.25, 0.25]]))
    d_c = compose(StateDistribution(np.array([1.0, 0.0, 0.0, 0.0])),
                  uniform_policy(fig_mdp))
    with pytest.raises(UnrealizableError, match=r"\(s=0"):
        optimal_density_ratio(fig_mdp, d_c, d_data)


def test_policy_ratio_recovers_optimal():
    mdp, mu, pi_c, d_c, d_data = _setup(13)
    _, pi_star = optimal_q(mdp)
    beta = optimal_policy_ratio(pi_star, pi_c)
    prod = pi_c.probs * beta
    prod /= prod.sum(axis=1, keepdims=True)
    assert np.allclose(prod, pi_star.probs, atol=1e-12, rtol=0)


def test_policy_ratio_unrealizable_without_support(fig_mdp):
    _, pi_star = optimal_q(fig_mdp)
    # covering policy refuses the optimal action everywhere it matters
    probs = np.zeros((4, 2))
    probs[:, 1 - np.argmax(pi_star.probs, axis=1)] = 1.0
    pi_c = Policy(probs)
    with pytest.raises(UnrealizableError, match="no mass"):
        optimal_policy_ratio(pi_star, pi_c)


# ---------------------------------------------------------------------------
# validation

def test_validate_rejects_negative_member():
    bad = FiniteFunctionClass((np.array([[1.0, -0.5]]),), "W", 2.0)
    with pytest.raises((ValidationError, UnrealizableError, ValueError)):
        validate_function_class(bad)


def test_validate_rejects_bound_violation():
    bad = FiniteFunctionClass((np.array([[3.0, 0.5]]),), "Q", 2.0)
    with pytest.raises(ValueError):
        validate_function_class(bad)


def test_validate_checks_b_normalization():
    pi_c = Policy(np.array([[0.5, 0.5]]))
    good = FiniteFunctionClass((np.array([[2.0, 0.0]]),), "B", 2.0)
    validate_function_class(good, pi_c=pi_c)
    bad = FiniteFunctionClass((np.array([[2.0, 1.0]]),), "B", 2.0)
    with pytest.raises(ValueError):
        validate_function_class(bad, pi_c=pi_c)


# ---------------------------------------------------------------------------
# persistence

def test_save_load_roundtrip(tmp_path):
    mdp, mu, pi_c, d_c, d_data = _setup(15)
    q_cls, w_cls, b_cls = build_realizable_classes(mdp, d_c, d_data, pi_c, 4, seed=5)
    for cls in (q_cls, w_cls, b_cls):
        p = tmp_path / f"{cls.kind}.txt"
        save_function_class(cls, p)
        back = load_function_class(p)
        assert back.kind == cls.kind
        assert back.bound == cls.bound
        assert len(back.members) == len(cls.members)
        for a, b in zip(back.members, cls.members):
            assert np.array_equal(a, b)
