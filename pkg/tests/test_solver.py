"""Minimax selection over finite classes and the error/bound formulas.

The empirical loss has an independent per-tuple oracle here, written as a
plain Python loop so any vectorization mistake in the package would surface
as a mismatch.
"""
import math

import numpy as np
import pytest

from voprlab.dataset import sample_dataset
from voprlab.function_classes import build_realizable_classes
from voprlab.harness import random_mdp
from voprlab.mdp import expected_return, optimal_q
from voprlab.occupancy import compose, occupancy_measure
from voprlab.solver import (empirical_loss, empirical_loss_table,
                            extract_policy, hoeffding_error, minimax_select,
                            population_loss, population_loss_table,
                            reweighted_policy, run_solver, save_report,
                            solve_q, suboptimality_bound)

from conftest import random_policy, uniform_policy, uniform_start


def _setup(seed, n_distractors=4, S=5, A=3):
    mdp = random_mdp(S, A, seed=seed)
    mu = uniform_start(mdp)
    pi_b = uniform_policy(mdp)
    # the sampler draws pairs from mu x pi_b, so that product is the
    # population data law
    d_data = compose(mu, pi_b)
    pi_c = pi_b
    d_c = compose(mu, pi_c)
    classes = build_realizable_classes(mdp, d_c, d_data, pi_c, n_distractors, seed=seed)
    return mdp, mu, pi_b, pi_c, d_c, d_data, classes


def _loss_by_hand(ds, mdp, d_c, q, w):
    """Tuple-at-a-time reference implementation."""
    total = 0.0
    for s, a in np.ndindex(*q.shape):
        total += 0.5 * d_c.weights[s, a] * q[s, a] ** 2
    acc = 0.0
    for i in range(len(ds.states)):
        s, a = int(ds.states[i]), int(ds.actions[i])
        sp = int(ds.next_states[i])
        target = mdp.gamma * q[sp].max() + float(ds.rewards[i]) - q[s, a]
        acc += w[s, a] * target
    return total + acc / len(ds.states)


@pytest.mark.parametrize("seed", range(4))
def test_empirical_loss_matches_tuple_oracle(seed):
    mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, _) = _setup(seed)
    ds = sample_dataset(mdp, mu, pi_b, 800, seed=seed)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        q = q_cls.members[rng.integers(len(q_cls.members))]
        w = w_cls.members[rng.integers(len(w_cls.members))]
        got = empirical_loss(ds, mdp, d_c, q, w)
        want = _loss_by_hand(ds, mdp, d_c, q, w)
        assert got == pytest.approx(want, abs=1e-10)


def test_loss_table_cells_equal_scalar_path():
    mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, _) = _setup(9)
    ds = sample_dataset(mdp, mu, pi_b, 500, seed=9)
    table = empirical_loss_table(ds, mdp, d_c, q_cls, w_cls)
    assert table.shape == (len(q_cls.members), len(w_cls.members))
    for i in (0, 2, 4):
        for j in (1, 3):
            exact = empirical_loss(ds, mdp, d_c, q_cls.members[i], w_cls.members[j])
            assert table[i, j] == exact  # same float ops, bit identical


def test_population_loss_is_empirical_limit():
    """The empirical loss is an unbiased estimate of the population loss;
    check agreement within a few standard errors of the tuple summand."""
    mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, _) = _setup(5)
    n = 200_000
    ds = sample_dataset(mdp, mu, pi_b, n, seed=5)
    q, w = q_cls.members[1], w_cls.members[2]
    emp = empirical_loss(ds, mdp, d_c, q, w)
    pop = population_loss(mdp, d_c, d_data, q, w)
    summand = w[ds.states, ds.actions] * (
        mdp.gamma * q[ds.next_states].max(axis=1) + ds.rewards
        - q[ds.states, ds.actions])
    se = summand.std(ddof=1) / math.sqrt(n)
    assert abs(emp - pop) <= 4.0 * se


def test_population_minimax_recovers_realized_q():
    """At infinite data the argmin-argmax lands on the realized pair."""
    for seed in range(6):
        mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, b_cls) = _setup(seed + 50)
        table = population_loss_table(mdp, d_c, d_data, q_cls, w_cls)
        i, j = minimax_select(table)
        q_star, _ = optimal_q(mdp)
        assert np.allclose(q_cls.members[i], q_star.values, atol=1e-9, rtol=0)
        k, pi_hat, scores = extract_policy(q_cls.members[i],
                                           mu, pi_c, b_cls)
        _, pi_opt = optimal_q(mdp)
        assert expected_return(mdp, pi_hat) == pytest.approx(
            expected_return(mdp, pi_opt), abs=1e-8)


def test_minimax_select_prefers_lowest_indices():
    table = np.array([
        [3.0, 1.0, 2.0],
        [2.0, 2.0, 0.5],
        [3.0, 1.0, 2.0],
    ])
    # row maxes are 3, 2, 3 -> rows 1 wins; in row 1 the max 2.0 appears
    # at columns 0 and 1 -> column 0 wins
    i, j = minimax_select(table)
    assert (i, j) == (1, 0)


def test_minimax_select_breaks_row_ties_low():
    table = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert minimax_select(table) == (0, 0)


def test_reweighted_policy_falls_back_at_zero_normalizer():
    pi_c = uniform_policy(random_mdp(2, 2, seed=0))
    beta = np.array([[0.0, 0.0], [2.0, 0.0]])
    pol = reweighted_policy(pi_c, beta)
    assert np.allclose(pol.probs[0], pi_c.probs[0])
    assert np.allclose(pol.probs[1], [1.0, 0.0])


# ---------------------------------------------------------------------------
# error radius and bound

def test_hoeffding_worked_value():
    # direct evaluation of the radius formula at a simple operating point
    got = hoeffding_error(1.0, 1.0, 2, 2, 0.05, 1000)
    want = math.sqrt(2.0 * math.log(2.0 * 2 * 2 / 0.05) / 1000)
    assert got == want
    assert got == pytest.approx(0.10074893364432029, abs=1e-15)
    assert abs(got - 0.1008) < 1e-4


def test_hoeffding_scales():
    base = hoeffding_error(1.0, 1.0, 8, 8, 0.1, 1000)
    assert hoeffding_error(2.0, 1.0, 8, 8, 0.1, 1000) == pytest.approx(2 * base)
    assert hoeffding_error(1.0, 3.0, 8, 8, 0.1, 1000) == pytest.approx(3 * base)
    assert hoeffding_error(1.0, 1.0, 8, 8, 0.1, 4000) == pytest.approx(base / 2)


def test_hoeffding_rejects_bad_inputs():
    with pytest.raises(ValueError):
        hoeffding_error(1.0, 1.0, 2, 2, 0.0, 100)
    with pytest.raises(ValueError):
        hoeffding_error(1.0, 1.0, 2, 2, 1.0, 100)
    with pytest.raises(ValueError):
        hoeffding_error(1.0, 1.0, 2, 2, 0.1, 0)


def test_suboptimality_bound_formula():
    eps = 0.04
    got = suboptimality_bound(2.0, 3.0, eps, 0.9)
    assert got == pytest.approx(4.0 * 2.0 * 3.0 * math.sqrt(eps) / 0.1)
    assert math.isinf(suboptimality_bound(math.inf, 3.0, eps, 0.9))


def test_deviation_shrinks_like_root_n():
    """Mean absolute loss-table deviation from its population limit should
    drop by about half per fourfold sample increase."""
    mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, _) = _setup(77, n_distractors=3)
    pop = population_loss_table(mdp, d_c, d_data, q_cls, w_cls)
    sizes = [250, 1_000, 4_000, 16_000]
    devs = []
    for n in sizes:
        acc = 0.0
        reps = 6
        for r in range(reps):
            ds = sample_dataset(mdp, mu, pi_b, n, seed=1000 + 31 * r)
            emp = empirical_loss_table(ds, mdp, d_c, q_cls, w_cls)
            acc += float(np.mean(np.abs(emp - pop)))
        devs.append(acc / reps)
    slope = np.polyfit(np.log(sizes), np.log(devs), 1)[0]
    assert -0.65 < slope < -0.35


# ---------------------------------------------------------------------------
# end to end

def test_solve_q_returns_consistent_indices():
    mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, _) = _setup(21)
    ds = sample_dataset(mdp, mu, pi_b, 5_000, seed=21)
    i, j, table = solve_q(ds, mdp, d_c, q_cls, w_cls)
    assert (i, j) == minimax_select(table)
    assert np.array_equal(q_cls.members[i],
                          q_cls.members[minimax_select(table)[0]])


def test_run_solver_report(tmp_path):
    mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, b_cls) = _setup(33)
    ds = sample_dataset(mdp, mu, pi_b, 10_000, seed=33)
    rep = run_solver(ds, mdp, d_c, mu, pi_c, q_cls, w_cls, b_cls, 0.1, c_c=2.0)
    assert rep.loss_table.shape == (5, 5)
    assert rep.eps_stat == hoeffding_error(w_cls.bound, mdp.v_max, 5, 5, 0.1, 10_000)
    assert rep.bound == suboptimality_bound(2.0, b_cls.bound, rep.eps_stat, mdp.gamma)
    assert rep.q_hat.shape == (5, 3)
    assert rep.pi_hat.probs.shape == (5, 3)
    save_report(rep, tmp_path)
    text = (tmp_path / "report.txt").read_text()
    assert "q_index" in text and "eps_stat" in text
    rows = (tmp_path / "loss_table.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 5  # header plus one row per q member


def test_run_solver_bound_nan_without_coefficient():
    mdp, mu, pi_b, pi_c, d_c, d_data, (q_cls, w_cls, b_cls) = _setup(34)
    ds = sample_dataset(mdp, mu, pi_b, 1_000, seed=34)
    rep = run_solver(ds, mdp, d_c, mu, pi_c, q_cls, w_cls, b_cls, 0.1, c_c=None)
    assert math.isnan(rep.bound)
