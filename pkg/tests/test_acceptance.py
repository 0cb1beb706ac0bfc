"""End-to-end acceptance battery.

Each test covers one headline property of the pipeline at desk scale and
prints a single verdict line, so a bare ``pytest -s tests/test_acceptance.py``
reads as a checklist.  Tolerances are part of the contract and are pinned
here rather than imported, on purpose.
"""
import math
import time

import numpy as np
import pytest

from voprlab.dataset import sample_dataset
from voprlab.function_classes import build_realizable_classes
from voprlab.harness import (build_counterexample, build_setup,
                             config_from_dict, random_mdp, run_experiment)
from voprlab.mdp import (Policy, QFunction, expected_return, optimal_q,
                         performance_difference)
from voprlab.occupancy import (SADistribution, StateDistribution,
                               apply_adjoint, apply_transition, compose,
                               occupancy_measure, sup_ratio,
                               truncated_occupancy)
from voprlab.oracle import (covering_concentrability, data_concentrability,
                            mixture_covering, near_optimal_policies,
                            per_step_coefficient, telescoping_sides)
from voprlab.solver import (empirical_loss, empirical_loss_table,
                            hoeffding_error, population_loss,
                            population_loss_table, run_solver)


def _verdict(num: int, label: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] acceptance {num:2d}: {label}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)
    assert ok, line


def _all_tables(n_states: int, n_actions: int):
    tables = np.indices((n_actions,) * n_states).reshape(n_states, -1).T
    return [t for t in tables]


def _table_policy(table, n_actions: int) -> Policy:
    probs = np.zeros((len(table), n_actions))
    probs[np.arange(len(table)), table] = 1.0
    return Policy(probs)


# ---------------------------------------------------------------------------
# shared sweep: 20 random models, 50 dataset seeds each, N = 10^4,
# realizable classes of size 8, delta = 0.1

N_MODELS = 20
N_SEEDS = 50


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance_sweeps")
    per_model = []
    for mseed in range(N_MODELS):
        cfg = config_from_dict({
            "mdp": {"kind": "random", "n_states": 5, "n_actions": 3,
                    "seed": mseed, "gamma": 0.9},
            "data": {"mu": [0.30, 0.25, 0.20, 0.15, 0.10]},
            "covering": {"kind": "uniform"},
            "classes": {"n_distractors": 7, "seed": mseed},
            "sweep": {"n_grid": [10_000], "seeds": N_SEEDS, "delta": 0.1},
        })
        rows = run_experiment(cfg, base / f"model{mseed:02d}")
        assert len(rows) == N_SEEDS
        per_model.append(rows)
    return per_model


# ---------------------------------------------------------------------------
# 1: with a covering distribution that only sees the start of both optimal
# chains, the adversarial extraction ties the score of an optimal policy
# exactly, then walks into the worthless cycle

def test_01_counterexample_extraction():
    t0 = time.perf_counter()
    cfg = config_from_dict({
        "mdp": {"kind": "counterexample", "gamma": 0.9},
        "covering": {"kind": "explicit", "mu": [0.5, 0.5, 0.0, 0.0]},
        "sweep": {"n_grid": [2000], "seeds": [0]},
        "adversarial_tie_break": True,
    })
    setup = build_setup(cfg)
    ds = sample_dataset(setup.mdp, setup.mu_data, setup.pi_b, 2000, 0)
    report = run_solver(ds, setup.mdp, setup.d_c, setup.mu_c, setup.pi_c,
                        setup.q_class, setup.w_class, setup.b_class,
                        cfg.delta, c_c=setup.c_c)
    score_gap = float(setup.mu_c.weights @ (
        np.einsum("sa,sa->s", setup.q_star, report.pi_hat.probs)
        - np.einsum("sa,sa->s", setup.q_star, setup.pi_star.probs)))
    gap = setup.j_star - expected_return(setup.mdp, report.pi_hat)
    witness = covering_concentrability(setup.mdp, setup.mu_c,
                                       setup.mdp.v_max, 0)
    elapsed = time.perf_counter() - t0
    ok = (abs(score_gap) <= 1e-9
          and abs(gap - 9.0) <= 1e-9
          and math.isinf(setup.c_c)
          and math.isinf(witness.coefficient)
          and witness.witness_index == 2
          and elapsed < 1.0)
    _verdict(1, "partial covering extracts the worthless policy", ok,
             f"score tie {score_gap:.2e}, gap {gap:.12g}, "
             f"coefficient inf at state {witness.witness_index}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2: widening the covering to both chains makes the coefficient finite and
# leaves no near-maximal extraction with a meaningful suboptimality gap

def test_02_counterexample_repair():
    t0 = time.perf_counter()
    mdp = build_counterexample(0.9)
    mu_c = StateDistribution(np.full(4, 0.25))
    rep = covering_concentrability(mdp, mu_c, 0.0, 32)
    qstar, pistar = optimal_q(mdp)
    j_star = expected_return(mdp, pistar)

    worst_gap = 0.0
    n_near = 0
    scores = []
    for table in _all_tables(4, 2):
        pol = _table_policy(table, 2)
        score = float(mu_c.weights @ qstar.values[np.arange(4), table])
        scores.append((score, pol))
    best = max(s for s, _ in scores)
    for score, pol in scores:
        if score >= best - 1e-9:
            n_near += 1
            worst_gap = max(worst_gap, j_star - expected_return(mdp, pol))
    elapsed = time.perf_counter() - t0
    ok = (math.isfinite(rep.coefficient)
          and n_near > 0
          and worst_gap <= 1e-6
          and elapsed < 10.0)
    _verdict(2, "widened covering leaves only optimal extractions", ok,
             f"coefficient {rep.coefficient:.3f} over {rep.policy_count} "
             f"policies, {n_near} near-maximal tables, worst gap "
             f"{worst_gap:.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 3-5, 10: the sweep battery

def test_03_suboptimality_bound(sweep):
    rates = []
    for rows in sweep:
        assert not any(r.error for r in rows)
        rates.append(sum(r.gap_ok for r in rows) / len(rows))
    ok = all(rate >= 0.9 for rate in rates)
    _verdict(3, "suboptimality within end-to-end bound, per-model rate >= 0.9",
             ok, f"{N_MODELS} models x {N_SEEDS} seeds, min rate {min(rates):.2f}")


def test_04_fit_error_bound(sweep):
    rates = [sum(r.fit_ok for r in rows) / len(rows) for rows in sweep]
    ok = all(rate >= 0.9 for rate in rates)
    _verdict(4, "fit error within deviation bound, per-model rate >= 0.9",
             ok, f"min rate {min(rates):.2f}")


def test_05_extraction_inequality(sweep):
    total = sum(len(rows) for rows in sweep)
    hold = sum(r.extract_ok for rows in sweep for r in rows)
    ok = hold == total
    _verdict(5, "extraction inequality in every run", ok,
             f"{hold}/{total} runs")


def test_10_covering_ratio_bound(sweep):
    finite = [r for rows in sweep for r in rows if math.isfinite(r.c_d)]
    ok = len(finite) > 0 and all(r.cover_ok for r in finite)
    _verdict(10, "covering-to-data sup ratio within coefficient bound", ok,
             f"{len(finite)} rows with a finite coefficient, all within bound")


# ---------------------------------------------------------------------------
# 6: operator identities on random instances.  The truncation check draws
# gamma <= 0.9 so the 200-term geometric tail sits below the 1e-8 tolerance.

def test_06_operator_identities():
    rng = np.random.default_rng(2026)
    worst = {"adjoint": 0.0, "mass": 0.0, "truncation": 0.0, "linearity": 0.0}
    n_instances = 100
    for _ in range(n_instances):
        S = int(rng.integers(2, 7))
        A = int(rng.integers(2, 5))
        gamma = float(rng.uniform(0.3, 0.9))
        mdp = random_mdp(S, A, seed=int(rng.integers(1 << 30)), gamma=gamma)
        pol = Policy(rng.dirichlet(np.ones(A), size=S))
        d = SADistribution(rng.dirichlet(np.ones(S * A)).reshape(S, A))
        q = QFunction(rng.random((S, A)) * mdp.v_max)

        pushed = apply_transition(mdp, pol, d)
        pulled = apply_adjoint(mdp, pol, q)
        worst["adjoint"] = max(worst["adjoint"], abs(
            float(np.sum(pushed.weights * q.values))
            - float(np.sum(d.weights * pulled.values))))
        worst["mass"] = max(worst["mass"],
                            abs(float(pushed.weights.sum()) - 1.0))

        start = StateDistribution(rng.dirichlet(np.ones(S)))
        full = occupancy_measure(mdp, pol, start).weights
        trunc = truncated_occupancy(mdp, pol, start, 0, 199)
        worst["truncation"] = max(worst["truncation"],
                                  float(np.max(np.abs(full - trunc))))

        mu1 = rng.dirichlet(np.ones(S))
        mu2 = rng.dirichlet(np.ones(S))
        alpha = float(rng.uniform())
        mixed = occupancy_measure(
            mdp, pol, StateDistribution(alpha * mu1 + (1 - alpha) * mu2)).weights
        split = (alpha * occupancy_measure(mdp, pol, StateDistribution(mu1)).weights
                 + (1 - alpha) * occupancy_measure(mdp, pol, StateDistribution(mu2)).weights)
        worst["linearity"] = max(worst["linearity"],
                                 float(np.max(np.abs(mixed - split))))
    ok = (worst["adjoint"] <= 1e-12 and worst["mass"] <= 1e-13
          and worst["truncation"] <= 1e-8 and worst["linearity"] <= 1e-12)
    _verdict(6, "forward/adjoint/truncation/linearity identities", ok,
             f"{n_instances} instances, worst: adjoint {worst['adjoint']:.1e}, "
             f"mass {worst['mass']:.1e}, truncation {worst['truncation']:.1e}, "
             f"linearity {worst['linearity']:.1e}")


# ---------------------------------------------------------------------------
# 7: the two value-difference decompositions

def test_07_value_decompositions():
    rng = np.random.default_rng(777)
    worst_pd = 0.0
    worst_tel = 0.0
    n_instances = 100
    for _ in range(n_instances):
        S = int(rng.integers(3, 7))
        A = int(rng.integers(2, 5))
        mdp = random_mdp(S, A, seed=int(rng.integers(1 << 30)))
        pi1 = Policy(rng.dirichlet(np.ones(A), size=S))
        pi2 = Policy(rng.dirichlet(np.ones(A), size=S))
        lhs, rhs = performance_difference(mdp, pi1, pi2)
        worst_pd = max(worst_pd, abs(lhs - rhs))

        i = int(rng.integers(0, 21))
        tl, tr = telescoping_sides(mdp, pi1, i)
        worst_tel = max(worst_tel, abs(tl - tr))
    ok = worst_pd <= 1e-8 and worst_tel <= 1e-8
    _verdict(7, "value difference and prefix-switch decompositions", ok,
             f"{n_instances} instances, worst: difference {worst_pd:.1e}, "
             f"prefix switch {worst_tel:.1e}")


# ---------------------------------------------------------------------------
# 8: the empirical loss concentrates.  Part one checks unbiasedness for a
# fixed member pair against the Monte Carlo standard error; part two counts
# how often the sup-deviation over the whole table beats the stated bound.

def test_08_loss_concentration():
    mdp = random_mdp(5, 3, seed=11)
    mu = StateDistribution(np.full(5, 0.2))
    pi_b = Policy(np.full((5, 3), 1.0 / 3.0))
    d_data = compose(mu, pi_b)
    d_c = d_data
    q_cls, w_cls, _ = build_realizable_classes(mdp, d_c, d_data, pi_b,
                                               n_distractors=7, seed=3,
                                               noise_scale=0.25)

    q, w = q_cls.members[2], w_cls.members[1]
    pop = population_loss(mdp, d_c, d_data, q, w)
    vals = np.array([
        empirical_loss(sample_dataset(mdp, mu, pi_b, 2000, seed), mdp, d_c, q, w)
        for seed in range(200)])
    se = float(vals.std(ddof=1)) / math.sqrt(len(vals))
    mean_dev = abs(float(vals.mean()) - pop)
    ok_mean = mean_dev <= 3.0 * se

    delta = 0.1
    n = 500
    eps_stat = hoeffding_error(w_cls.bound, mdp.v_max, len(q_cls), len(w_cls),
                               delta, n)
    pop_table = population_loss_table(mdp, d_c, d_data, q_cls, w_cls)
    exceed = 0
    n_trials = 500
    for seed in range(n_trials):
        ds = sample_dataset(mdp, mu, pi_b, n, 10_000 + seed)
        table = empirical_loss_table(ds, mdp, d_c, q_cls, w_cls)
        if float(np.max(np.abs(table - pop_table))) > eps_stat:
            exceed += 1
    rate = exceed / n_trials
    ok = ok_mean and rate <= delta
    _verdict(8, "loss unbiased within 3 SE; sup-deviation rate <= delta", ok,
             f"mean deviation {mean_dev:.2e} vs 3 SE {3 * se:.2e}, "
             f"deviation rate {rate:.3f} vs {delta}")


# ---------------------------------------------------------------------------
# 9: the mixture covering never concentrates worse than its worst single
# step, on the hand-built chain and on random models

def test_09_mixture_step_domination():
    cases = []
    fig = build_counterexample(0.9)
    cases.append((fig, near_optimal_policies(fig, 0.0, 2)))
    for k in range(10):
        mdp = random_mdp(4, 3, seed=100 + k)
        cases.append((mdp, near_optimal_policies(mdp, 0.1 * mdp.v_max, 1)))

    worst_margin = -math.inf
    for mdp, pols in cases:
        S, A = mdp.n_states, mdp.n_actions
        d_data = compose(StateDistribution(np.full(S, 1.0 / S)),
                         Policy(np.full((S, A), 1.0 / A)))
        d_c = mixture_covering(mdp, pols)
        c_d = data_concentrability(mdp, d_c, d_data).coefficient
        step = per_step_coefficient(mdp, pols, d_data)
        worst_margin = max(worst_margin, c_d - step)
    ok = worst_margin <= 1e-9
    _verdict(9, "mixture coefficient below worst per-step ratio", ok,
             f"{len(cases)} models, worst margin {worst_margin:.2e}")
