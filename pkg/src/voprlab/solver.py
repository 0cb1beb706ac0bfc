"""Minimax value estimation from offline data, and the bound arithmetic.

The estimation loss for a candidate table q and weight w under covering
distribution d_c is

    L(q, w) = 0.5 E_{d_c}[q^2] + avg over tuples of w(s, a) (gamma max_a' q(s', a') + r - q(s, a))

with the average taken over the dataset (empirical form) or the exact tuple
distribution d_data x P (population form).  The solver picks the member
minimizing the worst case over the weight class, then reweights the covering
policy by the ratio member that maximizes the estimated value.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, transition_counts
from .function_classes import FiniteFunctionClass
from .mdp import Policy, TabularMDP
from .occupancy import SADistribution, StateDistribution
from .textio import fmt_float, fmt_vector

__all__ = [
    "empirical_loss",
    "empirical_loss_table",
    "population_loss",
    "population_loss_table",
    "minimax_select",
    "solve_q",
    "reweighted_policy",
    "extract_policy",
    "hoeffding_error",
    "suboptimality_bound",
    "SolveReport",
    "run_solver",
    "save_report",
]


def _td_table(mdp_reward, counts, q: np.ndarray, gamma: float) -> np.ndarray:
    # sum over s' of C[s,a,s'] (gamma max q(s') + r(s,a) - q(s,a)), per (s,a)
    vmax_next = q.max(axis=1)
    per_pair = counts @ vmax_next * gamma
    visits = counts.sum(axis=2)
    return per_pair + visits * (mdp_reward - q)


def empirical_loss(ds: Dataset, mdp: TabularMDP, d_c: SADistribution,
                   q: np.ndarray, w: np.ndarray) -> float:
    """Loss on one dataset.  Aggregates tuples through the count tensor, so
    the value matches the corresponding loss-table cell bit for bit."""
    counts = transition_counts(ds, mdp.n_states, mdp.n_actions)
    quad = 0.5 * float(np.sum(d_c.weights * q * q))
    td = _td_table(mdp.reward, counts, q, mdp.gamma)
    return quad + float(np.sum(w * td)) / len(ds)


def empirical_loss_table(ds: Dataset, mdp: TabularMDP, d_c: SADistribution,
                         q_class: FiniteFunctionClass,
                         w_class: FiniteFunctionClass) -> np.ndarray:
    """Loss of every (q, w) member pair, rows indexing q."""
    counts = transition_counts(ds, mdp.n_states, mdp.n_actions)
    n = len(ds)
    table = np.empty((len(q_class), len(w_class)))
    for i, q in enumerate(q_class.members):
        quad = 0.5 * float(np.sum(d_c.weights * q * q))
        td = _td_table(mdp.reward, counts, q, mdp.gamma)
        for j, w in enumerate(w_class.members):
            table[i, j] = quad + float(np.sum(w * td)) / n
    return table


def population_loss(mdp: TabularMDP, d_c: SADistribution, d_data: SADistribution,
                    q: np.ndarray, w: np.ndarray) -> float:
    """Exact expectation of the loss under the tuple distribution."""
    quad = 0.5 * float(np.sum(d_c.weights * q * q))
    vmax_next = q.max(axis=1)
    td = mdp.gamma * mdp.transition @ vmax_next + mdp.reward - q
    return quad + float(np.sum(d_data.weights * w * td))


def population_loss_table(mdp: TabularMDP, d_c: SADistribution, d_data: SADistribution,
                          q_class: FiniteFunctionClass,
                          w_class: FiniteFunctionClass) -> np.ndarray:
    table = np.empty((len(q_class), len(w_class)))
    for i, q in enumerate(q_class.members):
        for j, w in enumerate(w_class.members):
            table[i, j] = population_loss(mdp, d_c, d_data, q, w)
    return table


def minimax_select(table: np.ndarray):
    """Index pair (argmin over rows of the row maximum, argmax within that
    row).  Ties go to the lowest index on both axes."""
    row_max = table.max(axis=1)
    i = int(np.argmin(row_max))
    j = int(np.argmax(table[i]))
    return i, j


def solve_q(ds: Dataset, mdp: TabularMDP, d_c: SADistribution,
            q_class: FiniteFunctionClass, w_class: FiniteFunctionClass):
    """Minimax table selection on one dataset.

    Returns (q_index, w_index, loss_table); the chosen member is
    q_class.members[q_index] and the table lets callers re-check the
    selection independently.
    """
    table = empirical_loss_table(ds, mdp, d_c, q_class, w_class)
    i, j = minimax_select(table)
    return i, j, table


def reweighted_policy(pi_c: Policy, beta: np.ndarray) -> Policy:
    """Policy proportional to pi_c * beta per state.

    States where the product has zero mass keep the covering policy's row.
    """
    raw = pi_c.probs * beta
    z = raw.sum(axis=1)
    probs = np.empty_like(raw)
    for s in range(raw.shape[0]):
        probs[s] = raw[s] / z[s] if z[s] > 0.0 else pi_c.probs[s]
    return Policy(probs)


def extract_policy(q_hat: np.ndarray, mu_c: StateDistribution, pi_c: Policy,
                   b_class: FiniteFunctionClass):
    """Pick the ratio member whose reweighted policy maximizes the estimated
    value under mu_c; ties go to the lowest member index.

    Returns (beta_index, pi_hat, scores).
    """
    scores = np.empty(len(b_class))
    policies = []
    for k, beta in enumerate(b_class.members):
        pi = reweighted_policy(pi_c, beta)
        policies.append(pi)
        scores[k] = float(mu_c.weights @ np.einsum("sa,sa->s", pi.probs, q_hat))
    k = int(np.argmax(scores))
    return k, policies[k], scores


def hoeffding_error(u_w: float, v_max: float, size_q: int, size_w: int,
                    delta: float, n: int) -> float:
    """Uniform deviation bound for the loss over the finite classes:
    u_w * v_max * sqrt(2 log(2 |Q| |W| / delta) / n)."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n <= 0:
        raise ValueError(f"sample size must be positive, got {n}")
    return u_w * v_max * math.sqrt(2.0 * math.log(2.0 * size_q * size_w / delta) / n)


def suboptimality_bound(c_c: float, u_b: float, eps_stat: float, gamma: float) -> float:
    """End-to-end guarantee 4 c_c u_b sqrt(eps_stat) / (1 - gamma)."""
    return 4.0 * c_c * u_b * math.sqrt(eps_stat) / (1.0 - gamma)


@dataclass(frozen=True, eq=False)
class SolveReport:
    q_index: int
    w_index: int
    beta_index: int
    q_hat: np.ndarray
    beta_hat: np.ndarray
    pi_hat: Policy
    loss_table: np.ndarray
    eps_stat: float
    bound: float  # nan when no concentrability coefficient was supplied


def run_solver(ds: Dataset, mdp: TabularMDP, d_c: SADistribution,
               mu_c: StateDistribution, pi_c: Policy,
               q_class: FiniteFunctionClass, w_class: FiniteFunctionClass,
               b_class: FiniteFunctionClass, delta: float,
               c_c: float = None) -> SolveReport:
    """Full pipeline on one dataset: minimax table fit, policy extraction,
    and the deviation/suboptimality bound arithmetic."""
    qi, wj, table = solve_q(ds, mdp, d_c, q_class, w_class)
    q_hat = q_class.members[qi]
    bi, pi_hat, _ = extract_policy(q_hat, mu_c, pi_c, b_class)
    eps = hoeffding_error(w_class.bound, mdp.v_max, len(q_class), len(w_class),
                          delta, len(ds))
    bound = math.nan
    if c_c is not None:
        bound = suboptimality_bound(c_c, b_class.bound, eps, mdp.gamma)
    return SolveReport(qi, wj, bi, q_hat, b_class.members[bi], pi_hat, table, eps, bound)


def save_report(report: SolveReport, out_dir):
    """report.txt with the selections plus loss_table.csv for re-checking."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        "# voprlab solve report",
        f"q_index {report.q_index}",
        f"w_index {report.w_index}",
        f"beta_index {report.beta_index}",
        f"eps_stat {fmt_float(report.eps_stat)}",
        f"bound {fmt_float(report.bound)}",
        "q_hat " + fmt_vector(report.q_hat),
        "beta_hat " + fmt_vector(report.beta_hat),
        "pi_hat " + fmt_vector(report.pi_hat.probs),
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    with open(out / "loss_table.csv", "w", newline="") as fh:
        fh.write("# rows: q members, columns: w members\n")
        writer = csv.writer(fh)
        for row in report.loss_table:
            writer.writerow([fmt_float(x) for x in row])
