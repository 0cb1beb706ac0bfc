"""Ground-truth oracles: near-optimal policy enumeration, concentrability
coefficients, and direct numeric verification of the identities behind the
suboptimality analysis.

The enumeration is exact but finite: it covers non-stationary policies with a
deterministic prefix up to a declared horizon followed by a deterministic
stationary tail, pruning prefixes whose accumulated advantage deficit already
exceeds the slack.  Everything downstream reports the horizon and policy
count so callers know which finite family a coefficient was computed over.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .mdp import (NonStationaryPolicy, Policy, TabularMDP, expected_return,
                  optimal_q)
from .occupancy import (SADistribution, StateDistribution, density_ratio,
                        occupancy_measure, sa_transition_matrix, state_marginal,
                        truncated_occupancy)

__all__ = [
    "EnumerationCapError",
    "ConcentrabilityReport",
    "AdvantageReport",
    "exhaustive_state_values",
    "near_optimal_policies",
    "covering_concentrability",
    "data_concentrability",
    "mixture_covering",
    "per_step_coefficient",
    "weighted_l2",
    "weighted_l1",
    "verify_q_error",
    "advantage_gap_sides",
    "verify_l1_advantage",
    "prefix_switched",
    "verify_advantage_to_suboptimality",
    "telescoping_sides",
]

SLACK = 1e-9
_SUPP_ATOL = 1e-15


class EnumerationCapError(RuntimeError):
    """Raised when an exhaustive enumeration would exceed the size cap."""


def _table_policy(table, n_states: int, n_actions: int) -> Policy:
    probs = np.zeros((n_states, n_actions))
    probs[np.arange(n_states), table] = 1.0
    return Policy(probs)


def _all_tables(mdp: TabularMDP, cap: int) -> np.ndarray:
    count = mdp.n_actions ** mdp.n_states
    if count > cap:
        raise EnumerationCapError(
            f"enumeration too large: {mdp.n_actions}^{mdp.n_states} = {count} "
            f"stationary tables exceed the cap {cap}"
        )
    return np.array(list(itertools.product(range(mdp.n_actions), repeat=mdp.n_states)),
                    dtype=np.int64)


def _table_values(mdp: TabularMDP, tables: np.ndarray) -> np.ndarray:
    """Exact V_pi for every deterministic table, one linear solve each."""
    S = mdp.n_states
    eye = np.eye(S)
    idx = np.arange(S)
    out = np.empty((len(tables), S))
    for k, tab in enumerate(tables):
        P_pi = mdp.transition[idx, tab, :]
        R_pi = mdp.reward[idx, tab]
        out[k] = np.linalg.solve(eye - mdp.gamma * P_pi, R_pi)
    return out


def exhaustive_state_values(mdp: TabularMDP, cap: int = 200_000) -> np.ndarray:
    """Optimal state values by brute force over all deterministic stationary
    tables; independent of the iterative planner."""
    tables = _all_tables(mdp, cap)
    return _table_values(mdp, tables).max(axis=0)


def _action_groups(mdp: TabularMDP):
    """Per state, the lowest-index representative of each (transition row,
    reward) equivalence class of actions, in index order."""
    reps = []
    for s in range(mdp.n_states):
        seen = {}
        for a in range(mdp.n_actions):
            key = (mdp.transition[s, a].tobytes(), float(mdp.reward[s, a]))
            if key not in seen:
                seen[key] = a
        reps.append(sorted(seen.values()))
    return reps


def near_optimal_policies(mdp: TabularMDP, eps: float, horizon: int,
                          cap: int = 200_000):
    """Enumerate the eps-near-optimal policies with prefix length <= horizon.

    A policy is kept when its exact suboptimality J* - J is at most eps (plus
    float slack).  Tails range over every deterministic stationary table;
    prefixes make decisions only at states the flow actually reaches, one
    representative per equivalent action group, with branch-and-bound pruning
    on the accumulated advantage deficit (which lower-bounds the final gap).
    Off-support prefix entries inherit the tail's action, and prefixes that
    end by agreeing with their tail are trimmed, so each behavior appears
    once.  Raises EnumerationCapError when the table family, the live search
    frontier, or the result set would exceed cap.
    """
    S, A = mdp.n_states, mdp.n_actions
    g = mdp.gamma
    tables = _all_tables(mdp, cap)
    values = _table_values(mdp, tables)
    v_star = values.max(axis=0)
    q_star = mdp.reward + g * mdp.transition @ v_star
    deficit = v_star[:, None] - q_star
    band = SLACK * np.maximum(1.0, np.abs(v_star))[:, None]
    deficit[deficit <= band] = 0.0
    deficit = np.maximum(deficit, 0.0)

    reps = _action_groups(mdp)
    threshold = eps + SLACK

    # frontier of prefix nodes: (flow over states, deficit so far, decisions)
    nodes = [(mdp.initial_dist.copy(), 0.0, ())]
    levels = [nodes]
    disc = 1.0
    generated = 1
    for _ in range(horizon):
        nxt = []
        for rho, d_acc, decisions in nodes:
            supp = np.nonzero(rho > _SUPP_ATOL)[0]
            options = [reps[s] for s in supp]
            for combo in itertools.product(*options):
                step = d_acc
                for s, a in zip(supp, combo):
                    step += disc * rho[s] * deficit[s, a]
                if step > threshold:
                    continue
                rho_next = np.zeros(S)
                for s, a in zip(supp, combo):
                    rho_next += rho[s] * mdp.transition[s, a]
                made = tuple((int(s), int(a)) for s, a in zip(supp, combo))
                nxt.append((rho_next, step, decisions + (made,)))
                generated += 1
                if generated > cap:
                    raise EnumerationCapError(
                        f"enumeration too large: prefix frontier exceeded the cap {cap}"
                    )
        nodes = nxt
        levels.append(nodes)
        disc *= g
        if not nodes:
            break

    seen = set()
    found = []
    disc = 1.0
    for depth, level in enumerate(levels):
        for rho, d_acc, decisions in level:
            tail_raw = values @ rho  # J of each tail continuation from rho
            base = float(rho @ v_star)
            for k in range(len(tables)):
                tail_def = max(base - float(tail_raw[k]), 0.0)
                if d_acc + disc * tail_def > threshold:
                    continue
                tab = tables[k]
                trimmed = list(decisions)
                while trimmed and all(tab[s] == a for s, a in trimmed[-1]):
                    trimmed.pop()
                sig = (tuple(trimmed), k)
                if sig in seen:
                    continue
                seen.add(sig)
                found.append((len(trimmed), tuple(trimmed), k))
                if len(found) > cap:
                    raise EnumerationCapError(
                        f"enumeration too large: more than {cap} near-optimal policies"
                    )
        disc *= g

    found.sort()
    out = []
    for _, decisions, k in found:
        tail = _table_policy(tables[k], S, A)
        prefix = []
        for step_dec in decisions:
            tab = tables[k].copy()
            for s, a in step_dec:
                tab[s] = a
            prefix.append(_table_policy(tab, S, A))
        out.append(NonStationaryPolicy(tuple(prefix), tail))
    return out


@dataclass(frozen=True, eq=False)
class ConcentrabilityReport:
    """A sup density ratio plus the argument attaining it."""

    kind: str
    coefficient: float
    witness_policy: object
    witness_policy_index: int
    witness_index: object  # state index, or (s, a) pair
    horizon: int
    policy_count: int


def covering_concentrability(mdp: TabularMDP, mu_c: StateDistribution, eps: float,
                             horizon: int, cap: int = 200_000) -> ConcentrabilityReport:
    """Worst state-occupancy ratio over the enumerated near-optimal family
    against the covering state distribution.  +inf is a legal coefficient;
    the witness is the first (policy, state) attaining the sup."""
    policies = near_optimal_policies(mdp, eps, horizon, cap)
    start = StateDistribution(mdp.initial_dist)
    best = -math.inf
    best_pol = None
    best_idx = -1
    best_state = -1
    for idx, pol in enumerate(policies):
        mu = state_marginal(occupancy_measure(mdp, pol, start))
        ratios = density_ratio(mu.weights, mu_c.weights)
        top = float(ratios.max())
        if top > best:
            best = top
            best_pol = pol
            best_idx = idx
            best_state = int(np.argmax(ratios))
            if math.isinf(best):
                break
    return ConcentrabilityReport("covering", best, best_pol, best_idx, best_state,
                                 horizon, len(policies))


def data_concentrability(mdp: TabularMDP, d_c: SADistribution,
                         d_data: SADistribution) -> ConcentrabilityReport:
    """Ratio of the optimal-tail flow started from the covering distribution
    against the dataset distribution."""
    _, pistar = optimal_q(mdp)
    flow = occupancy_measure(mdp, pistar, d_c)
    ratios = density_ratio(flow.weights, d_data.weights)
    coeff = float(ratios.max())
    s, a = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    return ConcentrabilityReport("data", coeff, pistar, 0, (int(s), int(a)), 0, 1)


def mixture_covering(mdp: TabularMDP, policies, weights=None) -> SADistribution:
    """Occupancy mixture sum_k lambda_k d_{pi_k} from the initial distribution."""
    if not policies:
        raise ValueError("mixture needs at least one policy")
    if weights is None:
        weights = np.full(len(policies), 1.0 / len(policies))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(policies),):
        raise ValueError(
            f"{len(weights)} mixture weights for {len(policies)} policies")
    start = StateDistribution(mdp.initial_dist)
    acc = np.zeros((mdp.n_states, mdp.n_actions))
    for lam, pol in zip(weights, policies):
        acc += lam * occupancy_measure(mdp, pol, start).weights
    return SADistribution(acc)


def per_step_coefficient(mdp: TabularMDP, policies, d_data: SADistribution,
                         include_switched: bool = True, tail_tol: float = 1e-12,
                         max_steps: int = 2000) -> float:
    """Largest per-step state-action ratio against the dataset distribution.

    Covers each policy's own step distributions and, by default, their
    continuations under the optimal greedy tail (switching at every step),
    which is the family the mixture-covering argument actually bounds.
    Forward iteration stops once the discount tail drops below tail_tol.
    """
    g = mdp.gamma
    steps = min(max_steps, int(math.ceil(math.log(tail_tol) / math.log(g))) + 1)
    dd = d_data.weights.ravel()
    pos = dd > 0.0
    _, pistar = optimal_q(mdp)
    m_star = sa_transition_matrix(mdp, pistar)

    def _max_ratio(cols):
        # columns are exact forward flows: zeros are exact, so the 0/0 and
        # x/0 conventions apply literally
        out = np.full(cols.shape, np.inf)
        out[pos, :] = cols[pos, :] / dd[pos, None]
        zero_den = ~pos
        out[zero_den, :] = np.where(cols[zero_den, :] == 0.0, 1.0, np.inf)
        return float(out.max())

    best = 0.0
    for pol in policies:
        stationary = isinstance(pol, Policy)
        step0 = pol if stationary else pol.at_step(0)
        d = (mdp.initial_dist[:, None] * step0.probs).ravel()
        cols = []
        for t in range(steps):
            cols.append(d)
            nxt_policy = pol if stationary else pol.at_step(t + 1)
            nxt_state = np.einsum("sap,sa->p", mdp.transition,
                                  d.reshape(mdp.n_states, mdp.n_actions))
            d = (nxt_state[:, None] * nxt_policy.probs).ravel()
        cols = np.stack(cols, axis=1)
        best = max(best, _max_ratio(cols))
        if include_switched:
            prev = cols
            for _ in range(steps):
                cur = m_star @ prev
                best = max(best, _max_ratio(cur))
                if float(np.max(np.abs(cur - prev))) < 1e-16:
                    break
                prev = cur
        if math.isinf(best):
            break
    return best


def weighted_l2(d: SADistribution, f: np.ndarray) -> float:
    return math.sqrt(float(np.sum(d.weights * f * f)))


def weighted_l1(d: SADistribution, f: np.ndarray) -> float:
    return float(np.sum(d.weights * np.abs(f)))


def verify_q_error(mdp: TabularMDP, d_c: SADistribution, q_hat: np.ndarray,
                   eps_stat: float, atol: float = SLACK) -> bool:
    """Whether the fit meets the covering-norm guarantee 2 sqrt(eps_stat)."""
    qstar, _ = optimal_q(mdp)
    return weighted_l2(d_c, q_hat - qstar.values) <= 2.0 * math.sqrt(eps_stat) + atol


def advantage_gap_sides(mdp: TabularMDP, mu_c: StateDistribution, pi_c: Policy,
                        q_hat: np.ndarray, pi_hat: Policy, u_b: float):
    """Both sides of the extraction-error inequality: the optimal-value
    advantage lost by pi_hat under mu_c, and twice u_b times the covering
    l1 error of the fit."""
    qstar, pistar = optimal_q(mdp)
    lhs = float(mu_c.weights @ (
        np.einsum("sa,sa->s", qstar.values, pistar.probs)
        - np.einsum("sa,sa->s", qstar.values, pi_hat.probs)))
    d_c = SADistribution(mu_c.weights[:, None] * pi_c.probs)
    rhs = 2.0 * u_b * weighted_l1(d_c, q_hat - qstar.values)
    return lhs, rhs


def verify_l1_advantage(mdp: TabularMDP, mu_c: StateDistribution, pi_c: Policy,
                        q_hat: np.ndarray, pi_hat: Policy, u_b: float,
                        atol: float = SLACK) -> bool:
    lhs, rhs = advantage_gap_sides(mdp, mu_c, pi_c, q_hat, pi_hat, u_b)
    return lhs <= rhs + atol


def prefix_switched(pi_hat: Policy, pistar: Policy, i: int) -> NonStationaryPolicy:
    """Follow pi_hat through step i, then the optimal policy forever."""
    return NonStationaryPolicy((pi_hat,) * (i + 1), pistar)


@dataclass(frozen=True, eq=False)
class AdvantageReport:
    premise: float
    gap: float
    bound: float
    required_radius: float
    step_gaps: tuple
    infinite_coefficient: bool
    ok: bool


def verify_advantage_to_suboptimality(mdp: TabularMDP, mu_c: StateDistribution,
                                      pi_hat: Policy, eps_adv: float, c_c: float,
                                      replay_horizon: int = 8) -> AdvantageReport:
    """Check the advantage-to-suboptimality induction on one instance.

    Requires the premise <mu_c, Q*(., pi_hat) - Q*(., pi*)> >= -eps_adv (an
    error otherwise: the implication has nothing to say there) and then verifies
    J* - J <= c_c eps_adv / (1 - gamma), replaying the induction on the
    prefix-switched policies up to replay_horizon.  An infinite coefficient
    makes the bound vacuous; the report flags that case rather than calling
    it a violation.
    """
    qstar, pistar = optimal_q(mdp)
    premise = float(mu_c.weights @ (
        np.einsum("sa,sa->s", qstar.values, pi_hat.probs)
        - np.einsum("sa,sa->s", qstar.values, pistar.probs)))
    if premise < -eps_adv - SLACK:
        raise ValueError(
            f"premise violated: advantage inner product {premise} is below -{eps_adv}"
        )
    j_star = expected_return(mdp, pistar)
    gap = j_star - expected_return(mdp, pi_hat)
    # an infinite coefficient always gives the vacuous bound, even at
    # eps_adv = 0 where inf * 0 would otherwise poison the comparison
    if math.isinf(c_c):
        bound = math.inf
    else:
        bound = c_c * eps_adv / (1.0 - mdp.gamma)
    step_gaps = []
    ok = gap <= bound + SLACK
    for i in range(replay_horizon + 1):
        gi = j_star - expected_return(mdp, prefix_switched(pi_hat, pistar, i))
        step_gaps.append(gi)
        ok = ok and gi <= bound + SLACK
    return AdvantageReport(premise, gap, bound, bound, tuple(step_gaps),
                           math.isinf(c_c), ok)


def telescoping_sides(mdp: TabularMDP, pi_hat: Policy, i: int):
    """Both sides of the prefix-switch telescoping identity at switch step i:
    (1 - gamma)(J(switched_i) - J*) against the truncated-occupancy inner
    product of pi_hat's advantage under Q*."""
    qstar, pistar = optimal_q(mdp)
    switched = prefix_switched(pi_hat, pistar, i)
    j_star = expected_return(mdp, pistar)
    lhs = (1.0 - mdp.gamma) * (expected_return(mdp, switched) - j_star)
    occ = truncated_occupancy(mdp, switched, StateDistribution(mdp.initial_dist), 0, i)
    mu = occ.sum(axis=1)
    adv = (np.einsum("sa,sa->s", qstar.values, pi_hat.probs)
           - np.einsum("sa,sa->s", qstar.values, pistar.probs))
    rhs = float(mu @ adv)
    return lhs, rhs
