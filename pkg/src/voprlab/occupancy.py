"""Discounted occupancy measures, transition operators, and density ratios.

State-action distributions are stored as (S, A) weight tables.  The flat
index convention for files and matrices is s-major: pair (s, a) maps to row
s * n_actions + a.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mdp import NonStationaryPolicy, Policy, QFunction, TabularMDP, ValidationError
from .textio import fmt_float

__all__ = [
    "SADistribution",
    "StateDistribution",
    "compose",
    "state_marginal",
    "conditional_policy",
    "apply_transition",
    "apply_adjoint",
    "sa_transition_matrix",
    "occupancy_measure",
    "truncated_occupancy",
    "density_ratio",
    "sup_ratio",
    "save_distribution",
    "load_sa_distribution",
    "load_state_distribution",
]

_NEG_CLAMP = 1e-11


def _clean_weights(weights, what: str) -> np.ndarray:
    w = np.array(weights, dtype=np.float64)
    if w.size and w.min() < -_NEG_CLAMP:
        idx = np.unravel_index(int(np.argmin(w)), w.shape)
        raise ValidationError(f"{what} has negative weight {w.min()} at {idx}")
    w[w < 0.0] = 0.0
    total = float(w.sum())
    if abs(total - 1.0) > 1e-10:
        raise ValidationError(f"{what} sums to {total}, deviation {total - 1.0}")
    w.setflags(write=False)
    return w


@dataclass(frozen=True, eq=False)
class SADistribution:
    """Normalized distribution over state-action pairs."""

    weights: np.ndarray

    def __post_init__(self):
        w = _clean_weights(self.weights, "state-action distribution")
        if w.ndim != 2:
            raise ValidationError("state-action weights must be 2-d")
        object.__setattr__(self, "weights", w)

    @property
    def flat(self) -> np.ndarray:
        return self.weights.ravel()


@dataclass(frozen=True, eq=False)
class StateDistribution:
    """Normalized distribution over states."""

    weights: np.ndarray

    def __post_init__(self):
        w = _clean_weights(self.weights, "state distribution")
        if w.ndim != 1:
            raise ValidationError("state weights must be 1-d")
        object.__setattr__(self, "weights", w)


def compose(mu: StateDistribution, policy: Policy) -> SADistribution:
    """Product distribution (mu x pi)(s, a) = mu(s) pi(a | s)."""
    return SADistribution(mu.weights[:, None] * policy.probs)


def state_marginal(d: SADistribution) -> StateDistribution:
    return StateDistribution(d.weights.sum(axis=1))


def conditional_policy(d: SADistribution) -> Policy:
    """Conditional pi(a | s) of a joint distribution.

    States with zero marginal get the uniform row; nothing downstream should
    depend on the choice there, it only keeps the table a valid policy.
    """
    mu = d.weights.sum(axis=1)
    A = d.weights.shape[1]
    probs = np.full_like(d.weights, 1.0 / A)
    pos = mu > 0.0
    probs[pos] = d.weights[pos] / mu[pos, None]
    return Policy(probs)


def apply_transition(mdp: TabularMDP, policy: Policy, d: SADistribution) -> SADistribution:
    """Push a state-action distribution one step forward through P then pi."""
    next_state = np.einsum("sap,sa->p", mdp.transition, d.weights)
    return SADistribution(next_state[:, None] * policy.probs)


def apply_adjoint(mdp: TabularMDP, policy: Policy, q: QFunction) -> QFunction:
    """Adjoint of the forward operator acting on value tables."""
    v = np.einsum("pb,pb->p", policy.probs, q.values)
    return QFunction(mdp.transition @ v)


def sa_transition_matrix(mdp: TabularMDP, policy: Policy) -> np.ndarray:
    """Forward operator as a (S*A, S*A) column-stochastic matrix on flat weights."""
    S, A = mdp.n_states, mdp.n_actions
    m = np.einsum("sap,pb->pbsa", mdp.transition, policy.probs)
    return m.reshape(S * A, S * A)


def _start_pair_weights(mdp, policy, start) -> np.ndarray:
    if isinstance(start, SADistribution):
        return start.weights
    step0 = policy.at_step(0) if isinstance(policy, NonStationaryPolicy) else policy
    return start.weights[:, None] * step0.probs


def occupancy_measure(mdp: TabularMDP, policy, start) -> SADistribution:
    """Normalized discounted occupancy of a policy from a start distribution.

    start may be a StateDistribution (first action drawn from the policy) or
    an SADistribution (first pair fixed).  Stationary policies use the direct
    resolvent solve; non-stationary ones roll the prefix forward and close
    with the tail's solve.  The geometric weights make the result a proper
    distribution, which the return type checks.
    """
    S, A = mdp.n_states, mdp.n_actions
    g = mdp.gamma
    d0 = _start_pair_weights(mdp, policy, start)
    if isinstance(policy, Policy):
        M = sa_transition_matrix(mdp, policy)
        x = np.linalg.solve(np.eye(S * A) - g * M, (1.0 - g) * d0.ravel())
        residual = np.max(np.abs((np.eye(S * A) - g * M) @ x - (1.0 - g) * d0.ravel()))
        if residual > 1e-10:
            raise RuntimeError(f"occupancy solve residual {residual:.3e}")
        return SADistribution(x.reshape(S, A))
    acc = np.zeros((S, A))
    d = d0
    disc = 1.0
    for t in range(policy.horizon):
        acc += (1.0 - g) * disc * d
        nxt = np.einsum("sap,sa->p", mdp.transition, d)
        d = nxt[:, None] * policy.at_step(t + 1).probs
        disc *= g
    M = sa_transition_matrix(mdp, policy.tail)
    x = np.linalg.solve(np.eye(S * A) - g * M, (1.0 - g) * d.ravel())
    acc += disc * x.reshape(S, A)
    return SADistribution(acc)


def truncated_occupancy(mdp: TabularMDP, policy, start, first: int, last=None) -> np.ndarray:
    """Occupancy mass restricted to steps first..last, as a raw (S, A) measure.

    last=None means the full tail; the result then has total mass gamma**first.
    With both endpoints finite the sum is taken literally, so the identity
    truncated(0, k) + truncated(k+1, None) = occupancy holds to solver
    precision.
    """
    S, A = mdp.n_states, mdp.n_actions
    g = mdp.gamma
    d = _start_pair_weights(mdp, policy, start)
    acc = np.zeros((S, A))
    disc = 1.0
    t = 0
    stationary = isinstance(policy, Policy)
    horizon = 0 if stationary else policy.horizon

    def step_policy(i):
        return policy if stationary else policy.at_step(i)

    while True:
        if t >= first and last is None and t >= horizon:
            # remaining steps all use one stationary table: close with a solve
            M = sa_transition_matrix(mdp, step_policy(t))
            x = np.linalg.solve(np.eye(S * A) - g * M, (1.0 - g) * d.ravel())
            acc += disc * x.reshape(S, A)
            return acc
        if t >= first:
            acc += (1.0 - g) * disc * d
        if last is not None and t >= last:
            return acc
        nxt = np.einsum("sap,sa->p", mdp.transition, d)
        d = nxt[:, None] * step_policy(t + 1).probs
        disc *= g
        t += 1


def _weights(x) -> np.ndarray:
    if isinstance(x, (SADistribution, StateDistribution)):
        return x.weights
    return np.asarray(x, dtype=np.float64)


def density_ratio(num, den) -> np.ndarray:
    """Elementwise ratio with the measure-theoretic conventions 0/0 = 1 and
    positive/0 = +inf."""
    n, d = _weights(num), _weights(den)
    if n.shape != d.shape:
        raise ValidationError(f"ratio shapes differ: {n.shape} vs {d.shape}")
    out = np.full(n.shape, np.inf)
    both_zero = (n == 0.0) & (d == 0.0)
    pos = d > 0.0
    out[pos] = n[pos] / d[pos]
    out[both_zero] = 1.0
    return out


def sup_ratio(num, den) -> float:
    """Sup-norm of the density ratio; +inf is a legal answer, not an error."""
    r = density_ratio(num, den)
    return float(r.max()) if r.size else 1.0


# ---------------------------------------------------------------------------
# csv format


def save_distribution(dist, path):
    """CSV with flat index column; header comment records the convention."""
    kind = "state-action, s-major (row = s * n_actions + a)" if isinstance(
        dist, SADistribution) else "state"
    with open(path, "w", newline="") as fh:
        fh.write(f"# index: {kind}\n")
        writer = csv.writer(fh)
        writer.writerow(["index", "weight"])
        for i, w in enumerate(_weights(dist).ravel()):
            writer.writerow([i, fmt_float(w)])


def _load_weights(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("index"):
                continue
            idx, w = line.strip().split(",")
            rows.append((int(idx), float(w)))
    rows.sort()
    return np.array([w for _, w in rows])


def load_sa_distribution(path, n_states: int, n_actions: int) -> SADistribution:
    return SADistribution(_load_weights(path).reshape(n_states, n_actions))


def load_state_distribution(path) -> StateDistribution:
    return StateDistribution(_load_weights(path))
