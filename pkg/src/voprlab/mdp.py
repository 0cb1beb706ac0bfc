"""Finite discounted MDPs and exact planning primitives.

Everything here is tabular and double precision.  Transition tensors have
shape (S, A, S), rewards (S, A), and all solves go through numpy's dense
linear algebra.  Functions treat their inputs as immutable; the dataclasses
freeze their arrays on construction.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .textio import fmt_float, fmt_vector, parse_vector

__all__ = [
    "ValidationError",
    "TabularMDP",
    "Policy",
    "NonStationaryPolicy",
    "QFunction",
    "validate_mdp",
    "bellman_backup",
    "value_iteration",
    "policy_q_values",
    "optimal_q",
    "greedy_policy",
    "expected_return",
    "truncated_return",
    "performance_difference",
    "save_mdp",
    "load_mdp",
    "mdp_digest",
]

log = logging.getLogger(__name__)

ROW_ATOL = 1e-12
TIE_ATOL = 1e-9


class ValidationError(ValueError):
    """A model object violates one of its structural invariants."""


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP with rewards in [0, r_max] and discount gamma in (0, 1).

    transition[s, a, s'] is the probability of landing in s' after playing a
    in s.  initial_dist is the start-state distribution.  v_max is the value
    ceiling r_max / (1 - gamma) used wherever a uniform bound on Q is needed.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    r_max: float = None

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.r_max is None:
            object.__setattr__(self, "r_max", float(self.reward.max()) if self.reward.size else 0.0)
        else:
            object.__setattr__(self, "r_max", float(self.r_max))
        validate_mdp(self)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary stochastic policy; probs[s, a] = pi(a | s)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValidationError("policy table must be 2-d (states by actions)")
        if probs.size and probs.min() < -ROW_ATOL:
            s, a = np.unravel_index(int(np.argmin(probs)), probs.shape)
            raise ValidationError(f"policy prob negative at (s={s}, a={a}): {probs[s, a]}")
        probs = np.clip(probs, 0.0, None)
        sums = probs.sum(axis=1)
        bad = np.abs(sums - 1.0) > 1e-10
        if bad.any():
            s = int(np.argmax(bad))
            raise ValidationError(
                f"policy row s={s} sums to {sums[s]}, deviation {sums[s] - 1.0}"
            )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class NonStationaryPolicy:
    """Plays prefix[t] at step t < len(prefix), then the stationary tail."""

    prefix: tuple
    tail: Policy

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(self.prefix))
        for p in self.prefix:
            if p.probs.shape != self.tail.probs.shape:
                raise ValidationError("prefix and tail policies disagree on shape")

    @property
    def horizon(self) -> int:
        return len(self.prefix)

    def at_step(self, t: int) -> Policy:
        return self.prefix[t] if t < len(self.prefix) else self.tail


@dataclass(frozen=True, eq=False)
class QFunction:
    """State-action value table; values[s, a]."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))


def validate_mdp(mdp: TabularMDP) -> TabularMDP:
    """Check structural invariants, raising on the first violation found."""
    P, R, mu0 = mdp.transition, mdp.reward, mdp.initial_dist
    if P.ndim != 3 or P.shape[0] != P.shape[2]:
        raise ValidationError(f"transition tensor must be (S, A, S), got {P.shape}")
    S, A = P.shape[0], P.shape[1]
    if R.shape != (S, A):
        raise ValidationError(f"reward shape {R.shape} does not match (S, A)=({S}, {A})")
    if mu0.shape != (S,):
        raise ValidationError(f"initial distribution shape {mu0.shape}, expected ({S},)")
    if not (0.0 < mdp.gamma < 1.0):
        raise ValidationError(f"gamma must lie in (0, 1), got {mdp.gamma}")
    for s in range(S):
        for a in range(A):
            row = P[s, a]
            if row.min() < -ROW_ATOL:
                raise ValidationError(
                    f"transition row (s={s}, a={a}) has negative entry {row.min()}"
                )
            total = float(row.sum())
            if abs(total - 1.0) > 1e-10:
                raise ValidationError(
                    f"transition row (s={s}, a={a}) sums to {total}, "
                    f"deviation {total - 1.0}"
                )
    if R.size and (R.min() < 0.0 or R.max() > mdp.r_max + ROW_ATOL):
        s, a = np.unravel_index(
            int(np.argmin(R)) if R.min() < 0.0 else int(np.argmax(R)), R.shape
        )
        raise ValidationError(
            f"reward out of [0, R_max] at (s={s}, a={a}): value {R[s, a]}, R_max {mdp.r_max}"
        )
    if mu0.min() < -ROW_ATOL:
        raise ValidationError(f"initial distribution has negative entry {mu0.min()}")
    total = float(mu0.sum())
    if abs(total - 1.0) > 1e-10:
        raise ValidationError(f"initial distribution sums to {total}, deviation {total - 1.0}")
    return mdp


def bellman_backup(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    """Optimality backup R + gamma * P max_a' q, as a raw (S, A) array."""
    v = np.max(q, axis=1)
    return mdp.reward + mdp.gamma * mdp.transition @ v


def value_iteration(mdp: TabularMDP, tol: float = 1e-8) -> QFunction:
    """Iterate the optimality backup until the sup-norm residual certifies
    a value error of at most tol.

    The stopping residual is tol * (1 - gamma) / max(2 * gamma, 1); the extra
    clamp keeps the certificate valid when gamma < 1/2.
    """
    g = mdp.gamma
    threshold = tol * (1.0 - g) / max(2.0 * g, 1.0)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for it in range(1, 1_000_000):
        nxt = bellman_backup(mdp, q)
        residual = float(np.max(np.abs(nxt - q)))
        q = nxt
        if residual <= threshold:
            log.debug("value_iteration converged in %d sweeps (residual %.3e)", it, residual)
            return QFunction(q)
    raise RuntimeError("value iteration failed to converge")


def _closed_loop(mdp: TabularMDP, policy: Policy):
    """State-to-state kernel P_pi and expected reward under pi."""
    P_pi = np.einsum("sap,sa->sp", mdp.transition, policy.probs)
    R_pi = np.einsum("sa,sa->s", mdp.reward, policy.probs)
    return P_pi, R_pi


def policy_q_values(mdp: TabularMDP, policy: Policy) -> QFunction:
    """Exact Q_pi via a direct linear solve of the evaluation equations."""
    S, A = mdp.n_states, mdp.n_actions
    P_pi, R_pi = _closed_loop(mdp, policy)
    v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, R_pi)
    q = mdp.reward + mdp.gamma * mdp.transition @ v
    residual = np.max(np.abs(q - (mdp.reward + mdp.gamma * np.einsum(
        "sap,pb,pb->sa", mdp.transition, policy.probs, q))))
    if residual > 1e-10:
        raise RuntimeError(f"policy evaluation residual {residual:.3e} exceeds 1e-10")
    return QFunction(q)


def greedy_policy(q: QFunction, tie_atol: float = TIE_ATOL) -> Policy:
    """Deterministic greedy policy; near-ties go to the lowest action index.

    Two actions are tied when their values are within tie_atol (scaled by the
    row magnitude), which keeps the selection stable across solvers that agree
    only to machine precision.
    """
    vals = q.values
    S, A = vals.shape
    best = vals.max(axis=1, keepdims=True)
    band = tie_atol * np.maximum(1.0, np.abs(best))
    choice = np.argmax(vals >= best - band, axis=1)
    probs = np.zeros((S, A))
    probs[np.arange(S), choice] = 1.0
    return Policy(probs)


def optimal_q(mdp: TabularMDP, tol: float = 1e-10):
    """(Q*, pi*) with Q* refined to solver precision.

    Runs value iteration to tol, extracts the greedy policy, then replaces the
    iterate with that policy's exact evaluation.  When the greedy policy is
    optimal (any action gap above tol) the result is exact up to the linear
    solve.  A Bellman residual check guards the refinement.
    """
    rough = value_iteration(mdp, tol=tol)
    pi = greedy_policy(rough)
    refined = policy_q_values(mdp, pi)
    residual = float(np.max(np.abs(bellman_backup(mdp, refined.values) - refined.values)))
    if residual > 1e-9:
        raise RuntimeError(
            f"optimal value refinement failed (Bellman residual {residual:.3e}); "
            "the model has action gaps below the value-iteration tolerance"
        )
    return refined, pi


def _state_occupancy(mdp: TabularMDP, policy: Policy, start: np.ndarray) -> np.ndarray:
    # normalized discounted state occupancy (1-gamma) sum_t gamma^t rho_t
    S = mdp.n_states
    P_pi, _ = _closed_loop(mdp, policy)
    return (1.0 - mdp.gamma) * np.linalg.solve(np.eye(S) - mdp.gamma * P_pi.T, start)


def expected_return(mdp: TabularMDP, policy) -> float:
    """Discounted return J(pi) from the initial distribution, exactly.

    Accepts a stationary Policy or a NonStationaryPolicy; the latter is
    evaluated by rolling the distribution forward through the prefix and
    closing with the tail's evaluation.
    """
    if isinstance(policy, Policy):
        S = mdp.n_states
        P_pi, R_pi = _closed_loop(mdp, policy)
        v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, R_pi)
        return float(mdp.initial_dist @ v)
    total = 0.0
    rho = mdp.initial_dist.copy()
    disc = 1.0
    for step in policy.prefix:
        P_pi, R_pi = _closed_loop(mdp, step)
        total += disc * float(rho @ R_pi)
        rho = P_pi.T @ rho
        disc *= mdp.gamma
    P_pi, R_pi = _closed_loop(mdp, policy.tail)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, R_pi)
    return total + disc * float(rho @ v)


def truncated_return(mdp: TabularMDP, policy, horizon: int) -> float:
    """Return accumulated over steps 0..horizon only."""
    total = 0.0
    rho = mdp.initial_dist.copy()
    disc = 1.0
    for t in range(horizon + 1):
        step = policy.at_step(t) if isinstance(policy, NonStationaryPolicy) else policy
        P_pi, R_pi = _closed_loop(mdp, step)
        total += disc * float(rho @ R_pi)
        rho = P_pi.T @ rho
        disc *= mdp.gamma
    return total


def performance_difference(mdp: TabularMDP, pi_first: Policy, pi_second: Policy):
    """Both sides of the performance difference identity.

    lhs = (1 - gamma) (J(pi_first) - J(pi_second)); rhs is the advantage of
    pi_first under pi_second's Q, averaged over pi_first's occupancy.  The two
    agree to solver precision, which the caller can assert.
    """
    lhs = (1.0 - mdp.gamma) * (expected_return(mdp, pi_first) - expected_return(mdp, pi_second))
    mu = _state_occupancy(mdp, pi_first, mdp.initial_dist)
    q2 = policy_q_values(mdp, pi_second).values
    adv = np.einsum("sa,sa->s", q2, pi_first.probs) - np.einsum(
        "sa,sa->s", q2, pi_second.probs)
    rhs = float(mu @ adv)
    return lhs, rhs


# ---------------------------------------------------------------------------
# model file format


def save_mdp(mdp: TabularMDP, path):
    """Write the model as structured text; floats keep full precision."""
    lines = [
        "# voprlab mdp v1",
        f"n_states {mdp.n_states}",
        f"n_actions {mdp.n_actions}",
        f"gamma {fmt_float(mdp.gamma)}",
        f"r_max {fmt_float(mdp.r_max)}",
        "transition " + fmt_vector(mdp.transition),
        "reward " + fmt_vector(mdp.reward),
        "initial_dist " + fmt_vector(mdp.initial_dist),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mdp(path) -> TabularMDP:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        fields[key] = rest
    missing = {"n_states", "n_actions", "gamma", "r_max", "transition",
               "reward", "initial_dist"} - set(fields)
    if missing:
        raise ValidationError(f"model file {path} is missing field '{sorted(missing)[0]}'")
    try:
        S = int(fields["n_states"])
        A = int(fields["n_actions"])
        mdp = TabularMDP(
            transition=parse_vector(fields["transition"]).reshape(S, A, S),
            reward=parse_vector(fields["reward"]).reshape(S, A),
            gamma=float(fields["gamma"]),
            initial_dist=parse_vector(fields["initial_dist"]),
            r_max=float(fields["r_max"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"model file {path} is malformed: {exc}") from exc
    return validate_mdp(mdp)


def mdp_digest(mdp: TabularMDP) -> str:
    """Stable content hash used to tie datasets to the model they came from."""
    h = hashlib.sha256()
    for arr in (mdp.transition, mdp.reward, mdp.initial_dist):
        h.update(arr.tobytes())
    h.update(fmt_float(mdp.gamma).encode())
    h.update(fmt_float(mdp.r_max).encode())
    return h.hexdigest()[:16]
