"""Finite function classes containing their realized target elements.

The three class kinds mirror the three optimization variables: candidate
value tables (kind Q), dataset density-ratio weights (kind W), and policy
reweighting ratios (kind B).  Realized elements:

  * Q side: the optimal value table itself.
  * W side: w with w * d_data = (I - gamma P_forward)^{-1} (d_c * Q*),
    where the product d_c * Q* is elementwise and P_forward pushes measures
    through the dynamics closed with the optimal greedy policy.
  * B side: beta with beta * pi_c = pi_star elementwise, which also gives
    the per-state normalization <beta(s, .), pi_c(. | s)> = 1.

Distractor members are clipped noisy perturbations of the realized element;
B distractors are renormalized per state so every member stays a valid
reweighting.  Reported bounds for W and B are the true maxima over members,
so downstream error terms use honest envelopes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import Policy, TabularMDP, ValidationError, optimal_q
from .occupancy import SADistribution, sa_transition_matrix
from .textio import fmt_float, fmt_vector, parse_vector

__all__ = [
    "UnrealizableError",
    "FiniteFunctionClass",
    "validate_function_class",
    "optimal_density_ratio",
    "optimal_policy_ratio",
    "build_realizable_classes",
    "audit_realizability",
    "save_function_class",
    "load_function_class",
]

KINDS = ("Q", "W", "B")


class UnrealizableError(ValueError):
    """The requested realized element does not exist under this coverage."""


@dataclass(frozen=True, eq=False)
class FiniteFunctionClass:
    """Ordered finite class of (S, A) tables with a recorded range bound."""

    members: tuple
    kind: str
    bound: float

    def __post_init__(self):
        frozen = []
        for m in self.members:
            arr = np.array(m, dtype=np.float64)
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "members", tuple(frozen))
        object.__setattr__(self, "bound", float(self.bound))
        if self.kind not in KINDS:
            raise ValidationError(f"unknown class kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.members)


def validate_function_class(cls: FiniteFunctionClass, pi_c: Policy = None,
                            atol: float = 1e-9) -> FiniteFunctionClass:
    """Check membership invariants: nonnegativity, the range bound, and for
    kind B (when pi_c is given) the per-state normalization."""
    if not cls.members:
        raise ValidationError("function class has no members")
    shape = cls.members[0].shape
    for i, m in enumerate(cls.members):
        if m.shape != shape:
            raise ValidationError(f"member {i} shape {m.shape} differs from {shape}")
        if m.min() < -atol:
            raise ValidationError(f"member {i} of kind {cls.kind} is negative: {m.min()}")
        if m.max() > cls.bound + atol:
            raise ValidationError(
                f"member {i} of kind {cls.kind} exceeds bound {cls.bound}: {m.max()}"
            )
    if cls.kind == "B" and pi_c is not None:
        for i, m in enumerate(cls.members):
            z = np.einsum("sa,sa->s", m, pi_c.probs)
            worst = float(np.max(np.abs(z - 1.0)))
            if worst > atol:
                raise ValidationError(
                    f"member {i} of kind B breaks per-state normalization by {worst}"
                )
    return cls


def optimal_density_ratio(mdp: TabularMDP, d_c: SADistribution,
                          d_data: SADistribution) -> np.ndarray:
    """The weight w* whose product with d_data equals the resolvent image of
    the value-weighted covering distribution.

    Raises UnrealizableError wherever the image puts mass the dataset
    distribution cannot carry.  Pairs where both sides vanish get weight 1.
    """
    qstar, pistar = optimal_q(mdp)
    S, A = mdp.n_states, mdp.n_actions
    M = sa_transition_matrix(mdp, pistar)
    target = (d_c.weights * qstar.values).ravel()
    nu = np.linalg.solve(np.eye(S * A) - mdp.gamma * M, target)
    nu = nu.reshape(S, A)
    dd = d_data.weights
    uncovered = (nu > 1e-12) & (dd == 0.0)
    if uncovered.any():
        s, a = np.unravel_index(int(np.argmax(uncovered)), nu.shape)
        raise UnrealizableError(
            f"dataset distribution has no mass at (s={s}, a={a}) but the "
            f"optimal flow needs {nu[s, a]} there"
        )
    w = np.ones((S, A))
    pos = dd > 0.0
    w[pos] = nu[pos] / dd[pos]
    if w.min() < 0.0:
        w = np.clip(w, 0.0, None)  # tiny negative solve noise on null pairs
    return w


def optimal_policy_ratio(pi_star: Policy, pi_c: Policy) -> np.ndarray:
    """The ratio beta* with beta* * pi_c = pi_star elementwise."""
    num, den = pi_star.probs, pi_c.probs
    uncovered = (num > 1e-12) & (den == 0.0)
    if uncovered.any():
        s, a = np.unravel_index(int(np.argmax(uncovered)), num.shape)
        raise UnrealizableError(
            f"covering policy puts no mass on (s={s}, a={a}) required by the target"
        )
    beta = np.ones_like(num)
    pos = den > 0.0
    beta[pos] = num[pos] / den[pos]
    return beta


def _smoothed_noise(rng, shape) -> np.ndarray:
    g = rng.standard_normal(shape)
    # soften per-state variation so distractors look like plausible tables
    return 0.5 * g + 0.5 * g.mean(axis=1, keepdims=True)


def _normalize_rows(member: np.ndarray, pi_c: Policy) -> np.ndarray:
    z = np.einsum("sa,sa->s", member, pi_c.probs)
    out = member.copy()
    for s in range(member.shape[0]):
        if z[s] > 0.0:
            out[s] = member[s] / z[s]
        else:
            out[s] = 1.0  # neutral reweighting, normalized by construction
    return out


def build_realizable_classes(mdp: TabularMDP, d_c: SADistribution,
                             d_data: SADistribution, pi_c: Policy,
                             n_distractors: int, seed: int,
                             noise_scale: float = 0.25):
    """Build the (Q, W, B) classes around their realized elements.

    Member 0 of each class is the realized element; the remaining members are
    clipped noisy copies.  Deterministic in (mdp, inputs, seed).  Returns the
    three classes in that order.
    """
    rng = np.random.default_rng(seed)
    qstar, pistar = optimal_q(mdp)
    v_max = mdp.v_max

    q_members = [qstar.values]
    for _ in range(n_distractors):
        noise = noise_scale * v_max * _smoothed_noise(rng, qstar.values.shape)
        q_members.append(np.clip(qstar.values + noise, 0.0, v_max))
    q_class = FiniteFunctionClass(q_members, "Q", v_max)

    w_star = optimal_density_ratio(mdp, d_c, d_data)
    w_members = [w_star]
    w_span = max(1.0, float(w_star.max()))
    for _ in range(n_distractors):
        noise = noise_scale * w_span * _smoothed_noise(rng, w_star.shape)
        w_members.append(np.clip(w_star + noise, 0.0, None))
    w_class = FiniteFunctionClass(w_members, "W", max(float(m.max()) for m in w_members))

    beta_star = optimal_policy_ratio(pistar, pi_c)
    b_members = [beta_star]
    for _ in range(n_distractors):
        noise = noise_scale * _smoothed_noise(rng, beta_star.shape)
        raw = np.clip(beta_star + noise, 0.0, None)
        b_members.append(_normalize_rows(raw, pi_c))
    b_class = FiniteFunctionClass(b_members, "B", max(float(m.max()) for m in b_members))

    return q_class, w_class, b_class


def audit_realizability(mdp: TabularMDP, q_class: FiniteFunctionClass,
                        w_class: FiniteFunctionClass, b_class: FiniteFunctionClass,
                        d_c: SADistribution, d_data: SADistribution, pi_c: Policy,
                        atol: float = 1e-9):
    """Re-derive the three realized-element identities and check membership.

    Raises ValidationError if any identity fails; meant to run after class
    construction or deserialization so experiments never start from silently
    broken classes.
    """
    validate_function_class(q_class)
    validate_function_class(w_class)
    validate_function_class(b_class, pi_c=pi_c)
    qstar, pistar = optimal_q(mdp)
    if float(np.max(np.abs(q_class.members[0] - qstar.values))) > atol:
        raise ValidationError("Q class member 0 is not the optimal value table")
    S, A = mdp.n_states, mdp.n_actions
    M = sa_transition_matrix(mdp, pistar)
    target = (d_c.weights * qstar.values).ravel()
    nu = np.linalg.solve(np.eye(S * A) - mdp.gamma * M, target).reshape(S, A)
    gap = float(np.max(np.abs(w_class.members[0] * d_data.weights - nu)))
    if gap > atol:
        raise ValidationError(f"W class member 0 misses the resolvent identity by {gap}")
    gap = float(np.max(np.abs(b_class.members[0] * pi_c.probs - pistar.probs)))
    if gap > atol:
        raise ValidationError(f"B class member 0 misses the policy identity by {gap}")


# ---------------------------------------------------------------------------
# file format


def save_function_class(cls: FiniteFunctionClass, path):
    S, A = cls.members[0].shape
    lines = [
        "# voprlab function-class v1",
        f"kind {cls.kind}",
        f"bound {fmt_float(cls.bound)}",
        f"n_members {len(cls)}",
        f"n_states {S}",
        f"n_actions {A}",
    ]
    for i, m in enumerate(cls.members):
        lines.append(f"member {i}")
        lines.append(fmt_vector(m))
    Path(path).write_text("\n".join(lines) + "\n")


def load_function_class(path) -> FiniteFunctionClass:
    lines = [l for l in Path(path).read_text().splitlines() if l and not l.startswith("#")]
    fields = {}
    i = 0
    while i < len(lines) and not lines[i].startswith("member"):
        key, _, rest = lines[i].partition(" ")
        fields[key] = rest
        i += 1
    S, A = int(fields["n_states"]), int(fields["n_actions"])
    members = []
    while i < len(lines):
        assert lines[i].startswith("member")
        members.append(parse_vector(lines[i + 1]).reshape(S, A))
        i += 2
    if len(members) != int(fields["n_members"]):
        raise ValidationError(
            f"class file lists {fields['n_members']} members but contains {len(members)}"
        )
    return FiniteFunctionClass(members, fields["kind"], float(fields["bound"]))
