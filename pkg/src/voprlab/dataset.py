"""Offline transition datasets: i.i.d. sampling, statistics, and storage.

Tuples (s, a, r, s') are drawn with s ~ mu_data, a ~ pi_b(.|s), s' ~ P(.|s, a)
and the deterministic reward r = R(s, a).  Sampling is reproducible for a
given (mdp, mu_data, pi_b, seed, n): uniforms come from per-block Philox
streams keyed by (seed, block), so the draw order never depends on how the
work is chunked.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .mdp import Policy, TabularMDP, mdp_digest
from .occupancy import SADistribution, StateDistribution

__all__ = [
    "DatasetError",
    "Dataset",
    "BLOCK",
    "sample_dataset",
    "empirical_state_action_dist",
    "transition_counts",
    "check_dataset",
    "save_dataset",
    "load_dataset",
]

BLOCK = 65536  # tuples per RNG block


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    meta: dict

    def __post_init__(self):
        for name in ("states", "actions", "next_states"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        r = np.asarray(self.rewards, dtype=np.float64)
        r.setflags(write=False)
        object.__setattr__(self, "rewards", r)

    def __len__(self) -> int:
        return self.states.shape[0]


def _block_uniforms(seed: int, n: int) -> np.ndarray:
    chunks = []
    for block in range(0, (n + BLOCK - 1) // BLOCK):
        take = min(BLOCK, n - block * BLOCK)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), block])))
        chunks.append(rng.random((take, 3)))
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, 3))


def sample_dataset(mdp: TabularMDP, mu_data: StateDistribution, pi_b: Policy,
                   n: int, seed: int) -> Dataset:
    if n <= 0:
        raise DatasetError(f"dataset size must be positive, got {n}")
    u = _block_uniforms(seed, n)
    s, a, sp = kernels.sample_tuples(
        kernels.row_cumsum(mu_data.weights),
        kernels.row_cumsum(pi_b.probs),
        kernels.row_cumsum(mdp.transition),
        u,
    )
    meta = {
        "mdp_hash": mdp_digest(mdp),
        "mu_data": mu_data.weights.tolist(),
        "pi_b": pi_b.probs.tolist(),
        "seed": int(seed),
        "n": int(n),
    }
    return Dataset(s, a, mdp.reward[s, a], sp, meta)


def empirical_state_action_dist(ds: Dataset, n_states: int, n_actions: int) -> SADistribution:
    """Visitation frequencies of (s, a) pairs in the dataset."""
    if len(ds) == 0:
        raise DatasetError("empty dataset")
    flat = ds.states * n_actions + ds.actions
    counts = np.bincount(flat, minlength=n_states * n_actions)
    return SADistribution((counts / len(ds)).reshape(n_states, n_actions))


def transition_counts(ds: Dataset, n_states: int, n_actions: int) -> np.ndarray:
    """Integer count tensor C[s, a, s'] summarizing the dataset."""
    flat = (ds.states * n_actions + ds.actions) * n_states + ds.next_states
    counts = np.bincount(flat, minlength=n_states * n_actions * n_states)
    return counts.reshape(n_states, n_actions, n_states)


def check_dataset(ds: Dataset, mdp: TabularMDP):
    """Consistency against the generating model: rewards match R(s, a)
    exactly and every observed transition has positive probability."""
    if len(ds) == 0:
        raise DatasetError("empty dataset")
    if ds.states.min() < 0 or ds.states.max() >= mdp.n_states:
        raise DatasetError("state index out of range")
    if ds.actions.min() < 0 or ds.actions.max() >= mdp.n_actions:
        raise DatasetError("action index out of range")
    expected = mdp.reward[ds.states, ds.actions]
    if not np.array_equal(expected, ds.rewards):
        i = int(np.argmax(expected != ds.rewards))
        raise DatasetError(
            f"reward mismatch at tuple {i}: stored {ds.rewards[i]}, "
            f"model gives {expected[i]}"
        )
    probs = mdp.transition[ds.states, ds.actions, ds.next_states]
    if (probs <= 0.0).any():
        i = int(np.argmax(probs <= 0.0))
        raise DatasetError(
            f"tuple {i} transition ({ds.states[i]}, {ds.actions[i]}) -> "
            f"{ds.next_states[i]} has zero probability"
        )


def save_dataset(ds: Dataset, path):
    """JSON-lines: one meta header object, then one object per tuple.

    json round-trips float64 exactly (repr-based), so save/load is bit-exact.
    """
    with open(path, "w") as fh:
        fh.write(json.dumps({"meta": ds.meta}) + "\n")
        for s, a, r, sp in zip(ds.states, ds.actions, ds.rewards, ds.next_states):
            fh.write(json.dumps({"s": int(s), "a": int(a), "r": float(r), "sp": int(sp)}) + "\n")


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetError(f"dataset file {path} is empty")
    head = json.loads(lines[0])
    if "meta" not in head:
        raise DatasetError("dataset file missing meta header line")
    s, a, r, sp = [], [], [], []
    for line in lines[1:]:
        rec = json.loads(line)
        s.append(rec["s"])
        a.append(rec["a"])
        r.append(rec["r"])
        sp.append(rec["sp"])
    return Dataset(np.array(s, dtype=np.int64), np.array(a, dtype=np.int64),
                   np.array(r), np.array(sp, dtype=np.int64), head["meta"])
