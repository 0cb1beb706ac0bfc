import numpy as np
import pytest

from voprlab.harness import build_counterexample, random_mdp
from voprlab.mdp import Policy
from voprlab.occupancy import StateDistribution


@pytest.fixture(scope="session")
def fig_mdp():
    """The 4-state tie-breaking counterexample at gamma 0.9."""
    return build_counterexample(0.9)


@pytest.fixture
def small_mdp():
    return random_mdp(4, 2, seed=0)


@pytest.fixture
def medium_mdp():
    return random_mdp(5, 3, seed=7)


def uniform_policy(mdp) -> Policy:
    return Policy(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))


def uniform_start(mdp) -> StateDistribution:
    return StateDistribution(np.full(mdp.n_states, 1.0 / mdp.n_states))


def random_policy(mdp, seed) -> Policy:
    rng = np.random.default_rng(seed)
    return Policy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
