from pathlib import Path

import numpy as np
import pytest

import searchtag
from searchtag.corpus import load_embeddings, parse_conll
from searchtag.mdp import Sentence, TagInventory, initial_state, transition
from searchtag.mdp import Episode, EpisodeStep

DATA = Path(searchtag.__file__).parent / "data"


def random_sentence(rng, length, dim):
    return Sentence(tuple(f"w{k}" for k in range(length)), rng.normal(size=(length, dim)))


def random_episode(rng, sentence, num_tags, reward=None, actions=None):
    """Random tag path through ``sentence`` with random search policies."""
    state = initial_state(sentence)
    steps, tags = [], []
    actions = tuple(range(num_tags)) if actions is None else tuple(actions)
    while not state.terminal:
        pi = rng.dirichlet(np.ones(len(actions)))
        steps.append(EpisodeStep(state, actions, pi))
        a = actions[int(rng.integers(len(actions)))]
        tags.append(a)
        state = transition(state, a)
    r = float(rng.uniform()) if reward is None else reward
    return Episode(steps, r, tags)


@pytest.fixture(scope="session")
def toy_train():
    return parse_conll((DATA / "toy_train.conll").read_text())


@pytest.fixture(scope="session")
def toy_heldout():
    return parse_conll((DATA / "toy_heldout.conll").read_text())


@pytest.fixture(scope="session")
def toy_embeddings():
    return load_embeddings((DATA / "toy_embeddings.txt").read_text(), 16)


@pytest.fixture(scope="session")
def toy_inventory(toy_train):
    return TagInventory.from_sequences(s.gold for s in toy_train)
