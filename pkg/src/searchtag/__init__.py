"""Sequence tagging as a left-to-right decision process decoded with tree search."""

from searchtag.corpus import EmbeddingTable, EvalResult, TaggedSentence, evaluate, load_embeddings, parse_conll
from searchtag.learner import TrainConfig, greedy_tag, run_episode, tag_sentence, train
from searchtag.mdp import Episode, Sentence, State, TagInventory, accuracy, initial_state, transition
from searchtag.neural import ModelParams, init_params

__version__ = "0.1.0"
