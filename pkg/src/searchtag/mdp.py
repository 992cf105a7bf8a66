"""The left-to-right tagging MDP.

A state at position ``t`` (1-based) holds the words ``x_1..x_t`` and the
tags already assigned to ``x_1..x_{t-1}``. After the last word is tagged the
state becomes terminal (``t = M + 1``) and keeps the full word sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from searchtag.errors import ContractViolation, InputError


@dataclass(eq=False)
class Sentence:
    tokens: tuple[str, ...]
    embeddings: np.ndarray  # (M, L)

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if not self.tokens:
            raise InputError("empty sentence")
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.tokens):
            raise InputError(
                f"{len(self.tokens)} tokens but embeddings of shape {self.embeddings.shape}"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class TagInventory:
    tags: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tags = tuple(self.tags)
        object.__setattr__(self, "tags", tags)
        if not tags:
            raise InputError("tag inventory is empty")
        if len(set(tags)) != len(tags):
            raise InputError("duplicate tags in inventory")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tags)})

    @classmethod
    def from_sequences(cls, tag_sequences: Iterable[Sequence[str]]) -> "TagInventory":
        """Tags in order of first occurrence."""
        seen: dict[str, None] = {}
        for seq in tag_sequences:
            for tag in seq:
                seen.setdefault(tag, None)
        return cls(tuple(seen))

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self._index

    def index(self, tag: str) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise InputError(f"unknown tag {tag!r}") from None

    def encode(self, tags: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tags]

    def decode(self, indices: Sequence[int]) -> list[str]:
        return [self.tags[i] for i in indices]


@dataclass(frozen=True)
class State:
    sentence: Sentence
    t: int
    prefix: tuple[int, ...] = ()

    @property
    def terminal(self) -> bool:
        return self.t == len(self.sentence) + 1

    @property
    def word_count(self) -> int:
        return min(self.t, len(self.sentence))

    @property
    def word_prefix(self) -> np.ndarray:
        return self.sentence.embeddings[: self.word_count]


@dataclass(frozen=True)
class EpisodeStep:
    state: State
    actions: tuple[int, ...]
    pi: np.ndarray


@dataclass
class Episode:
    steps: list[EpisodeStep]
    reward: float
    predicted: list[int]


def initial_state(sentence: Sentence) -> State:
    if len(sentence) == 0:
        raise InputError("empty sentence")
    return State(sentence, 1, ())


def _bio_allowed(tag: str, prev: str | None) -> bool:
    if not tag.startswith("I-"):
        return True
    if prev is None:
        return False
    return prev[:2] in ("B-", "I-") and prev[2:] == tag[2:]


def actions(state: State, inventory: TagInventory | None = None, bio: bool = False) -> tuple[int, ...]:
    """Tag indices available at ``state``.

    Without ``bio`` the whole inventory is offered. With ``bio`` an ``I-X``
    tag is only offered right after ``B-X`` or ``I-X``.
    """
    if state.terminal:
        raise ContractViolation("terminal state has no actions")
    if inventory is None:
        raise ContractViolation("an inventory is needed to enumerate actions")
    if not bio:
        return tuple(range(len(inventory)))
    prev = inventory.tags[state.prefix[-1]] if state.prefix else None
    return tuple(i for i, tag in enumerate(inventory.tags) if _bio_allowed(tag, prev))


class ActionSpace:
    """Binds an inventory and the BIO switch into a one-argument ``actions`` callable."""

    def __init__(self, inventory: TagInventory, bio: bool = False):
        self.inventory = inventory
        self.bio = bio
        self._full = tuple(range(len(inventory)))
        self._bio_cache: dict[int | None, tuple[int, ...]] = {}

    def __call__(self, state: State) -> tuple[int, ...]:
        if state.terminal:
            raise ContractViolation("terminal state has no actions")
        if not self.bio:
            return self._full
        last = state.prefix[-1] if state.prefix else None
        cached = self._bio_cache.get(last)
        if cached is None:
            cached = self._bio_cache[last] = actions(state, self.inventory, bio=True)
        return cached


def transition(state: State, action: int, num_tags: int | None = None) -> State:
    if state.terminal:
        raise ContractViolation("cannot move from a terminal state")
    if action < 0 or (num_tags is not None and action >= num_tags):
        raise InputError(f"invalid action {action}")
    return State(state.sentence, state.t + 1, state.prefix + (int(action),))


def accuracy(gold: Sequence, predicted: Sequence) -> float:
    """Fraction of positions where the two tag sequences agree."""
    if len(gold) != len(predicted):
        raise InputError(f"length mismatch: {len(gold)} gold vs {len(predicted)} predicted")
    if not gold:
        raise InputError("cannot score empty sequences")
    return sum(g == p for g, p in zip(gold, predicted)) / len(gold)
