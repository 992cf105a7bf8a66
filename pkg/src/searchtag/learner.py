"""Search-based decoding and reinforcement training of the tagger."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from searchtag.checkpoint import save_checkpoint
from searchtag.errors import ConfigurationError, InputError, NumericError
from searchtag.mcts import SearchNode, run_search
from searchtag.mdp import (
    ActionSpace,
    Episode,
    EpisodeStep,
    Sentence,
    TagInventory,
    accuracy,
    initial_state,
    transition,
)
from searchtag.neural import (
    AdaGradState,
    ModelParams,
    Scorer,
    adagrad_step,
    clip_gradients,
    init_params,
    loss_and_gradients,
)

log = logging.getLogger(__name__)

DEFAULT_K = 4000
DEFAULT_ETA = 0.001
DEFAULT_LAMBDA = 0.25
DEFAULT_HIDDEN = 200


@dataclass
class TrainConfig:
    k: int = DEFAULT_K
    eta: float = DEFAULT_ETA
    lam: float = DEFAULT_LAMBDA
    hidden: int = DEFAULT_HIDDEN
    epochs: int = 10
    seed: int = 0
    bio: bool = False
    clip: Optional[float] = None
    scaled_init: bool = False
    patience: Optional[int] = 5
    min_delta: float = 1e-4
    reuse_tree: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ConfigurationError("search count k must be at least 2")
        if self.eta <= 0:
            raise ConfigurationError("eta must be positive")
        if self.lam <= 0:
            raise ConfigurationError("lambda must be positive")
        if self.hidden < 1:
            raise ConfigurationError("hidden size must be at least 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs cannot be negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    mean_reward: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_reward: Optional[float] = None
    stopped_early: bool = False


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    report: TrainReport


def search_decode(
    sentence: Sentence,
    value_fn,
    policy_fn,
    actions_fn,
    k: int,
    lam: float,
    reuse_tree: bool = False,
) -> tuple[list[int], list[EpisodeStep]]:
    """Tag left to right, picking the most visited action after each search."""
    state = initial_state(sentence)
    node = SearchNode(state)
    predicted: list[int] = []
    steps: list[EpisodeStep] = []
    while not state.terminal:
        if not reuse_tree:
            node = SearchNode(state)
        pi = run_search(node, value_fn, policy_fn, actions_fn, k, lam)
        a = pi.best()
        steps.append(EpisodeStep(state, pi.actions, pi.probs))
        predicted.append(a)
        if reuse_tree:
            node = node.child(pi.actions.index(a))
        state = transition(state, a)
    return predicted, steps


def _action_space(params: ModelParams, inventory: TagInventory | None, bio: bool):
    if inventory is None:
        inventory = TagInventory(tuple(str(i) for i in range(params.num_tags)))
    if len(inventory) != params.num_tags:
        raise ConfigurationError(
            f"inventory has {len(inventory)} tags, parameters expect {params.num_tags}"
        )
    return ActionSpace(inventory, bio)


def _check_sentence(sentence: Sentence, params: ModelParams):
    if sentence.embedding_dim != params.embedding_dim:
        raise ConfigurationError(
            f"embeddings have dimension {sentence.embedding_dim}, model expects {params.embedding_dim}"
        )


def run_episode(
    sentence: Sentence,
    gold: Sequence[int],
    params: ModelParams,
    cfg: TrainConfig,
    inventory: TagInventory | None = None,
) -> Episode:
    """Search-decode one training sentence and score it against ``gold``."""
    if len(gold) != len(sentence):
        raise InputError(f"{len(gold)} gold tags for {len(sentence)} tokens")
    _check_sentence(sentence, params)
    scorer = Scorer(params)
    predicted, steps = search_decode(
        sentence,
        scorer.value,
        scorer.policy,
        _action_space(params, inventory, cfg.bio),
        cfg.k,
        cfg.lam,
        cfg.reuse_tree,
    )
    return Episode(steps, accuracy(gold, predicted), predicted)


def tag_sentence(
    sentence: Sentence,
    params: ModelParams,
    cfg: TrainConfig,
    inventory: TagInventory | None = None,
) -> list[int]:
    """Inference: search-decode without labels."""
    _check_sentence(sentence, params)
    scorer = Scorer(params)
    predicted, _ = search_decode(
        sentence,
        scorer.value,
        scorer.policy,
        _action_space(params, inventory, cfg.bio),
        cfg.k,
        cfg.lam,
        cfg.reuse_tree,
    )
    return predicted


def greedy_tag(
    sentence: Sentence,
    params: ModelParams,
    inventory: TagInventory | None = None,
    bio: bool = False,
) -> list[int]:
    """Take the raw policy's argmax at every position, no search."""
    _check_sentence(sentence, params)
    scorer = Scorer(params)
    space = _action_space(params, inventory, bio)
    state = initial_state(sentence)
    predicted = []
    while not state.terminal:
        acts = space(state)
        a = acts[int(np.argmax(scorer.policy(state, acts)))]
        predicted.append(a)
        state = transition(state, a)
    return predicted


def train(
    dataset: Sequence[tuple[Sentence, Sequence[int]]],
    cfg: TrainConfig,
    inventory: TagInventory | None = None,
    checkpoint_dir=None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    params: ModelParams | None = None,
) -> TrainResult:
    """Per-sentence AdaGrad on the value/policy loss of search episodes.

    Stops after ``cfg.epochs`` epochs, or earlier when the mean training
    reward has not improved by ``cfg.min_delta`` for ``cfg.patience`` epochs.
    """
    if not dataset:
        raise InputError("training set is empty")
    emb_dim = dataset[0][0].embedding_dim
    if params is None:
        num_tags = len(inventory) if inventory is not None else 1 + max(max(g) for _, g in dataset)
        params = init_params(cfg.seed, emb_dim, cfg.hidden, num_tags, scaled=cfg.scaled_init)
    else:
        params = params.copy()
    opt = AdaGradState.fresh(params)
    order_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    report = TrainReport()
    best = params.copy()
    stale = 0
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    meta = {"seed": cfg.seed, "config": cfg.to_dict()}
    if inventory is not None:
        meta["tags"] = list(inventory.tags)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        losses, rewards = [], []
        for idx in order_rng.permutation(len(dataset)):
            sentence, gold = dataset[idx]
            episode = run_episode(sentence, gold, params, cfg, inventory)
            value, grads = loss_and_gradients(episode, params)
            if not np.isfinite(value):
                if ckpt_dir is not None:
                    save_checkpoint(ckpt_dir / "diverged.ckpt", params, meta)
                raise NumericError(f"non-finite loss at epoch {epoch}")
            if cfg.clip is not None:
                grads = clip_gradients(grads, cfg.clip)
            adagrad_step(params, grads, opt, cfg.eta)
            losses.append(value)
            rewards.append(episode.reward)
        record = EpochRecord(epoch, float(np.mean(losses)), float(np.mean(rewards)), time.perf_counter() - start)
        report.epochs.append(record)
        log.info("epoch %d loss %.4f reward %.4f (%.1fs)", epoch, record.mean_loss, record.mean_reward, record.seconds)
        if on_epoch is not None:
            on_epoch(record)
        if ckpt_dir is not None:
            path = save_checkpoint(ckpt_dir / f"epoch-{epoch:03d}.ckpt", params, {**meta, "epoch": epoch})
            report.checkpoints.append(str(path))
        # the retained snapshot is the end-of-epoch params of the best-reward epoch
        if report.best_reward is None or record.mean_reward > report.best_reward + cfg.min_delta:
            report.best_reward = record.mean_reward
            report.best_epoch = epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                report.stopped_early = True
                break
    if ckpt_dir is not None and report.best_epoch is not None:
        path = save_checkpoint(ckpt_dir / "best.ckpt", best, {**meta, "epoch": report.best_epoch})
        report.checkpoints.append(str(path))
    return TrainResult(params, best, report)
