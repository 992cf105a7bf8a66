"""Policy/value guided Monte Carlo tree search over tagging states.

Leaves are scored by the value function instead of rollouts, and every
action of a leaf is expanded at once with its prior taken from the policy.
Edge statistics live in per-node numpy arrays; :class:`SearchEdge` objects
are views built on demand for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from searchtag.errors import ConfigurationError, ContractViolation
from searchtag.mdp import State, transition

ValueFn = Callable[[State], float]
PolicyFn = Callable[[State, Sequence[int]], np.ndarray]
ActionsFn = Callable[[State], Sequence[int]]


@dataclass
class SearchEdge:
    action: int
    prior: float
    q: float
    n: int
    child: Optional["SearchNode"]


class SearchNode:
    __slots__ = ("state", "actions", "P", "Q", "N", "children", "evaluations")

    def __init__(self, state: State):
        self.state = state
        self.actions: tuple[int, ...] = ()
        self.P = self.Q = self.N = None
        self.children: list[Optional[SearchNode]] = []
        self.evaluations = 0

    @property
    def terminal(self) -> bool:
        return self.state.terminal

    @property
    def expanded(self) -> bool:
        return self.P is not None

    @property
    def edges(self) -> list[SearchEdge]:
        if not self.expanded:
            return []
        return [
            SearchEdge(a, float(p), float(q), int(n), child)
            for a, p, q, n, child in zip(self.actions, self.P, self.Q, self.N, self.children)
        ]

    def child(self, k: int) -> "SearchNode":
        node = self.children[k]
        if node is None:
            node = self.children[k] = SearchNode(transition(self.state, self.actions[k]))
        return node


@dataclass
class SearchPolicy:
    actions: tuple[int, ...]
    probs: np.ndarray

    def best(self) -> int:
        """Highest-probability action, lowest index on ties."""
        return self.actions[int(np.argmax(self.probs))]

    def as_dict(self) -> dict[int, float]:
        return {a: float(p) for a, p in zip(self.actions, self.probs)}


def select_child(node: SearchNode, lam: float) -> int:
    """Index of the edge maximizing ``Q + lam * P * sqrt(sum N) / (1 + N)``.

    Ties go to the larger prior, then to the earlier edge.
    """
    if not node.expanded or node.terminal:
        raise ContractViolation("selection needs an expanded, non-terminal node")
    scores = node.Q + lam * node.P * np.sqrt(node.N.sum()) / (1.0 + node.N)
    top = np.flatnonzero(scores == scores.max())
    if top.size == 1:
        return int(top[0])
    priors = node.P[top]
    return int(top[np.flatnonzero(priors == priors.max())[0]])


def expand_and_evaluate(leaf: SearchNode, value_fn: ValueFn, policy_fn: PolicyFn, actions_fn: ActionsFn) -> float:
    """Score ``leaf`` with the value function; expand it unless terminal.

    Terminal leaves may be reached many times and are scored on each visit.
    """
    if leaf.expanded:
        raise ContractViolation("leaf is already expanded")
    v = float(value_fn(leaf.state))
    leaf.evaluations += 1
    if not leaf.terminal:
        acts = tuple(actions_fn(leaf.state))
        priors = np.asarray(policy_fn(leaf.state, acts), dtype=np.float64)
        if priors.shape != (len(acts),):
            raise ContractViolation(f"policy returned {priors.shape} for {len(acts)} actions")
        leaf.actions = acts
        leaf.P = priors.copy()
        leaf.Q = np.zeros(len(acts))
        leaf.N = np.zeros(len(acts), dtype=np.int64)
        leaf.children = [None] * len(acts)
    return v


def backup(path: Sequence[tuple[SearchNode, int]], v: float) -> None:
    """Fold ``v`` into the running mean and count of every traversed edge."""
    if not np.isfinite(v):
        raise ContractViolation(f"non-finite backup value {v}")
    for node, k in path:
        n = node.N[k]
        node.Q[k] = (node.Q[k] * n + v) / (n + 1)
        node.N[k] = n + 1


def search_policy(root: SearchNode) -> SearchPolicy:
    """Visit-count distribution over the root's actions."""
    if not root.expanded:
        raise ContractViolation("root was never expanded")
    total = root.N.sum()
    if total < 1:
        raise ContractViolation("root edges have no visits")
    return SearchPolicy(root.actions, root.N / total)


def simulate(root: SearchNode, value_fn: ValueFn, policy_fn: PolicyFn, actions_fn: ActionsFn, lam: float) -> None:
    """One select, evaluate/expand, backup pass."""
    node = root
    path: list[tuple[SearchNode, int]] = []
    # terminal nodes are never expanded, so this always stops on a leaf
    while node.expanded:
        k = select_child(node, lam)
        path.append((node, k))
        node = node.child(k)
    v = expand_and_evaluate(node, value_fn, policy_fn, actions_fn)
    backup(path, v)


def run_search(
    root: SearchNode,
    value_fn: ValueFn,
    policy_fn: PolicyFn,
    actions_fn: ActionsFn,
    k: int,
    lam: float,
) -> SearchPolicy:
    """Run ``k`` simulations from ``root`` (fresh or reused) and read off the policy."""
    if root.terminal:
        raise ContractViolation("cannot search from a terminal state")
    if k < 2:
        raise ConfigurationError("search count must be at least 2")
    if lam <= 0:
        raise ConfigurationError("exploration weight must be positive")
    for _ in range(k):
        simulate(root, value_fn, policy_fn, actions_fn, lam)
    return search_policy(root)


def tree_search(
    root: State,
    value_fn: ValueFn,
    policy_fn: PolicyFn,
    k: int,
    lam: float,
    actions_fn: ActionsFn,
    return_tree: bool = False,
):
    """Search a fresh tree rooted at ``root``.

    Returns the search policy, or ``(policy, root_node)`` with ``return_tree``.
    """
    node = SearchNode(root)
    pi = run_search(node, value_fn, policy_fn, actions_fn, k, lam)
    return (pi, node) if return_tree else pi


def dump_tree(root: SearchNode, max_depth: int | None = None) -> str:
    """One line per visited edge: depth, action, prior, mean value, visits."""
    lines = []

    def walk(node: SearchNode, depth: int):
        if not node.expanded or (max_depth is not None and depth >= max_depth):
            return
        for k, a in enumerate(node.actions):
            if node.N[k] == 0:
                continue
            lines.append(
                f"{depth}\t{a}\t{node.P[k]:.6f}\t{node.Q[k]:.6f}\t{int(node.N[k])}"
            )
            if node.children[k] is not None:
                walk(node.children[k], depth + 1)

    walk(root, 0)
    return "\n".join(lines)
