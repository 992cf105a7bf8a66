"""CoNLL chunking files, text embeddings, subset sampling and chunk metrics."""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from searchtag.errors import InputError, ParseError
from searchtag.mdp import Sentence, TagInventory


@dataclass(frozen=True)
class RawToken:
    surface: str
    pos: str
    chunk: str


@dataclass
class TaggedSentence:
    tokens: list[str]
    pos: list[str]
    gold: list[str]
    predicted: Optional[list[str]] = None

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def raw_tokens(self) -> list[RawToken]:
        return [RawToken(w, p, c) for w, p, c in zip(self.tokens, self.pos, self.gold)]


def _lines(source) -> Iterable[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_conll(source: TextIO | str, columns: int = 3) -> list[TaggedSentence]:
    """Read ``word POS chunk`` lines; sentences are separated by blank lines.

    With ``columns=4`` a fourth column is read as the predicted chunk tag.
    Runs of blank lines count as one separator, and trailing blanks are ignored.
    """
    if columns not in (3, 4):
        raise ValueError("columns must be 3 or 4")
    sentences: list[TaggedSentence] = []
    rows: list[list[str]] = []

    def flush():
        if rows:
            cols = list(zip(*rows))
            sentences.append(
                TaggedSentence(
                    tokens=list(cols[0]),
                    pos=list(cols[1]),
                    gold=list(cols[2]),
                    predicted=list(cols[3]) if columns == 4 else None,
                )
            )
            rows.clear()

    for lineno, line in enumerate(_lines(source), start=1):
        fields = line.split()
        if not fields:
            flush()
            continue
        if len(fields) != columns:
            raise ParseError(f"expected {columns} columns, found {len(fields)}", lineno)
        rows.append(fields)
    flush()
    return sentences


def serialize_conll(sentences: Sequence[TaggedSentence], with_predictions: bool = False) -> str:
    """Inverse of :func:`parse_conll`: blank line after every sentence."""
    out = []
    for sent in sentences:
        if with_predictions and sent.predicted is None:
            raise InputError("sentence has no predictions to write")
        for k, word in enumerate(sent.tokens):
            cols = [word, sent.pos[k], sent.gold[k]]
            if with_predictions:
                cols.append(sent.predicted[k])
            out.append(" ".join(cols))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


@dataclass
class EmbeddingTable:
    """Word vectors looked up case-insensitively; unknown words map to zeros."""

    vectors: dict[str, np.ndarray]
    dim: int
    oov: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.oov is None:
            self.oov = np.zeros(self.dim)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, word: str) -> np.ndarray:
        return self.vectors.get(word.lower(), self.oov)

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return np.stack([self.lookup(w) for w in tokens])

    def sentence(self, tokens: Sequence[str]) -> Sentence:
        return Sentence(tuple(tokens), self.embed(tokens))


def load_embeddings(source: TextIO | str, dim: int) -> EmbeddingTable:
    """Parse ``word v1 ... v_dim`` lines. The first spelling of a word wins."""
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(_lines(source), start=1):
        parts = line.rstrip("\n").split(" ")
        if len(parts) == 1 and not parts[0].strip():
            continue
        word, values = parts[0], [p for p in parts[1:] if p]
        if len(values) != dim:
            raise ParseError(f"expected {dim} values for {word!r}, found {len(values)}", lineno)
        try:
            vec = np.array([float(v) for v in values])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        vectors.setdefault(word.lower(), vec)
    return EmbeddingTable(vectors, dim)


def build_subset(
    sentences: Sequence[TaggedSentence],
    max_len: int = 13,
    n: int = 1000,
    train: int = 900,
    seed: int = 0,
):
    """Keep sentences of at most ``max_len`` tokens, sample ``n``, split ``train``/rest."""
    if not 0 <= train <= n:
        raise InputError("train size must lie between 0 and the subset size")
    pool = [s for s in sentences if len(s) <= max_len]
    if len(pool) < n:
        raise InputError(f"only {len(pool)} sentences of length <= {max_len}, need {n}")
    rng = np.random.default_rng(seed)
    picked = rng.permutation(len(pool))[:n]
    chosen = [pool[i] for i in picked]
    return chosen[:train], chosen[train:]


def check_coverage(inventory: TagInventory, sentences: Iterable[TaggedSentence]) -> None:
    missing = sorted({t for s in sentences for t in s.gold if t not in inventory})
    if missing:
        raise InputError(f"tags missing from the training inventory: {', '.join(missing)}")


def _split_tag(tag: str) -> tuple[str, str]:
    if tag == "O" or "-" not in tag:
        return tag, ""
    prefix, _, kind = tag.partition("-")
    return prefix, kind


def _chunk_end(prev_tag, tag, prev_type, kind) -> bool:
    if prev_tag in ("E", "S"):
        return True
    if prev_tag in ("B", "I") and tag in ("B", "S", "O"):
        return True
    return prev_tag not in ("O", ".") and prev_type != kind


def _chunk_start(prev_tag, tag, prev_type, kind) -> bool:
    if tag in ("B", "S"):
        return True
    if prev_tag in ("E", "S", "O") and tag in ("E", "I"):
        return True
    return tag not in ("O", ".") and prev_type != kind


def extract_chunks(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Chunks as ``(type, first, last)`` with conlleval boundary rules.

    A stray ``I-X`` that does not continue an ``X`` chunk opens a new one.
    """
    chunks = set()
    prev_tag, prev_type = "O", ""
    start = None
    for k, tag in enumerate(list(tags) + ["O"]):
        cur_tag, kind = _split_tag(tag)
        if start is not None and _chunk_end(prev_tag, cur_tag, prev_type, kind):
            chunks.add((prev_type, start, k - 1))
            start = None
        if _chunk_start(prev_tag, cur_tag, prev_type, kind):
            start = k
        prev_tag, prev_type = cur_tag, kind
    return chunks


@dataclass
class EvalResult:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tokens: int
    correct_tokens: int
    gold_chunks: int
    predicted_chunks: int
    correct_chunks: int
    per_type: dict[str, dict[str, int]]

    def percentages(self) -> dict[str, float]:
        return {
            "precision": round(100 * self.precision, 2),
            "recall": round(100 * self.recall, 2),
            "f1": round(100 * self.f1, 2),
            "accuracy": round(100 * self.accuracy, 2),
        }


def _prf(correct: int, found_gold: int, found_pred: int):
    p = correct / found_pred if found_pred else 0.0
    r = correct / found_gold if found_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def evaluate(gold: Sequence[Sequence[str]], predicted: Sequence[Sequence[str]]) -> EvalResult:
    """Token accuracy and exact-match chunk precision, recall and F1."""
    if len(gold) != len(predicted):
        raise InputError(f"{len(gold)} gold sentences vs {len(predicted)} predicted")
    tokens = correct_tokens = 0
    n_gold = n_pred = n_correct = 0
    per_type: dict[str, Counter] = {}
    for k, (g, p) in enumerate(zip(gold, predicted)):
        if len(g) != len(p):
            raise InputError(f"sentence {k}: {len(g)} gold tags vs {len(p)} predicted")
        tokens += len(g)
        correct_tokens += sum(a == b for a, b in zip(g, p))
        gc, pc = extract_chunks(g), extract_chunks(p)
        hit = gc & pc
        n_gold += len(gc)
        n_pred += len(pc)
        n_correct += len(hit)
        for label, chunks in (("gold", gc), ("predicted", pc), ("correct", hit)):
            for kind, _, _ in chunks:
                per_type.setdefault(kind, Counter())[label] += 1
    precision, recall, f1 = _prf(n_correct, n_gold, n_pred)
    return EvalResult(
        accuracy=correct_tokens / tokens if tokens else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        tokens=tokens,
        correct_tokens=correct_tokens,
        gold_chunks=n_gold,
        predicted_chunks=n_pred,
        correct_chunks=n_correct,
        per_type={
            kind: {key: c[key] for key in ("gold", "predicted", "correct")}
            for kind, c in sorted(per_type.items())
        },
    )


def type_scores(result: EvalResult) -> dict[str, tuple[float, float, float]]:
    """Per chunk type ``(precision, recall, f1)``."""
    return {
        kind: _prf(c["correct"], c["gold"], c["predicted"])
        for kind, c in result.per_type.items()
    }
