"""Regenerate the bundled toy embedding file from the bundled fixture corpus.

Each word vector is a shared per-POS direction plus word-specific noise, so
words of the same syntactic class sit near each other as in real embeddings.
"""

import argparse
from pathlib import Path

import numpy as np

from searchtag.corpus import parse_conll

DATA = Path(__file__).resolve().parents[1] / "src" / "searchtag" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--seed", type=int, default=2000)
    ap.add_argument("--out", type=Path, default=DATA / "toy_embeddings.txt")
    args = ap.parse_args()

    pos_of = {}
    for name in ("toy_train.conll", "toy_heldout.conll"):
        for sent in parse_conll((DATA / name).read_text()):
            for w, p in zip(sent.tokens, sent.pos):
                pos_of.setdefault(w.lower(), p)
    rng = np.random.default_rng(args.seed)
    classes = {p: rng.normal(size=args.dim) for p in sorted(set(pos_of.values()))}
    lines = []
    for word in sorted(pos_of):
        vec = 0.6 * classes[pos_of[word]] + 0.4 * rng.normal(size=args.dim)
        lines.append(word + " " + " ".join(f"{v:.6f}" for v in vec))
    args.out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
