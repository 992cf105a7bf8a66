"""Command line for training, tagging, scoring and inspecting models.

Data goes to files or stdout, logs go to stderr. Settings resolve in the
order built-in defaults, ``--profile``, ``--config`` file, explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from searchtag.checkpoint import load_checkpoint, save_checkpoint
from searchtag.corpus import (
    TaggedSentence,
    build_subset,
    evaluate,
    load_embeddings,
    parse_conll,
    serialize_conll,
    type_scores,
)
from searchtag.errors import SearchTagError
from searchtag.learner import (
    DEFAULT_ETA,
    DEFAULT_HIDDEN,
    DEFAULT_K,
    DEFAULT_LAMBDA,
    TrainConfig,
    greedy_tag,
    tag_sentence,
    train,
)
from searchtag.mdp import TagInventory

log = logging.getLogger("searchtag")

PROFILES = {
    "full": {"k": DEFAULT_K, "hidden": DEFAULT_HIDDEN, "eta": DEFAULT_ETA, "lam": DEFAULT_LAMBDA},
    "desk": {"k": 64, "hidden": 32},
}


@dataclass
class RunConfig:
    command: str = "train"
    train_file: Optional[str] = None
    test_file: Optional[str] = None
    predictions: Optional[str] = None
    embeddings: Optional[str] = None
    embedding_dim: Optional[int] = None
    checkpoint: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    out: Optional[str] = None
    report: Optional[str] = None
    figures: Optional[str] = None
    heldout_out: Optional[str] = None
    profile: Optional[str] = None
    k: int = DEFAULT_K
    eta: float = DEFAULT_ETA
    lam: float = DEFAULT_LAMBDA
    hidden: int = DEFAULT_HIDDEN
    epochs: int = 50
    seed: int = 0
    bio_constraint: bool = False
    clip: Optional[float] = None
    scaled_init: bool = False
    patience: Optional[int] = 5
    subset: Optional[int] = None
    train_size: Optional[int] = None
    max_len: int = 13
    decoder: str = "mcts"
    jobs: int = 1
    verbose: int = 0
    # settings given by profile, config file or flag rather than defaulted
    explicit: frozenset = field(default=frozenset(), repr=False, compare=False)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            k=self.k,
            eta=self.eta,
            lam=self.lam,
            hidden=self.hidden,
            epochs=self.epochs,
            seed=self.seed,
            bio=self.bio_constraint,
            clip=self.clip,
            scaled_init=self.scaled_init,
            patience=self.patience,
        )

    def to_json(self) -> str:
        data = asdict(self)
        del data["explicit"]
        return json.dumps(data, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)} - {"explicit"}
        unknown = set(data) - known
        if unknown:
            raise SearchTagError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


class CliError(SearchTagError):
    pass


def _existing(path: Optional[str], what: str) -> Path:
    if not path:
        raise CliError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _embedding_dim(path: Path, declared: Optional[int]) -> int:
    if declared:
        return declared
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                return len(parts) - 1
    raise CliError(f"embedding file {path} is empty")


def _load_table(cfg: RunConfig):
    path = _existing(cfg.embeddings, "embeddings")
    with open(path, encoding="utf-8") as fh:
        return load_embeddings(fh, _embedding_dim(path, cfg.embedding_dim))


def _read_conll(path: Path, columns: int = 3) -> list[TaggedSentence]:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh, columns=columns)


def _write_text(path: Optional[str], text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(out)


def cmd_train(cfg: RunConfig) -> int:
    train_path = _existing(cfg.train_file, "train-file")
    if not cfg.checkpoint:
        raise CliError("--checkpoint is required")
    table = _load_table(cfg)
    tcfg = cfg.train_config()
    sentences = _read_conll(train_path)
    if cfg.subset is not None:
        n_train = cfg.train_size if cfg.train_size is not None else round(0.9 * cfg.subset)
        sentences, heldout = build_subset(sentences, cfg.max_len, cfg.subset, n_train, cfg.seed)
        if cfg.heldout_out:
            _write_text(cfg.heldout_out, serialize_conll(heldout))
    if not sentences:
        raise CliError("no training sentences")
    inventory = TagInventory.from_sequences(s.gold for s in sentences)
    dataset = [(table.sentence(s.tokens), inventory.encode(s.gold)) for s in sentences]
    log.info("training on %d sentences, %d tags, embedding dim %d", len(dataset), len(inventory), table.dim)

    report_path = Path(cfg.report) if cfg.report else Path(cfg.checkpoint).with_suffix(".report.jsonl")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as report_fh:

        def on_epoch(rec):
            line = json.dumps(asdict(rec))
            report_fh.write(line + "\n")
            report_fh.flush()
            print(line, file=sys.stderr)

        result = train(dataset, tcfg, inventory, cfg.checkpoint_dir, on_epoch=on_epoch)

    meta = {
        "seed": cfg.seed,
        "tags": list(inventory.tags),
        "config": tcfg.to_dict(),
        "best_epoch": result.report.best_epoch,
    }
    save_checkpoint(cfg.checkpoint, result.best_params, meta)
    Path(cfg.checkpoint).with_suffix(".config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    if cfg.figures and result.report.epochs:
        from searchtag.plotting import plot_training

        plot_training(result.report.epochs, Path(cfg.figures) / "training.png")
    log.info("wrote %s", cfg.checkpoint)
    return 0


_worker: dict = {}


def _init_worker(params, tcfg, inventory, decoder):
    _worker.update(params=params, tcfg=tcfg, inventory=inventory, decoder=decoder)


def _decode(sentence, params, tcfg, inventory, decoder):
    if decoder == "greedy":
        return greedy_tag(sentence, params, inventory, tcfg.bio)
    return tag_sentence(sentence, params, tcfg, inventory)


def _decode_in_worker(sentence):
    return _decode(sentence, **_worker)


def cmd_tag(cfg: RunConfig) -> int:
    ckpt = _existing(cfg.checkpoint, "checkpoint")
    test_path = _existing(cfg.test_file, "test-file")
    if cfg.decoder not in ("mcts", "greedy"):
        raise CliError(f"unknown decoder {cfg.decoder!r}")
    params, meta = load_checkpoint(ckpt)
    table = _load_table(cfg)
    if table.dim != params.embedding_dim:
        raise CliError(f"embeddings have dimension {table.dim}, checkpoint expects {params.embedding_dim}")
    inventory = TagInventory(tuple(meta["tags"]))
    # search settings the user did not set come from the training run
    trained = meta.get("config", {})
    for key, name in (("k", "k"), ("lam", "lam"), ("bio_constraint", "bio")):
        if key not in cfg.explicit and name in trained:
            setattr(cfg, key, trained[name])
    tcfg = cfg.train_config()
    sentences = _read_conll(test_path)
    inputs = [table.sentence(s.tokens) for s in sentences]
    if cfg.jobs > 1 and len(inputs) > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(params, tcfg, inventory, cfg.decoder)) as pool:
            outputs = list(pool.map(_decode_in_worker, inputs))
    else:
        outputs = [_decode(s, params, tcfg, inventory, cfg.decoder) for s in inputs]
    for sent, tags in zip(sentences, outputs):
        sent.predicted = inventory.decode(tags)
    _write_text(cfg.out, serialize_conll(sentences, with_predictions=True))
    return 0


def _sniff_columns(path: Path) -> int:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                return len(parts)
    return 3


def format_metrics(result) -> str:
    pct = result.percentages()
    lines = [
        f"{'':10s}{'precision':>10s}{'recall':>10s}{'F1':>10s}{'accuracy':>10s}",
        f"{'overall':10s}{pct['precision']:>10.2f}{pct['recall']:>10.2f}{pct['f1']:>10.2f}{pct['accuracy']:>10.2f}",
    ]
    for kind, (p, r, f) in type_scores(result).items():
        lines.append(f"{kind:10s}{100 * p:>10.2f}{100 * r:>10.2f}{100 * f:>10.2f}{'':>10s}")
    record = {key: f"{value:.2f}" for key, value in pct.items()}
    record.update(tokens=result.tokens, gold_chunks=result.gold_chunks, predicted_chunks=result.predicted_chunks)
    lines.append(json.dumps(record))
    return "\n".join(lines) + "\n"


def cmd_eval(cfg: RunConfig) -> int:
    pred_path = _existing(cfg.predictions, "predictions")
    pred_cols = _sniff_columns(pred_path)
    predicted = _read_conll(pred_path, columns=4 if pred_cols == 4 else 3)
    pred_tags = [s.predicted if pred_cols == 4 else s.gold for s in predicted]
    if cfg.test_file:
        gold_sents = _read_conll(_existing(cfg.test_file, "test-file"))
    elif pred_cols == 4:
        gold_sents = predicted
    else:
        raise CliError("--test-file is required when predictions have three columns")
    if len(gold_sents) != len(predicted):
        raise CliError(f"{len(gold_sents)} gold sentences vs {len(predicted)} predicted")
    for k, (g, p) in enumerate(zip(gold_sents, predicted)):
        if g.tokens != p.tokens:
            raise CliError(f"sentence {k + 1}: tokens of gold and predictions differ")
    result = evaluate([s.gold for s in gold_sents], pred_tags)
    sys.stdout.write(format_metrics(result))
    if cfg.out:
        rows = ["type\tprecision\trecall\tf1\tgold\tpredicted\tcorrect"]
        for kind, (p, r, f) in type_scores(result).items():
            c = result.per_type[kind]
            rows.append(f"{kind}\t{100 * p:.2f}\t{100 * r:.2f}\t{100 * f:.2f}\t{c['gold']}\t{c['predicted']}\t{c['correct']}")
        pct = result.percentages()
        rows.append(
            f"overall\t{pct['precision']:.2f}\t{pct['recall']:.2f}\t{pct['f1']:.2f}\t"
            f"{result.gold_chunks}\t{result.predicted_chunks}\t{result.correct_chunks}"
        )
        _write_text(cfg.out, "\n".join(rows) + "\n")
    if cfg.figures:
        from searchtag.plotting import plot_eval

        plot_eval(result, Path(cfg.figures) / "chunk_scores.png")
    return 0


def cmd_inspect(cfg: RunConfig) -> int:
    params, meta = load_checkpoint(_existing(cfg.checkpoint, "checkpoint"))
    summary = {**meta, "parameters": {name: list(arr.shape) for name, arr in params.named_arrays()}}
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {"train": cmd_train, "tag": cmd_tag, "eval": cmd_eval, "inspect": cmd_inspect}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="searchtag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    arg = common.add_argument
    arg("--config", help="JSON run config; explicit flags override it")
    arg("--save-config", help="write the resolved config to this path and continue")
    arg("--profile", choices=sorted(PROFILES), help="preset: desk = k 64, hidden 32")
    arg("--train-file")
    arg("--test-file")
    arg("--embeddings")
    arg("--embedding-dim", type=int)
    arg("--checkpoint")
    arg("--out")
    arg("--k", type=int, help="searches per position")
    arg("--eta", type=float, help="AdaGrad learning rate")
    arg("--lambda", dest="lam", type=float, help="exploration weight")
    arg("--hidden", type=int, help="LSTM hidden units")
    arg("--epochs", type=int)
    arg("--seed", type=int)
    arg("--decoder", choices=("mcts", "greedy"))
    arg("--bio-constraint", action="store_const", const=True, default=None)
    arg("--jobs", type=int)
    arg("-v", "--verbose", action="count", default=None)

    p_train = sub.add_parser("train", parents=[common], help="train a model")
    p_train.add_argument("--checkpoint-dir", help="also save every epoch here")
    p_train.add_argument("--report", help="JSON-lines epoch log (default: next to checkpoint)")
    p_train.add_argument("--figures", help="directory for training curves")
    p_train.add_argument("--subset", type=int, help="sample this many sentences of length <= --max-len")
    p_train.add_argument("--train-size", type=int, help="how many of the subset to train on")
    p_train.add_argument("--max-len", type=int)
    p_train.add_argument("--heldout-out", help="write the rest of the subset here")
    p_train.add_argument("--clip", type=float, help="clip gradient global norm")
    p_train.add_argument("--scaled-init", action="store_const", const=True, default=None)
    p_train.add_argument("--patience", type=int, help="early-stop patience in epochs; 0 disables")

    sub.add_parser("tag", parents=[common], help="tag a CoNLL file")
    p_eval = sub.add_parser("eval", parents=[common], help="score predictions")
    p_eval.add_argument("--predictions", help="3- or 4-column CoNLL predictions")
    p_eval.add_argument("--figures", help="directory for the per-type score chart")
    sub.add_parser("inspect", parents=[common], help="describe a checkpoint")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    explicit = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "save_config", "command")}
    profile = explicit.get("profile")
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        base.pop("command", None)
        profile = profile or base.get("profile")
    given = set()
    if profile:
        for key, value in PROFILES[profile].items():
            setattr(cfg, key, value)
        given.update(PROFILES[profile])
    for key, value in {**base, **explicit}.items():
        if key == "explicit" or not hasattr(cfg, key):
            raise CliError(f"unknown setting {key!r}")
        setattr(cfg, key, value)
        given.add(key)
    if cfg.patience == 0:
        cfg.patience = None
    cfg.explicit = frozenset(given)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        logging.basicConfig(
            level=logging.DEBUG if cfg.verbose > 1 else logging.INFO if cfg.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        if args.save_config:
            Path(args.save_config).write_text(cfg.to_json() + "\n", encoding="utf-8")
        return COMMANDS[cfg.command](cfg)
    except (SearchTagError, OSError, json.JSONDecodeError) as exc:
        print(f"searchtag {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
