"""Command-line surface: data generation, training, evaluation, prediction,
cross-validation, and attention inspection.

Exit codes: 0 success, 2 usage error, 1 runtime error. Flags override config
file entries, which override documented defaults; every command accepts
``--config FILE`` (line-oriented ``key = value`` with ``#`` comments) and
``--print-config`` to emit the fully resolved configuration and stop. All
stdout output is machine-parsable; commentary goes to stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    CorpusFormatError,
    SyntheticGrammar,
    load_corpus_file,
    save_corpus_file,
    train_dev_split,
    kfold_split,
    Utterance,
)
from .evaluation import UnsupportedOperationError, dump_attention, evaluate_model, slot_f1, intent_error
from .models import ConfigError, ModelConfig
from .tensor import DomainError
from .trainer import Checkpoint, TrainConfig, TrainingError, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep it catchable
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    parse: object
    default: object
    help: str
    choices: tuple | None = None
    required: bool = False


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    return str(value)


_MODEL_OPTS = [
    Opt("arch", str, "birnn", "model family", choices=("encdec", "birnn")),
    Opt("aligned", _parse_bool, True, "feed the aligned encoder state to each decoder step (encdec only)"),
    Opt("attention", _parse_bool, True, "enable attention context vectors"),
    Opt("task", str, "joint", "training task", choices=("slot", "intent", "joint")),
    Opt("hidden", int, 128, "LSTM units per direction"),
    Opt("embedding_dim", int, 128, "word embedding size"),
    Opt("label_embedding_dim", int, 128, "previous-label embedding size"),
    Opt("att_dim", int, 128, "attention scorer width"),
    Opt("dropout_keep", float, 0.5, "keep probability on non-recurrent connections"),
    Opt("precision", str, "f64", "floating point width", choices=("f32", "f64")),
]

_TRAIN_OPTS = [
    Opt("epochs", int, 30, "training epochs"),
    Opt("batch_size", int, 16, "utterances per optimizer step"),
    Opt("lr", float, 0.001, "Adam learning rate"),
    Opt("beta1", float, 0.9, "Adam first-moment decay"),
    Opt("beta2", float, 0.999, "Adam second-moment decay"),
    Opt("adam_eps", float, 1e-8, "Adam epsilon"),
    Opt("max_grad_norm", float, 5.0, "global gradient clipping norm"),
    Opt("seed", int, 0, "RNG seed (init, shuffling, dropout)"),
    Opt("eval_every", int, 1, "dev evaluation period in epochs"),
    Opt("patience", int, 10, "dev evaluations without improvement before stopping"),
    Opt("w_slot", float, 1.0, "slot loss weight"),
    Opt("w_intent", float, 1.0, "intent loss weight"),
    Opt("dev_fraction", float, 0.1, "dev share carved from a single-file corpus"),
]

COMMANDS: dict[str, tuple[list[Opt], str]] = {
    "gen-data": (
        [
            Opt("out", str, None, "output directory", required=True),
            Opt("n_train", int, 2000, "training utterances"),
            Opt("n_dev", int, 0, "dev utterances (0: n_train // 10)"),
            Opt("n_test", int, 500, "test utterances"),
            Opt("seed", int, 0, "generation seed"),
            Opt("grammar", str, None, "grammar JSON (default: built-in travel grammar)"),
        ],
        "generate a synthetic corpus (train.txt, dev.txt, test.txt)",
    ),
    "train": (
        [
            Opt("data", str, None, "corpus file or directory", required=True),
            Opt("out", str, None, "checkpoint output path", required=True),
            Opt("metrics", str, None, "metrics log path (default: <out>.metrics.tsv)"),
        ]
        + _MODEL_OPTS
        + _TRAIN_OPTS,
        "train a model and write the best checkpoint",
    ),
    "eval": (
        [
            Opt("ckpt", str, None, "checkpoint path", required=True),
            Opt("data", str, None, "corpus file", required=True),
            Opt("beam", int, 1, "beam width (1 = greedy)"),
        ],
        "score a checkpoint on a corpus",
    ),
    "predict": (
        [
            Opt("ckpt", str, None, "checkpoint path", required=True),
            Opt("beam", int, 1, "beam width (1 = greedy)"),
        ],
        "label token blocks from stdin in corpus format",
    ),
    "xval": (
        [
            Opt("data", str, None, "corpus file", required=True),
            Opt("k", int, 10, "number of folds"),
        ]
        + _MODEL_OPTS
        + _TRAIN_OPTS,
        "k-fold cross validation with a fresh model per fold",
    ),
    "inspect-attention": (
        [
            Opt("ckpt", str, None, "checkpoint path", required=True),
            Opt("data", str, None, "corpus file", required=True),
            Opt("index", int, 0, "utterance index in the corpus file"),
            Opt("out", str, None, "output CSV path", required=True),
            Opt("beam", int, 1, "beam width (1 = greedy)"),
        ],
        "write decoded attention weights for one utterance as CSV",
    ),
}


def _read_config_file(path: str, opts: dict[str, Opt]) -> dict:
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in opts:
            raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
        try:
            values[key] = opts[key].parse(raw)
        except ValueError as exc:
            raise UsageError(f"{path}:{line_no}: bad value for {key}: {exc}") from None
    return values


def _resolve(command: str, ns: argparse.Namespace) -> dict:
    opts = {o.name: o for o in COMMANDS[command][0]}
    resolved = {name: o.default for name, o in opts.items()}
    if getattr(ns, "config", None):
        resolved.update(_read_config_file(ns.config, opts))
    for name, opt in opts.items():
        raw = getattr(ns, name, None)
        if raw is not None:
            try:
                resolved[name] = opt.parse(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for --{name.replace('_', '-')}: {exc}") from None
    for name, opt in opts.items():
        if opt.choices and resolved[name] not in opt.choices:
            raise UsageError(f"--{name.replace('_', '-')} must be one of {opt.choices}, got {resolved[name]!r}")
        if opt.required and resolved[name] is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
    return resolved


def _build_parser() -> _Parser:
    parser = _Parser(prog="slotintent", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (opts, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, add_help=True)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        for opt in opts:
            p.add_argument(
                "--" + opt.name.replace("_", "-"),
                dest=opt.name,
                default=None,
                metavar="V",
                help=f"{opt.help} (default: {_fmt_value(opt.default)})",
            )
    return parser


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        architecture=cfg["arch"],
        aligned_inputs=cfg["aligned"],
        attention=cfg["attention"],
        task=cfg["task"],
        hidden=cfg["hidden"],
        embedding_dim=cfg["embedding_dim"],
        label_embedding_dim=cfg["label_embedding_dim"],
        att_dim=cfg["att_dim"],
        dropout_keep=cfg["dropout_keep"],
        precision=cfg["precision"],
    ).validate()


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"],
        max_grad_norm=cfg["max_grad_norm"],
        lr=cfg["lr"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        adam_eps=cfg["adam_eps"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        eval_every=cfg["eval_every"],
        patience=cfg["patience"],
        w_slot=cfg["w_slot"],
        w_intent=cfg["w_intent"],
    ).validate()


def _load_train_dev(cfg: dict) -> tuple[list, list]:
    path = Path(cfg["data"])
    if path.is_dir():
        train_utts = load_corpus_file(path / "train.txt")
        dev_path = path / "dev.txt"
        if dev_path.exists():
            return train_utts, load_corpus_file(dev_path)
        return train_dev_split(train_utts, cfg["dev_fraction"], cfg["seed"])
    utts = load_corpus_file(path)
    return train_dev_split(utts, cfg["dev_fraction"], cfg["seed"])


def _check_label_compat(ckpt: Checkpoint, utts, ckpt_path: str) -> None:
    """Reject a corpus whose annotation shares nothing with the checkpoint's
    vocabularies; warn about partial coverage (rare unseen test labels)."""
    model_cfg = ckpt.model_config
    if model_cfg.has_slot_head:
        gold = {s for u in utts for s in u.slots if s != "O"}
        known = {s for s in gold if s in ckpt.slot_vocab}
        if gold and not known:
            raise ValueError(
                f"vocabulary mismatch: checkpoint {ckpt_path} shares no slot labels with the corpus"
            )
        if gold - known:
            print(
                f"warning: {len(gold - known)} slot label(s) absent from the checkpoint vocabulary",
                file=sys.stderr,
            )
    if model_cfg.has_intent_head:
        gold = {u.intent for u in utts}
        known = {i for i in gold if i in ckpt.intent_vocab}
        if not known:
            raise ValueError(
                f"vocabulary mismatch: checkpoint {ckpt_path} shares no intents with the corpus"
            )
        if gold - known:
            print(
                f"warning: {len(gold - known)} intent(s) absent from the checkpoint vocabulary",
                file=sys.stderr,
            )


def cmd_gen_data(cfg: dict) -> int:
    from .data import generate_synthetic

    if cfg["n_train"] < 1:
        raise UsageError("--n-train must be >= 1")
    if cfg["n_test"] < 1:
        raise UsageError("--n-test must be >= 1")
    n_dev = cfg["n_dev"] if cfg["n_dev"] > 0 else max(1, cfg["n_train"] // 10)
    grammar = (
        SyntheticGrammar.from_json(Path(cfg["grammar"]).read_text(encoding="utf-8"))
        if cfg["grammar"]
        else SyntheticGrammar.default()
    )
    total = generate_synthetic(grammar, cfg["n_train"] + n_dev + cfg["n_test"], cfg["seed"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {
        "train.txt": total[: cfg["n_train"]],
        "dev.txt": total[cfg["n_train"] : cfg["n_train"] + n_dev],
        "test.txt": total[cfg["n_train"] + n_dev :],
    }
    for name, utts in splits.items():
        save_corpus_file(out_dir / name, utts)
        print(f"wrote={out_dir / name} n={len(utts)}")
    return 0


def cmd_train(cfg: dict) -> int:
    model_cfg = _model_config(cfg)
    tcfg = _train_config(cfg)
    train_utts, dev_utts = _load_train_dev(cfg)
    metrics_path = Path(cfg["metrics"]) if cfg["metrics"] else Path(str(cfg["out"]) + ".metrics.tsv")
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []

    def log(line: str) -> None:
        lines.append(line)
        print(line)

    result = train(model_cfg, train_utts, dev_utts, tcfg, log=log)
    metrics_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    result.checkpoint.save(cfg["out"])
    print(f"best_epoch={result.best_epoch}")
    print(f"checkpoint={cfg['out']}")
    return 0


def cmd_eval(cfg: dict) -> int:
    if cfg["beam"] < 1:
        raise UsageError("--beam must be >= 1")
    ckpt = Checkpoint.load(cfg["ckpt"])
    utts = load_corpus_file(cfg["data"])
    _check_label_compat(ckpt, utts, cfg["ckpt"])
    model = ckpt.build_model()
    report = evaluate_model(
        model, utts, ckpt.token_vocab, ckpt.slot_vocab, ckpt.intent_vocab, beam_width=cfg["beam"]
    )
    print(report.to_kv())
    print(report.to_table(), file=sys.stderr)
    return 0


def cmd_predict(cfg: dict) -> int:
    if cfg["beam"] < 1:
        raise UsageError("--beam must be >= 1")
    ckpt = Checkpoint.load(cfg["ckpt"])
    model = ckpt.build_model()
    text = sys.stdin.read().strip("\n")
    blocks = [segment.split("\n") for segment in text.split("\n\n")] if text else []
    first = True
    for raw in blocks:
        tokens = [line.strip() for line in raw if line.strip()]
        if not tokens:
            print("warning: skipping empty input block", file=sys.stderr)
            continue
        ids = [ckpt.token_vocab.encode(t) for t in tokens]
        result = model.decode(ids, beam_width=cfg["beam"])
        intent = (
            ckpt.intent_vocab.from_content_index(result.intent_id)
            if result.intent_id is not None
            else "n/a"
        )
        slots = (
            [ckpt.slot_vocab.from_content_index(s) for s in result.slot_ids]
            if model.config.has_slot_head
            else ["O"] * len(tokens)
        )
        if not first:
            print()
        first = False
        print(f"intent: {intent}")
        for tok, slot in zip(tokens, slots):
            print(f"{tok}\t{slot}")
    return 0


def cmd_xval(cfg: dict) -> int:
    model_cfg = _model_config(cfg)
    tcfg = _train_config(cfg)
    utts = load_corpus_file(cfg["data"])
    folds = kfold_split(utts, k=cfg["k"], seed=cfg["seed"])
    seen: set[int] = set()
    f1s, ierrs = [], []
    for fold_no, (fold_train, fold_test) in enumerate(folds, start=1):
        for u in fold_test:
            key = id(u)
            if key in seen:
                raise RuntimeError("fold test sets overlap")
            seen.add(key)
        tr, dev = train_dev_split(fold_train, cfg["dev_fraction"], cfg["seed"])
        result = train(model_cfg, tr, dev, tcfg)
        model = result.checkpoint.build_model()
        report = evaluate_model(
            model,
            fold_test,
            result.checkpoint.token_vocab,
            result.checkpoint.slot_vocab,
            result.checkpoint.intent_vocab,
        )
        f1 = report.slot.f1 if report.slot is not None else None
        ierr = report.intent_err
        if f1 is not None:
            f1s.append(f1)
        if ierr is not None:
            ierrs.append(ierr)
        f1_s = "n/a" if f1 is None else f"{f1:.2f}"
        ierr_s = "n/a" if ierr is None else f"{ierr:.2f}"
        print(f"fold={fold_no} slot_f1={f1_s} intent_error={ierr_s}")
    if len(seen) != len(utts):
        raise RuntimeError("fold test sets do not cover the corpus")
    mean_f1 = "n/a" if not f1s else f"{sum(f1s) / len(f1s):.2f}"
    mean_ierr = "n/a" if not ierrs else f"{sum(ierrs) / len(ierrs):.2f}"
    print(f"mean slot_f1={mean_f1} intent_error={mean_ierr}")
    return 0


def cmd_inspect_attention(cfg: dict) -> int:
    if cfg["beam"] < 1:
        raise UsageError("--beam must be >= 1")
    ckpt = Checkpoint.load(cfg["ckpt"])
    utts = load_corpus_file(cfg["data"])
    if not 0 <= cfg["index"] < len(utts):
        raise UsageError(f"--index {cfg['index']} out of range for corpus of {len(utts)} utterances")
    model = ckpt.build_model()
    out_path = Path(cfg["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as f:
        dump_attention(
            model,
            utts[cfg["index"]],
            ckpt.token_vocab,
            ckpt.slot_vocab,
            ckpt.intent_vocab,
            f,
            beam_width=cfg["beam"],
        )
    print(f"wrote={out_path}")
    return 0


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "xval": cmd_xval,
    "inspect-attention": cmd_inspect_attention,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a command is required (see --help)")
        cfg = _resolve(ns.command, ns)
        if ns.print_config:
            for key in sorted(cfg):
                print(f"{key} = {_fmt_value(cfg[key])}")
            return 0
        return _HANDLERS[ns.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (
        CorpusFormatError,
        TrainingError,
        UnsupportedOperationError,
        DomainError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
