"""Command line entry point: ``dualview {synth,prep,train,eval,predict}``.

Settings resolve as command-line flag, then config file (a flat JSON
object), then built-in default. Errors end the process with a nonzero exit
status and one JSON line on stderr naming the error category.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .autodiff import ContractError, NonFiniteError
from .checkpoint import CheckpointError
from .config import Ablations, HyperParams, TrainConfig
from .data import DatasetFormatError, load_dataset, prepare_dataset, save_dataset
from .evaluation import CompatibilityError, Model, evaluate_run, format_report, load_for_eval, predict_examples
from .synth import SyntheticSpec, count_baseline, generate, recommended_vocab_cap, write_jsonl
from .text import DataFormatError, RawRecord, Vocabulary, format_stats, make_example, read_jsonl, tokenize_record
from .trainer import TrainingError, train

logger = logging.getLogger("dualview")

EXIT_CODES = {"usage": 2, "input": 3, "compatibility": 4, "training": 5, "internal": 1}

HP_FIELDS = {f.name for f in dataclasses.fields(HyperParams)}
TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"hp", "ablations"}


class UsageError(ValueError):
    pass


def _category(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    if isinstance(exc, CompatibilityError):
        return "compatibility"
    if isinstance(exc, (TrainingError, NonFiniteError)):
        return "training"
    if isinstance(exc, (DataFormatError, DatasetFormatError, CheckpointError, FileNotFoundError,
                        json.JSONDecodeError, ContractError, ValueError, OSError)):
        return "input"
    return "internal"


# ---------------------------------------------------------------- settings


def load_config_file(path: Optional[str]) -> dict[str, Any]:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict) or any(isinstance(v, dict) for v in cfg.values()):
        raise UsageError(f"config file {path} must hold one flat JSON object")
    return cfg


def resolve(args: argparse.Namespace, config: dict[str, Any], keys: Sequence[str]) -> dict[str, Any]:
    """Flag value if given, else config value, for each of ``keys``."""
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in config:
            out[key] = config[key]
    return out


def build_hparams(settings: dict[str, Any], base: Optional[HyperParams] = None) -> HyperParams:
    hp = base or HyperParams()
    changes = {k: v for k, v in settings.items() if k in HP_FIELDS}
    if "gammas" in changes:
        changes["gammas"] = tuple(changes["gammas"])
    if "gamma4" in settings:
        g = changes.get("gammas", hp.gammas)
        changes["gammas"] = (g[0], g[1], g[2], float(settings["gamma4"]))
    return hp.replace(**changes)


def _add_hp_flags(p: argparse.ArgumentParser, names: Sequence[str]) -> None:
    for name in names:
        default = getattr(HyperParams(), name)
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=type(default), default=None,
                       help=f"default {default}")


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    lo, hi = args.review_len
    spec = SyntheticSpec(n_examples=args.n_examples, num_classes=args.num_classes, n_filler=args.n_filler,
                         n_topics=args.n_topics, lexicon_size=args.lexicon_size, review_len=(lo, hi),
                         copy_rate=args.copy_rate, ambiguity=args.ambiguity, seed=args.seed)
    records = generate(spec)
    write_jsonl(records, args.out)
    print(json.dumps({"records": len(records), "recommended_vocab_cap": recommended_vocab_cap(spec),
                      "count_baseline_accuracy": count_baseline(records, spec)}))
    return 0


def cmd_prep(args) -> int:
    cfg = load_config_file(args.config)
    settings = resolve(args, cfg, sorted(HP_FIELDS) + ["seed", "valid_size", "test_size", "workers"])
    hp = build_hparams(settings)
    read_stats: dict = {}
    raw = list(read_jsonl(args.input, stats=read_stats))
    if not raw:
        raise DataFormatError(f"no readable records in {args.input}")
    ds, stats = prepare_dataset(raw, hp, seed=int(settings.get("seed", 0)),
                                valid_size=settings.get("valid_size"), test_size=settings.get("test_size"),
                                workers=int(settings.get("workers", 1)))
    stats["malformed_lines"] = read_stats.get("malformed", 0)
    save_dataset(ds, args.out)
    print(format_stats(stats))
    print(json.dumps({"rejected": stats["rejected"], "malformed_lines": stats["malformed_lines"],
                      "vocab_size": stats["vocab_size"]}, sort_keys=True))
    return 0


def train_config_from(args, cfg: dict[str, Any], num_classes: Optional[int]) -> TrainConfig:
    settings = resolve(args, cfg, sorted(HP_FIELDS) + sorted(TRAIN_FIELDS) + ["gamma4", "ablate"])
    if num_classes is not None and "num_classes" not in settings:
        settings["num_classes"] = num_classes
    hp = build_hparams(settings)
    ablations = Ablations.from_codes(str(settings.get("ablate", "")))
    extra = {k: settings[k] for k in TRAIN_FIELDS if k in settings}
    return TrainConfig(hp=hp, ablations=ablations, **extra)


def cmd_train(args) -> int:
    cfg = load_config_file(args.config)
    ds = load_dataset(args.dataset)
    num_classes = (ds.stats or {}).get("num_classes")
    config = train_config_from(args, cfg, num_classes)
    bad = [e.label for e in ds.train if not 1 <= e.label <= config.hp.num_classes]
    if bad:
        raise UsageError(f"labels {sorted(set(bad))} exceed num_classes={config.hp.num_classes}")
    result = train(ds, config, args.out, resume=args.resume)
    last = result.log[-1] if result.log else {}
    print(json.dumps({"steps": result.steps, "stopped_early": result.stopped_early,
                      "best_checkpoint": str(result.best_checkpoint), "last_checkpoint": str(result.last_checkpoint),
                      "final_valid": last.get("valid", {})}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    tf = {"on": True, "off": False, "both": None}[args.teacher_forcing]
    report = evaluate_run(args.checkpoint, ds, split=args.split, teacher_forcing=tf, beam_width=args.beam_width,
                          max_depth=args.max_depth, workers=args.workers, predictions_path=args.predictions)
    views = report["classification"]
    pick = {"source": "source", "summary": "summary_tf" if tf else "summary_free",
            "merged": "merged_tf" if tf else "merged"}[args.classifier]
    report["selected_classifier"] = {"name": args.classifier, **views[pick]}
    text = format_report(report)
    print(text)
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _read_reviews(path, field: str) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh):
            if not line.strip():
                continue
            obj = json.loads(line)
            text = obj.get(field)
            if not isinstance(text, str) or not text.strip():
                raise DataFormatError(f"line {n + 1}: missing review text in field {field!r}")
            out.append((str(obj.get("id", n)), text))
    return out


def cmd_predict(args) -> int:
    model: Model = load_for_eval(args.checkpoint)
    words = model.meta.get("vocab")
    if not words:
        raise CompatibilityError("checkpoint carries no vocabulary")
    vocab = Vocabulary(words)
    if len(vocab) != model.params.vocab_size:
        raise CompatibilityError("checkpoint vocabulary does not match its embedding table")
    reviews = _read_reviews(args.input, args.field)
    examples = []
    for uid, text in reviews:
        rec = tokenize_record(RawRecord(text, "placeholder .", 1))
        examples.append(make_example(rec, vocab, model.hp.max_src_len, model.hp.max_tgt_len, uid=uid))
    preds = predict_examples(model, examples, vocab, args.beam_width, args.max_depth, args.workers)
    with open(args.out, "w", encoding="utf-8") as fh:
        for p in preds:
            probs = {"source": p.p_src, "summary": p.p_sum_free,
                     "merged": list(np.add(p.p_src, p.p_sum_free) / 2.0)}[args.classifier]
            fh.write(json.dumps({"id": p.id, "generated_summary": " ".join(p.generated_summary),
                                 "log_prob": p.log_prob, "predicted_label": int(np.argmax(probs)) + 1},
                                sort_keys=True) + "\n")
    print(json.dumps({"predictions": len(preds), "out": args.out}))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualview", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic review corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-examples", type=int, default=200)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--n-filler", type=int, default=60)
    p.add_argument("--n-topics", type=int, default=8)
    p.add_argument("--lexicon-size", type=int, default=3)
    p.add_argument("--review-len", type=int, nargs=2, default=(16, 24), metavar=("MIN", "MAX"))
    p.add_argument("--copy-rate", type=float, default=0.3)
    p.add_argument("--ambiguity", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="build a dataset file from review JSON lines")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--valid-size", dest="valid_size", type=int)
    p.add_argument("--test-size", dest="test_size", type=int)
    p.add_argument("--workers", type=int)
    _add_hp_flags(p, ["num_classes", "vocab_cap", "max_src_len", "max_tgt_len"])
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="directory for checkpoints and the training log")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma4", type=float, help="inconsistency loss weight; 0 disables it")
    p.add_argument("--ablate", help="any of I, A, R, C, e.g. 'IC'")
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt when present")
    _add_hp_flags(p, ["emb_dim", "hidden", "attn_dim", "query_dim", "cls_hidden", "num_classes", "lr",
                      "batch_size", "dropout", "clip_norm", "residual_mix", "max_decode_depth"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--classifier", default="source", choices=("source", "summary", "merged"))
    p.add_argument("--teacher-forcing", default="both", choices=("on", "off", "both"))
    p.add_argument("--beam-width", type=int, default=5)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--predictions", help="write per-example records here")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; decoding is deterministic")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="summarize and label raw reviews")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--field", default="reviewText")
    p.add_argument("--classifier", default="source", choices=("source", "summary", "merged"))
    p.add_argument("--beam-width", type=int, default=5)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; decoding is deterministic")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit category
        category = _category(exc)
        print(json.dumps({"error": category, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        if category == "internal":
            logger.exception("unexpected failure")
        return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
