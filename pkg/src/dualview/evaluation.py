"""Summary and sentiment metrics, batch prediction, and run reports.

ROUGE here is plain token matching (no stemming, no stopword removal) with
the symmetric F1 = 2PR / (P + R). Corpus scores are means of per-example
scores. Macro F1 is the harmonic mean of macro precision and macro recall,
which is not the same number as the mean of per-class F1 scores.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError
from .classifiers import disagreement_rate, source_view_predict, summary_view_predict
from .config import Ablations, HyperParams
from .data import Dataset, make_batch
from .decoder import beam_search, strip_eos, teacher_forced
from .encoder import encode
from .model import ModelParams
from .text import EOS_ID, Example, Vocabulary


class CompatibilityError(ValueError):
    """Checkpoint and dataset were built with different vocabularies."""


# ---------------------------------------------------------------- ROUGE


@dataclass(frozen=True)
class RougeScore:
    recall: float
    precision: float
    f1: float

    @classmethod
    def from_counts(cls, match: int, n_ref: int, n_cand: int) -> "RougeScore":
        r = match / n_ref if n_ref else 0.0
        p = match / n_cand if n_cand else 0.0
        return cls(r, p, 2 * p * r / (p + r) if p + r > 0 else 0.0)


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> RougeScore:
    """Clipped n-gram overlap between two token lists."""
    if n not in (1, 2):
        raise ContractError(f"ROUGE-N is defined here for n in {{1, 2}}, got {n}")
    cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
    match = sum((cand & ref).values())
    return RougeScore.from_counts(match, sum(ref.values()), sum(cand.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        diag = 0
        for j, y in enumerate(b, start=1):
            up = row[j]
            row[j] = diag + 1 if x == y else max(row[j], row[j - 1])
            diag = up
    return row[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(reference), len(candidate))


def rouge_all(candidate: Sequence[str], reference: Sequence[str]) -> dict[str, RougeScore]:
    return {"rouge1": rouge_n(candidate, reference, 1), "rouge2": rouge_n(candidate, reference, 2),
            "rougeL": rouge_l(candidate, reference)}


def corpus_rouge(pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> dict[str, dict[str, float]]:
    """Mean per-example ROUGE over (candidate, reference) pairs."""
    out = {}
    scores = [rouge_all(c, r) for c, r in pairs]
    for key in ("rouge1", "rouge2", "rougeL"):
        vals = [s[key] for s in scores]
        n = max(len(vals), 1)
        out[key] = {"r": sum(v.recall for v in vals) / n, "p": sum(v.precision for v in vals) / n,
                    "f1": sum(v.f1 for v in vals) / n}
    return out


# ---------------------------------------------------------------- classification


@dataclass
class ConfusionMatrix:
    """Counts with rows for gold classes and columns for predicted classes."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, gold: Sequence[int], pred: Sequence[int], num_classes: int) -> "ConfusionMatrix":
        """Build from 1-based labels."""
        if len(gold) != len(pred):
            raise ValueError(f"{len(gold)} gold labels but {len(pred)} predictions")
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        g = np.asarray(gold, dtype=np.int64) - 1
        p = np.asarray(pred, dtype=np.int64) - 1
        if g.size and (g.min() < 0 or p.min() < 0 or g.max() >= num_classes or p.max() >= num_classes):
            raise ValueError(f"labels must lie in 1..{num_classes}")
        np.add.at(counts, (g, p), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def per_class(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-class precision and recall, with 0/0 read as 0."""
        c = self.counts.astype(float)
        tp = np.diag(c)
        pred_tot, gold_tot = c.sum(axis=0), c.sum(axis=1)
        prec = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
        rec = np.divide(tp, gold_tot, out=np.zeros_like(tp), where=gold_tot > 0)
        return prec, rec

    def _require_nonempty(self) -> None:
        if self.total <= 0:
            raise ContractError("metrics need at least one evaluated example")


def macro_f1(cm: ConfusionMatrix) -> float:
    cm._require_nonempty()
    prec, rec = cm.per_class()
    p, r = float(prec.mean()), float(rec.mean())
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    cm._require_nonempty()
    return float(cm.per_class()[1].mean())


def classification_scores(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> dict:
    cm = ConfusionMatrix.from_labels(gold, pred, num_classes)
    return {"macro_f1": macro_f1(cm), "balanced_acc": balanced_accuracy(cm), "confusion": cm.counts.tolist()}


# ---------------------------------------------------------------- prediction


@dataclass
class Prediction:
    """Everything the report needs about one example. Labels are 1-based."""

    id: str
    generated_ids: list[int]
    generated_summary: list[str]
    log_prob: float
    reference: list[str]
    gold_label: int
    p_src: list[float]
    p_sum_tf: list[float]
    p_sum_free: list[float]
    source_label: int = 0
    summary_tf_label: int = 0
    summary_free_label: int = 0
    merged_label: int = 0
    merged_tf_label: int = 0

    def __post_init__(self):
        def top(p):
            return int(np.argmax(p)) + 1

        self.source_label = top(self.p_src)
        self.summary_tf_label = top(self.p_sum_tf)
        self.summary_free_label = top(self.p_sum_free)
        self.merged_label = top(np.add(self.p_src, self.p_sum_free))
        self.merged_tf_label = top(np.add(self.p_src, self.p_sum_tf))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        keep = {k: d[k] for k in ("id", "generated_ids", "generated_summary", "log_prob", "reference",
                                  "gold_label", "p_src", "p_sum_tf", "p_sum_free")}
        return cls(**keep)


@dataclass
class Model:
    params: ModelParams
    hp: HyperParams
    ablations: Ablations = Ablations()
    meta: dict = field(default_factory=dict)


_WORKER_MODEL: Optional[Model] = None


def _init_worker(model: Model) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _decode_one(args) -> tuple[list[int], float]:
    ex, width, max_depth = args
    return _beam_one(_WORKER_MODEL, ex, width, max_depth)


def _beam_one(model: Model, ex: Example, width: int, max_depth: int) -> tuple[list[int], float]:
    b = make_batch([ex])
    with ad.no_record():
        enc = encode(b.src, b.src_mask, model.params, model.hp.residual_mix,
                     residual=not model.ablations.no_residual)
        hyp = beam_search(enc, b.src_ext, b.n_oov, model.params, width, max_depth,
                          copy=not model.ablations.no_copy)
    return hyp.tokens, hyp.score


def decode_examples(model: Model, examples: Sequence[Example], beam_width: int = 5,
                    max_depth: Optional[int] = None, workers: int = 1) -> list[tuple[list[int], float]]:
    """Beam-search every example; results keep the input order for any ``workers``."""
    depth = model.hp.max_decode_depth if max_depth is None else max_depth
    jobs = [(ex, beam_width, depth) for ex in examples]
    if workers <= 1 or len(jobs) < 2:
        return [_beam_one(model, ex, beam_width, depth) for ex in examples]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(model,)) as pool:
        return list(pool.map(_decode_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _summary_probs(model: Model, examples: Sequence[Example], targets=None) -> tuple[np.ndarray, np.ndarray]:
    V = model.params.vocab_size
    b = make_batch(examples, targets, vocab_size=V)
    abl = model.ablations
    with ad.no_record():
        enc = encode(b.src, b.src_mask, model.params, model.hp.residual_mix, residual=not abl.no_residual)
        tf = teacher_forced(b.dec_in, b.tgt_ext, b.tgt_mask, enc, b.src_ext, model.params,
                            copy=not abl.no_copy, tgt=b.tgt)
        p_src = source_view_predict(enc.memory, enc.mask, model.params, maxpool=abl.maxpool_classifier)
        p_sum = summary_view_predict(tf.states, b.tgt_mask, model.params, maxpool=abl.maxpool_classifier)
    return p_src.values, p_sum.values


def predict_examples(model: Model, examples: Sequence[Example], vocab: Vocabulary, beam_width: int = 5,
                     max_depth: Optional[int] = None, workers: int = 1,
                     batch_size: Optional[int] = None) -> list[Prediction]:
    """Generate summaries and all classifier views for ``examples``.

    The summary view is scored twice: once reading decoder states driven by
    the gold summary, once reading states driven by the generated summary.
    """
    decoded = decode_examples(model, examples, beam_width, max_depth, workers)
    bs = batch_size or model.hp.batch_size
    out: list[Prediction] = []
    for start in range(0, len(examples), bs):
        chunk = list(examples[start:start + bs])
        gen = [decoded[start + i][0] or [EOS_ID] for i in range(len(chunk))]
        p_src, p_tf = _summary_probs(model, chunk)
        _, p_free = _summary_probs(model, chunk, gen)
        for i, ex in enumerate(chunk):
            tokens, score = decoded[start + i]
            words = vocab.decode(strip_eos(tokens), ex.oov_words)
            out.append(Prediction(
                id=ex.uid or str(start + i), generated_ids=list(tokens), generated_summary=words,
                log_prob=float(score), reference=vocab.decode(strip_eos(ex.tgt_ext_ids), ex.oov_words),
                gold_label=int(ex.label), p_src=p_src[i].tolist(), p_sum_tf=p_tf[i].tolist(),
                p_sum_free=p_free[i].tolist()))
    return out


# ---------------------------------------------------------------- reports

VIEWS = ("source", "summary_tf", "summary_free", "merged", "merged_tf")


def score_predictions(preds: Sequence[Prediction], num_classes: int,
                      teacher_forcing: Optional[bool] = None) -> dict:
    """Metrics from prediction records alone.

    ``teacher_forcing`` True keeps only the gold-driven summary view, False
    only the self-driven one, None keeps both.
    """
    if not preds:
        raise ContractError("no predictions to score")
    report: dict = {"n_examples": len(preds)}
    report.update(corpus_rouge([(p.generated_summary, p.reference) for p in preds]))
    gold = [p.gold_label for p in preds]
    views = {"source": [p.source_label for p in preds]}
    if teacher_forcing in (True, None):
        views["summary_tf"] = [p.summary_tf_label for p in preds]
        views["merged_tf"] = [p.merged_tf_label for p in preds]
    if teacher_forcing in (False, None):
        views["summary_free"] = [p.summary_free_label for p in preds]
        views["merged"] = [p.merged_label for p in preds]
    report["classification"] = {k: classification_scores(gold, v, num_classes) for k, v in views.items()}
    if "summary_tf" in views:
        report["disagreement_rate"] = disagreement_rate(views["source"], views["summary_tf"])
    if "summary_free" in views:
        report["disagreement_rate_free"] = disagreement_rate(views["source"], views["summary_free"])
    return report


def check_compatible(meta: dict, params: ModelParams, vocab: Vocabulary) -> None:
    from .trainer import vocab_digest

    if params.vocab_size != len(vocab):
        raise CompatibilityError(f"checkpoint vocabulary has {params.vocab_size} words, dataset has {len(vocab)}")
    digest = meta.get("vocab_digest")
    if digest is not None and digest != vocab_digest(vocab.itos):
        raise CompatibilityError("checkpoint and dataset vocabularies differ")


def load_for_eval(checkpoint) -> Model:
    from .trainer import load_model

    params, hp, ablations, meta = load_model(checkpoint)
    return Model(params, hp, ablations, meta)


def evaluate_run(checkpoint, dataset: Dataset, split: str = "test", teacher_forcing: Optional[bool] = None,
                 beam_width: int = 5, max_depth: Optional[int] = None, workers: int = 1,
                 predictions_path=None) -> dict:
    """Decode and classify one split and return the metrics report.

    ``checkpoint`` is a path or an already loaded :class:`Model`. When
    ``predictions_path`` is given the per-example records are written there
    as JSON lines, so the report can be recomputed from that file.
    """
    model = checkpoint if isinstance(checkpoint, Model) else load_for_eval(checkpoint)
    check_compatible(model.meta, model.params, dataset.vocab)
    examples = dataset.split(split)
    if not examples:
        raise ContractError(f"split {split!r} is empty")
    preds = predict_examples(model, examples, dataset.vocab, beam_width, max_depth, workers)
    if predictions_path is not None:
        write_predictions(preds, predictions_path)
    report = score_predictions(preds, model.hp.num_classes, teacher_forcing)
    report["split"] = split
    report["ablations"] = model.ablations.codes()
    report["beam_width"] = beam_width
    return report


def write_predictions(preds: Sequence[Prediction], path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def read_predictions(path) -> list[Prediction]:
    with open(Path(path), encoding="utf-8") as fh:
        return [Prediction.from_dict(json.loads(line)) for line in fh if line.strip()]


def format_report(report: dict) -> str:
    lines = [f"examples: {report.get('n_examples', 0)}"]
    for key in ("rouge1", "rouge2", "rougeL"):
        if key in report:
            s = report[key]
            lines.append(f"{key:<8} R {s['r']:.4f}  P {s['p']:.4f}  F1 {s['f1']:.4f}")
    for view, s in report.get("classification", {}).items():
        lines.append(f"{view:<13} macro-F1 {s['macro_f1']:.4f}  balanced-acc {s['balanced_acc']:.4f}")
    for key in ("disagreement_rate", "disagreement_rate_free"):
        if key in report:
            lines.append(f"{key}: {report[key]:.4f}")
    return "\n".join(lines)
