"""Source-view and summary-view sentiment classifiers and their losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor

LOG_FLOOR = 1e-12


@dataclass
class SentimentPrediction:
    dist: np.ndarray  # (B, K)

    @property
    def labels(self) -> np.ndarray:
        """1-based labels; argmax ties resolve to the lowest class."""
        return np.argmax(self.dist, axis=-1) + 1


def _attend_once(memory: Tensor, mask: np.ndarray, query: Tensor, W_h: Tensor, W_q: Tensor,
                 b: Tensor, v: Tensor) -> Tensor:
    """Additive attention of one query per row over ``memory``; returns the weighted sum."""
    q = query @ W_q + b
    if q.ndim == 1:
        feats = ad.tanh(memory @ W_h + q)
    else:
        feats = ad.tanh(memory @ W_h + q.reshape(q.shape[0], 1, q.shape[1]))
    a = ad.softmax(feats @ v, axis=-1, mask=mask)
    ctx = a.reshape(a.shape[0], 1, a.shape[1]) @ memory
    return ctx.reshape(ctx.shape[0], ctx.shape[2])


def glimpse_aggregate(memory: Tensor, mask: np.ndarray, params, prefix: str) -> Tensor:
    """Two attention passes: a learned query yields a glimpse, which re-attends the memory."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ContractError("classifier input has a row with no unmasked positions")
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    g = _attend_once(memory, mask, p("query"), p("glimpse.W_h"), p("glimpse.W_q"), p("glimpse.b"),
                     p("glimpse.v"))
    return _attend_once(memory, mask, g, p("attend.W_h"), p("attend.W_q"), p("attend.b"), p("attend.v"))


def maxpool_aggregate(memory: Tensor, mask: np.ndarray) -> Tensor:
    return ad.masked_max(memory, np.asarray(mask, dtype=bool)[..., None], axis=1)


def classify(e: Tensor, params, prefix: str, dropout: float = 0.0,
             rng: Optional[np.random.Generator] = None) -> Tensor:
    """Two-layer ReLU network with softmax output; dropout on the hidden layer when ``rng`` is given."""
    h = ad.relu(e @ params[f"{prefix}.ffn.W1"] + params[f"{prefix}.ffn.b1"])
    if rng is not None and dropout > 0:
        keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
        h = h * keep
    return ad.softmax(h @ params[f"{prefix}.ffn.W2"] + params[f"{prefix}.ffn.b2"], axis=-1)


def predict_view(memory: Tensor, mask: np.ndarray, params, prefix: str, maxpool: bool = False,
                 dropout: float = 0.0, rng: Optional[np.random.Generator] = None) -> Tensor:
    e = maxpool_aggregate(memory, mask) if maxpool else glimpse_aggregate(memory, mask, params, prefix)
    return classify(e, params, prefix, dropout, rng)


def source_view_predict(memory_bank: Tensor, mask: np.ndarray, params, **kw) -> Tensor:
    return predict_view(memory_bank, mask, params, "cls.src", **kw)


def summary_view_predict(states: Tensor, mask: np.ndarray, params, **kw) -> Tensor:
    if states.shape[1] == 0:
        raise ContractError("summary-view classifier needs at least one decoder state")
    return predict_view(states, mask, params, "cls.sum", **kw)


def classification_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Batch mean of -log P(gold); ``labels`` are 0-based."""
    picked = ad.take_last(probs, np.asarray(labels))
    return (-ad.safe_log(picked, LOG_FLOOR, "cls_log_floor")).mean()


def inconsistency_loss(p_src: Tensor, p_sum: Tensor) -> Tensor:
    """Batch mean of KL(p_src || p_sum); both sides receive gradients."""
    log_src = ad.safe_log(p_src, LOG_FLOOR, "kl_src_floor")
    log_sum = ad.safe_log(p_sum, LOG_FLOOR, "kl_denominator_floor")
    return (p_src * (log_src - log_sum)).sum(axis=-1).mean()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Plain KL(p || q) for arrays, with the same floor as the loss."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.sum(p * (np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR)))))


def merged_predict(p_src, p_sum) -> SentimentPrediction:
    return SentimentPrediction((np.asarray(p_src, dtype=float) + np.asarray(p_sum, dtype=float)) / 2.0)


def disagreement_rate(pred_src: Sequence[int], pred_sum: Sequence[int]) -> float:
    if len(pred_src) != len(pred_sum):
        raise ValueError(f"label lists differ in length: {len(pred_src)} vs {len(pred_sum)}")
    if not len(pred_src):
        return 0.0
    return float(np.mean(np.asarray(pred_src) != np.asarray(pred_sum)))
