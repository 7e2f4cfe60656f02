"""Parameter layout and the joint forward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classifiers import (classification_loss, inconsistency_loss, source_view_predict,
                          summary_view_predict)
from .config import Ablations, HyperParams
from .data import Batch
from .decoder import generation_loss, teacher_forced
from .encoder import encode


def param_shapes(hp: HyperParams, vocab_size: int) -> dict[str, tuple[int, ...]]:
    """Every trainable array, in a fixed order that also fixes initialization."""
    d, half, de, da = hp.hidden, hp.hidden // 2, hp.emb_dim, hp.attn_dim
    shapes: dict[str, tuple[int, ...]] = {"embedding": (vocab_size, de)}

    def gru(prefix, p, q):
        shapes[f"{prefix}.W_x"] = (p, 3 * q)
        shapes[f"{prefix}.W_h"] = (q, 3 * q)
        shapes[f"{prefix}.b"] = (3 * q,)

    gru("enc.l1.fwd", de, half)
    gru("enc.l1.bwd", de, half)
    gru("enc.l2.fwd", d, half)
    gru("enc.l2.bwd", d, half)
    gru("dec.gru", de, d)
    shapes.update({
        "dec.attn.W_h": (d, da), "dec.attn.W_s": (d, da), "dec.attn.b": (da,), "dec.attn.v": (da,),
        "dec.out.W_proj": (2 * d, d), "dec.out.b_proj": (d,),
        "dec.out.W_vocab": (d, vocab_size), "dec.out.b_vocab": (vocab_size,),
        "dec.gen.v": (2 * d + de,), "dec.gen.b": (1,),
    })
    for view in ("cls.src", "cls.sum"):
        shapes.update({
            f"{view}.query": (hp.query_dim,),
            f"{view}.glimpse.W_h": (d, da), f"{view}.glimpse.W_q": (hp.query_dim, da),
            f"{view}.glimpse.b": (da,), f"{view}.glimpse.v": (da,),
            f"{view}.attend.W_h": (d, da), f"{view}.attend.W_q": (d, da),
            f"{view}.attend.b": (da,), f"{view}.attend.v": (da,),
            f"{view}.ffn.W1": (d, hp.cls_hidden), f"{view}.ffn.b1": (hp.cls_hidden,),
            f"{view}.ffn.W2": (hp.cls_hidden, hp.num_classes), f"{view}.ffn.b2": (hp.num_classes,),
        })
    return shapes


class ModelParams:
    """Named parameter tensors, iterated in layout order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)
        for name, t in self.tensors.items():
            t.name = name
            t.requires_grad = True

    @classmethod
    def init(cls, hp: HyperParams, vocab_size: int, seed: int, scale: float = 0.1) -> "ModelParams":
        """Uniform(-scale, scale) for every entry, drawn in layout order from ``seed``."""
        rng = np.random.default_rng(seed)
        return cls({name: Tensor(rng.uniform(-scale, scale, size=shape))
                    for name, shape in param_shapes(hp, vocab_size).items()})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.values.copy()) for k, v in self.tensors.items()})

    @property
    def vocab_size(self) -> int:
        return self.tensors["embedding"].shape[0]

    def num_parameters(self) -> int:
        return sum(t.values.size for t in self.tensors.values())


@dataclass
class ForwardOutputs:
    memory: Tensor       # (B, L, d)
    states: Tensor       # (B, T, d) teacher-forced decoder states
    gold_prob: Tensor    # (B, T)
    p_src: Tensor        # (B, K)
    p_sum: Tensor        # (B, K)
    loss_gen: Tensor
    loss_src: Tensor
    loss_sum: Tensor
    loss_inc: Tensor
    total: Tensor

    def components(self) -> dict[str, float]:
        return {"gen": self.loss_gen.item(), "src": self.loss_src.item(), "sum": self.loss_sum.item(),
                "inc": self.loss_inc.item(), "total": self.total.item()}


def multi_task_loss(l_gen, l_src, l_sum, l_inc, gammas) -> Tensor:
    if any(g < 0 for g in gammas):
        raise ValueError(f"loss weights must be nonnegative, got {gammas}")
    g1, g2, g3, g4 = gammas
    return l_gen * g1 + l_src * g2 + l_sum * g3 + l_inc * g4


def forward(params: ModelParams, batch: Batch, hp: HyperParams, ablations: Ablations = Ablations(),
            gammas=None, rng: Optional[np.random.Generator] = None, token_mean: bool = True) -> ForwardOutputs:
    """Encode, teacher-force the decoder, run both classifiers, and weigh the four losses.

    Dropout is active only when ``rng`` is given (training mode).
    """
    gammas = hp.gammas if gammas is None else gammas
    if ablations.no_inconsistency:
        gammas = (gammas[0], gammas[1], gammas[2], 0.0)
    enc = encode(batch.src, batch.src_mask, params, hp.residual_mix, residual=not ablations.no_residual)
    tf = teacher_forced(batch.dec_in, batch.tgt_ext, batch.tgt_mask, enc, batch.src_ext, params,
                        copy=not ablations.no_copy, tgt=batch.tgt)
    kw = dict(maxpool=ablations.maxpool_classifier, dropout=hp.dropout, rng=rng)
    p_src = source_view_predict(enc.memory, enc.mask, params, **kw)
    p_sum = summary_view_predict(tf.states, batch.tgt_mask, params, **kw)
    l_gen = generation_loss(tf.gold_prob, batch.tgt_mask, token_mean)
    l_src = classification_loss(p_src, batch.labels)
    l_sum = classification_loss(p_sum, batch.labels)
    if gammas[3] > 0:
        l_inc = inconsistency_loss(p_src, p_sum)
    else:
        with ad.no_record():
            l_inc = inconsistency_loss(p_src, p_sum)
    total = multi_task_loss(l_gen, l_src, l_sum, l_inc, gammas)
    return ForwardOutputs(enc.memory, tf.states, tf.gold_prob, p_src, p_sum, l_gen, l_src, l_sum, l_inc, total)
