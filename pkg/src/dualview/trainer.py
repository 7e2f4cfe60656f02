"""Multi-task training loop: Adam, clipping, plateau halving, early stopping."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Dataset, iterate_batches, make_batch
from .model import ModelParams, forward

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_gradients(params: ModelParams, max_norm: float = 2.0) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``; returns the scale."""
    total = 0.0
    for name, t in params.items():
        if t.grad is None:
            continue
        if not np.isfinite(t.grad).all():
            raise TrainingError(f"non-finite gradient in {name}")
        total += float(np.sum(t.grad * t.grad))
    norm = math.sqrt(total)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for t in params.values():
        if t.grad is not None:
            t.grad *= scale
    return scale


def adam_step(params: ModelParams, state: AdamState) -> None:
    """Bias-corrected Adam update in place; parameters without gradients are skipped."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.values)
            state.v[name] = np.zeros_like(t.values)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_on_plateau(lr: float, history: Sequence[float], min_lr: float = 1e-6, tol: float = 1e-6) -> float:
    """Halve ``lr`` when the newest validation loss fails to beat the earlier best by ``tol``."""
    if not history:
        raise ValueError("empty validation history")
    if len(history) < 2:
        return lr
    if history[-1] < min(history[:-1]) - tol:
        return lr
    return max(lr / 2.0, min_lr)


def early_stop(history: Sequence[float], patience: int = 3, tol: float = 1e-6) -> bool:
    """True once the best loss is ``patience`` or more checkpoints old."""
    if not history:
        return False
    best_idx, best = 0, history[0]
    for i, x in enumerate(history[1:], start=1):
        if x < best - tol:
            best_idx, best = i, x
    return len(history) - 1 - best_idx >= patience


@dataclass
class TrainResult:
    params: ModelParams          # parameters at the end of training
    best_params: ModelParams     # parameters at the lowest validation loss
    log: list[dict]
    steps: int
    stopped_early: bool
    best_checkpoint: Optional[Path] = None
    last_checkpoint: Optional[Path] = None


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def evaluate_loss(params: ModelParams, examples, config: TrainConfig) -> dict:
    """Mean loss components (dropout off) and the source/summary disagreement rate."""
    totals = {"gen": 0.0, "src": 0.0, "sum": 0.0, "inc": 0.0, "total": 0.0}
    n = 0
    disagree = 0
    with ad.no_record():
        for batch in iterate_batches(examples, config.hp.batch_size):
            out = forward(params, batch, config.hp, config.ablations, token_mean=config.token_mean)
            k = len(batch)
            for key, val in out.components().items():
                totals[key] += val * k
            disagree += int(np.sum(out.p_src.values.argmax(-1) != out.p_sum.values.argmax(-1)))
            n += k
    res = {key: val / n for key, val in totals.items()}
    res["disagreement_rate"] = disagree / n
    return res


class Trainer:
    """Owns the parameters, optimizer and schedule state for one run."""

    def __init__(self, dataset: Dataset, config: TrainConfig, out_dir=None):
        if not dataset.train:
            raise TrainingError("empty training split")
        self.ds = dataset
        self.cfg = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        hp = config.hp
        self.params = ModelParams.init(hp, len(dataset.vocab), config.seed, config.init_scale)
        self.adam = AdamState(lr=hp.lr)
        self.data_rng = np.random.default_rng([config.seed, 1])
        self.dropout_rng = np.random.default_rng([config.seed, 2])
        self.step = 0
        self.epoch = 0
        self.order: list[int] = []
        self.pos = 0
        self.val_history: list[float] = []
        self.best_val = math.inf
        self.best_params = self.params.copy()
        self.log: list[dict] = []
        self.interval_sums: dict[str, float] = {}
        self.interval_steps = 0
        steps_per_epoch = math.ceil(len(dataset.train) / hp.batch_size)
        self.interval = config.checkpoint_interval or min(steps_per_epoch, 1000)
        self.val_examples = dataset.valid or dataset.train

    # ------------------------------------------------------------ batches

    def _next_batch(self):
        bs = self.cfg.hp.batch_size
        if self.pos >= len(self.order):
            if self.order:
                self.epoch += 1
            self.order = [int(i) for i in self.data_rng.permutation(len(self.ds.train))]
            self.pos = 0
        idx = self.order[self.pos:self.pos + bs]
        self.pos += bs
        return make_batch([self.ds.train[i] for i in idx])

    def train_step(self) -> dict:
        batch = self._next_batch()
        self.params.zero_grads()
        with ad.Tape() as tape:
            out = forward(self.params, batch, self.cfg.hp, self.cfg.ablations, rng=self.dropout_rng,
                          token_mean=self.cfg.token_mean)
        comps = out.components()
        if not all(math.isfinite(v) for v in comps.values()):
            raise TrainingError(f"non-finite loss at step {self.step + 1}: {comps}")
        ad.backward(out.total, tape)
        scale = clip_gradients(self.params, self.cfg.hp.clip_norm)
        adam_step(self.params, self.adam)
        self.step += 1
        comps["clip_scale"] = scale
        for k, v in comps.items():
            self.interval_sums[k] = self.interval_sums.get(k, 0.0) + v
        self.interval_steps += 1
        return comps

    # ------------------------------------------------------------ checkpoints

    def checkpoint(self) -> dict:
        val = evaluate_loss(self.params, self.val_examples, self.cfg)
        key = "total" if self.cfg.val_loss == "joint" else "gen"
        self.val_history.append(val[key])
        improved = val[key] < self.best_val - self.cfg.plateau_tol
        if improved:
            self.best_val = val[key]
            self.best_params = self.params.copy()
        lr_used = self.adam.lr
        self.adam.lr = lr_on_plateau(self.adam.lr, self.val_history, self.cfg.min_lr, self.cfg.plateau_tol)
        entry = {
            "step": self.step,
            "epoch": self.epoch,
            "seed": self.cfg.seed,
            "lr": lr_used,
            "next_lr": self.adam.lr,
            "train": {k: v / max(self.interval_steps, 1) for k, v in self.interval_sums.items()},
            "valid": val,
            "disagreement_rate": val["disagreement_rate"],
            "improved": improved,
        }
        self.interval_sums, self.interval_steps = {}, 0
        self.log.append(entry)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if improved:
                save_checkpoint(self.out_dir / "best.ckpt", self._tensor_dict(self.best_params, False),
                                self.cfg.hp, self._meta())
            save_checkpoint(self.out_dir / "last.ckpt", self._tensor_dict(self.params, True), self.cfg.hp,
                            self._meta())
            with open(self.out_dir / "train_log.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        logger.info("step %d val %.4f lr %.2e disagree %.3f", self.step, val[key], lr_used,
                    val["disagreement_rate"])
        return entry

    def _tensor_dict(self, params: ModelParams, with_optimizer: bool) -> dict[str, np.ndarray]:
        out = {name: t.values for name, t in params.items()}
        if with_optimizer:
            for name in params:
                if name in self.adam.m:
                    out[f"adam.m.{name}"] = self.adam.m[name]
                    out[f"adam.v.{name}"] = self.adam.v[name]
        return out

    def _meta(self) -> dict:
        return {
            "vocab_size": len(self.ds.vocab),
            "vocab_digest": vocab_digest(self.ds.vocab.itos),
            "vocab": self.ds.vocab.itos,
            "config": self.cfg.to_dict(),
            "trainer": {
                "step": self.step, "epoch": self.epoch, "order": self.order, "pos": self.pos,
                "val_history": self.val_history, "best_val": self.best_val if math.isfinite(self.best_val) else None,
                "lr": self.adam.lr, "adam_step": self.adam.step,
                "data_rng": _rng_state(self.data_rng), "dropout_rng": _rng_state(self.dropout_rng),
                "log": self.log,
            },
        }

    def resume(self, path) -> None:
        """Continue from a ``last.ckpt`` written by this trainer."""
        tensors, _, meta = load_checkpoint(path)
        st = meta["trainer"]
        for name, t in self.params.items():
            t.values = tensors[name].copy()
        self.adam.m = {k[len("adam.m."):]: v.copy() for k, v in tensors.items() if k.startswith("adam.m.")}
        self.adam.v = {k[len("adam.v."):]: v.copy() for k, v in tensors.items() if k.startswith("adam.v.")}
        self.adam.step, self.adam.lr = st["adam_step"], st["lr"]
        self.step, self.epoch, self.order, self.pos = st["step"], st["epoch"], st["order"], st["pos"]
        self.val_history = list(st["val_history"])
        self.best_val = math.inf if st["best_val"] is None else st["best_val"]
        self.data_rng = _restore_rng(st["data_rng"])
        self.dropout_rng = _restore_rng(st["dropout_rng"])
        self.log = list(st["log"])
        best = self.out_dir / "best.ckpt" if self.out_dir is not None else None
        if best is not None and best.exists():
            bt, _, _ = load_checkpoint(best)
            self.best_params = ModelParams({k: ad.Tensor(v) for k, v in bt.items() if k in self.params})
        else:
            self.best_params = self.params.copy()

    # ------------------------------------------------------------ loop

    def run(self, on_step: Optional[Callable[[int, dict], None]] = None) -> TrainResult:
        cfg = self.cfg
        steps_per_epoch = math.ceil(len(self.ds.train) / cfg.hp.batch_size)
        max_steps = cfg.max_steps if cfg.max_steps is not None else cfg.max_epochs * steps_per_epoch
        stopped = False
        while self.step < max_steps:
            try:
                comps = self.train_step()
            except (TrainingError, ad.NonFiniteError) as exc:
                raise TrainingError(f"{exc}; last good checkpoint kept in {self.out_dir}") from exc
            if on_step is not None:
                on_step(self.step, comps)
            if self.step % self.interval == 0:
                self.checkpoint()
                if cfg.early_stopping and early_stop(self.val_history, cfg.patience, cfg.plateau_tol):
                    stopped = True
                    break
        if self.interval_steps:
            self.checkpoint()
        out = self.out_dir
        return TrainResult(self.params, self.best_params, self.log, self.step, stopped,
                           out / "best.ckpt" if out else None, out / "last.ckpt" if out else None)


def vocab_digest(words: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(words).encode("utf-8")).hexdigest()[:16]


def train(dataset: Dataset, config: TrainConfig, out_dir=None, resume: bool = False,
          on_step: Optional[Callable[[int, dict], None]] = None) -> TrainResult:
    trainer = Trainer(dataset, config, out_dir)
    if resume:
        last = Path(out_dir) / "last.ckpt"
        if last.exists():
            trainer.resume(last)
    return trainer.run(on_step)


def load_model(path):
    """Load parameters, hyperparameters and checkpoint metadata for inference."""
    from .config import Ablations

    tensors, hp, meta = load_checkpoint(path)
    params = ModelParams({k: ad.Tensor(v) for k, v in tensors.items() if not k.startswith("adam.")})
    cfg = meta.get("config", {})
    ablations = Ablations(**cfg.get("ablations", {}))
    return params, hp, ablations, meta


def multi_seed_run(seeds: Sequence[int], run_one: Callable[[int], dict]) -> dict:
    """Run ``run_one(seed) -> {metric: value}`` per seed; mean and std per metric.

    A failing seed is recorded under "failures" and excluded from the statistics.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    per_seed, failures = {}, {}
    for s in seeds:
        try:
            per_seed[s] = run_one(s)
        except Exception as exc:  # noqa: BLE001 - partial reports are the contract
            logger.exception("seed %s failed", s)
            failures[s] = f"{type(exc).__name__}: {exc}"
    metrics = sorted({k for r in per_seed.values() for k, v in _flatten(r).items()})
    summary = {}
    for key in metrics:
        vals = [_flatten(r)[key] for r in per_seed.values() if key in _flatten(r)]
        summary[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
    return {"per_seed": {str(k): v for k, v in per_seed.items()}, "summary": summary,
            "failures": {str(k): v for k, v in failures.items()}}


def _flatten(d: dict, prefix: str = "") -> dict[str, float]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out[key] = float(v)
    return out

