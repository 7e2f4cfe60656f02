"""Hyperparameters, ablation switches and training settings."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class HyperParams:
    """Model dimensions, loss weights and schedule constants.

    Defaults are the full-scale settings; desk-scale runs shrink the
    dimensions through :meth:`replace`.
    """

    emb_dim: int = 128
    hidden: int = 512
    attn_dim: int = 512
    query_dim: int = 512
    cls_hidden: int = 512
    num_classes: int = 5
    residual_mix: float = 0.5
    gammas: tuple[float, float, float, float] = (0.8, 0.1, 0.1, 0.1)
    vocab_cap: int = 50_000
    max_src_len: int = 400
    max_tgt_len: int = 100
    beam_width: int = 5
    max_decode_depth: int = 120
    dropout: float = 0.1
    lr: float = 0.001
    batch_size: int = 32
    clip_norm: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        dims = ("emb_dim", "hidden", "attn_dim", "query_dim", "cls_hidden", "num_classes",
                "max_src_len", "max_tgt_len", "beam_width", "max_decode_depth", "batch_size")
        for name in dims:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden % 2:
            raise ValueError(f"hidden size must be even (two directional halves), got {self.hidden}")
        if not 0.0 <= self.residual_mix <= 1.0:
            raise ValueError(f"residual_mix must lie in [0, 1], got {self.residual_mix}")
        if len(self.gammas) != 4 or any(g < 0 for g in self.gammas):
            raise ValueError(f"gammas must be four nonnegative weights, got {self.gammas}")
        if self.vocab_cap < 5:
            raise ValueError("vocab_cap must leave room for the four special tokens plus one word")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["gammas"] = list(self.gammas)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HyperParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Ablations:
    """Component switches: -I, -A, -R and -C."""

    no_inconsistency: bool = False
    maxpool_classifier: bool = False
    no_residual: bool = False
    no_copy: bool = False

    @classmethod
    def from_codes(cls, codes: str) -> "Ablations":
        """Parse e.g. ``"IC"`` or ``"-I,-C"``."""
        flags = {c for c in codes.upper() if c.isalpha()}
        bad = flags - set("IARC")
        if bad:
            raise ValueError(f"unknown ablation codes {sorted(bad)}; expected I, A, R, C")
        return cls("I" in flags, "A" in flags, "R" in flags, "C" in flags)

    def codes(self) -> str:
        return "".join(c for c, on in zip("IARC", dataclasses.astuple(self)) if on)


@dataclass
class TrainConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    ablations: Ablations = field(default_factory=Ablations)
    seed: int = 0
    max_epochs: int = 50
    max_steps: int | None = None
    # None: one pass over the training set or 1000 steps, whichever is smaller
    checkpoint_interval: int | None = None
    patience: int = 3
    min_lr: float = 1e-6
    plateau_tol: float = 1e-6
    # "joint" schedules on the weighted objective, "gen" on the generation loss only
    val_loss: str = "joint"
    # per-token mean of the generation loss; False restores the per-example sum
    token_mean: bool = True
    init_scale: float = 0.1
    early_stopping: bool = True

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.val_loss not in ("joint", "gen"):
            raise ValueError(f"val_loss must be 'joint' or 'gen', got {self.val_loss!r}")
        if self.checkpoint_interval is not None and self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")

    @property
    def gammas(self) -> tuple[float, float, float, float]:
        g = self.hp.gammas
        return (g[0], g[1], g[2], 0.0) if self.ablations.no_inconsistency else g

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["hp"] = self.hp.to_dict()
        d["ablations"] = dataclasses.asdict(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        hp = HyperParams.from_dict(d.pop("hp", {}))
        abl = Ablations(**d.pop("ablations", {}))
        return cls(hp=hp, ablations=abl, **d)
