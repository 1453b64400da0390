"""Configuration dataclasses. All defaults live here.

``paper_scale()`` reproduces the published hyperparameters; the plain
defaults are the desk-scale settings used by the experiments and tests.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

ABLATIONS = ("all", "gen_only", "dis_only")


@dataclass
class ModelConfig:
    hidden_dim: int = 32  # M
    num_concepts: int = 6  # K
    num_heads: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 2
    gen_layers: int = 1
    policy_layers: int = 1
    max_len: int = 160
    time_coef: float = 0.2  # A
    tau: float = 0.1
    c_ema: float = 0.9
    compat_hidden_layers: int = 1  # H
    compat_width: int = 32  # W_c
    hypernet_hidden: int = 64


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lam: float = 0.001
    lambda_rec: float = 0.1
    pretrain_iters: int = 200
    total_iters: int = 1000
    gen_defer_fraction: float = 0.0
    base_lr: float = 1e-3
    pretrain_lr: float = 1e-3
    warmup_iters: int = 100
    min_lr_ratio: float = 0.1
    weight_decay: float = 1e-3
    batch_size: int = 16
    window_len: int = 96
    ablation: str = "all"
    seed: int = 0
    square_rec: bool = False
    detach_compat_grad: bool = False
    entropy_k_mode: str = "active"
    log_every: int = 50

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.lam < 0 or self.lambda_rec < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0.0 <= self.gen_defer_fraction <= 1.0:
            raise ValueError("gen_defer_fraction must lie in [0, 1]")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.entropy_k_mode not in ("active", "all"):
            raise ValueError("entropy_k_mode must be 'active' or 'all'")
        if self.window_len < 1 or self.batch_size < 1:
            raise ValueError("window_len and batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        mk = {f.name for f in fields(ModelConfig)}
        model = d.get("model", {})
        bad = set(model) - mk
        if bad:
            raise ValueError(f"unknown model config fields: {sorted(bad)}")
        return cls(**{**d, "model": ModelConfig(**model)})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def paper_scale() -> TrainConfig:
    model = ModelConfig(
        hidden_dim=128,
        num_concepts=10,
        num_heads=8,
        encoder_layers=4,
        decoder_layers=4,
        gen_layers=2,
        policy_layers=1,
        max_len=1024,
        compat_width=128,
        hypernet_hidden=256,
    )
    return TrainConfig(
        model=model,
        pretrain_iters=10_000,
        gen_defer_fraction=0.5,
        total_iters=1_600_000,
        base_lr=1e-4,
        pretrain_lr=1e-4,
        warmup_iters=1000,
        batch_size=256,
        window_len=60,
    )


def tiny_config() -> TrainConfig:
    """Smallest configuration, used by the gradient checks."""
    model = ModelConfig(
        hidden_dim=8,
        num_concepts=3,
        num_heads=2,
        encoder_layers=1,
        decoder_layers=1,
        gen_layers=1,
        policy_layers=1,
        max_len=16,
        compat_width=8,
        hypernet_hidden=8,
    )
    return TrainConfig(model=model, batch_size=2, window_len=12, total_iters=10, pretrain_iters=0)
