"""Run and training configuration.

Configs are flat JSON files. Unknown keys are hard errors so a typo can
never silently fall back to a default. Desk-scale defaults are sized for
minutes-long CPU runs; the paper-scale values are reachable by overriding
the same fields.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigurationError


@dataclass
class TrainingConfig:
    # model
    d: int = 64
    layers: int = 2
    heads: int = 2
    d_ff: int = 128
    d_in: int = 32
    joint_dim: int = 64
    max_clips: int = 40
    max_steps: int = 80          # decode length cap T_max

    # keyframe / memory hyperparameters
    delta: float = 0.5
    start_window: int = 0        # 0 = ceil(L/3) per video; paper-scale uses 50
    history_window: int = 8      # paper-scale uses 20
    ngram_order: int = 4
    beta: float = 0.3
    lambda1: float = 0.5
    lambda2: float = 0.5

    # optimization
    label_smoothing: float = 0.1
    warmup: int = 200
    lr_scale: float = 1.0
    max_grad_norm: float = 5.0
    batch_size: int = 8
    pretrain_epochs: int = 6
    pretrain_batch: int = 32
    triplet_margin: float = 0.2
    mle_epochs: int = 12
    rl_epochs: int = 3
    seed: int = 0

    # ablation switches (Decoder / MLE / RL mechanism toggles)
    keyframe_gate: bool = True
    pme: bool = True
    omd: bool = True
    token_penalty: bool = True
    rlv_reward: bool = True
    div_reward: bool = True

    def validate(self):
        if self.warmup < 1:
            raise ConfigurationError("warmup must be >= 1")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigurationError("delta must be in (0, 1]")
        if self.d % self.heads != 0:
            raise ConfigurationError(f"hidden size {self.d} not divisible by {self.heads} heads")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError("label_smoothing must be in [0, 1)")
        for name in ("d", "layers", "heads", "d_ff", "d_in", "joint_dim",
                     "max_clips", "max_steps", "ngram_order", "batch_size",
                     "pretrain_batch", "max_grad_norm", "lambda1", "lambda2"):
            if getattr(self, name) < 0 or getattr(self, name) == 0 and name not in (
                    "max_grad_norm", "lambda1", "lambda2"):
                raise ConfigurationError(f"{name} must be positive")
        return self


@dataclass
class RunConfig(TrainingConfig):
    # paths and orchestration
    dataset_dir: str = "data"
    out_dir: str = "runs"
    stages: list = field(default_factory=lambda: ["pretrain", "mle"])
    delta_sweep: list = field(default_factory=lambda: [1.0, 0.7, 0.5, 0.3])
    selector: str = "learned"    # learned | uniform
    eval_repeats: int = 1

    # synthetic corpus knobs (gen-data)
    train_videos: int = 200
    val_videos: int = 40
    test_videos: int = 40

    def validate(self):
        super().validate()
        for stage in self.stages:
            if stage not in ("pretrain", "mle", "rl"):
                raise ConfigurationError(f"unknown stage {stage!r}")
        if self.selector not in ("learned", "uniform"):
            raise ConfigurationError(f"unknown selector {self.selector!r}")
        for dv in self.delta_sweep:
            if not 0.0 < dv <= 1.0:
                raise ConfigurationError(f"delta sweep value {dv} outside (0, 1]")
        return self


def _from_dict(cls, payload):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return cls(**payload).validate()


def training_config_from_dict(payload):
    return _from_dict(TrainingConfig, payload)


def run_config_from_dict(payload):
    return _from_dict(RunConfig, payload)


def load_run_config(path, overrides=None):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}") from None
    if overrides:
        payload.update(overrides)
    return run_config_from_dict(payload)


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def training_view(cfg):
    """The TrainingConfig slice of a RunConfig (used for checkpoint snapshots)."""
    names = {f.name for f in dataclasses.fields(TrainingConfig)}
    return {k: v for k, v in dataclasses.asdict(cfg).items() if k in names}
