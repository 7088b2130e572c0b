"""Model, training and decoding configuration.

Defaults are desk-scale; training-schedule constants and optimizer settings
follow the full-scale recipe, with ``schedule_scale`` shrinking the step
constants proportionally.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    src_vocab: int = 0
    tgt_vocab: int = 0
    d_emb: int = 64
    d_enc: int = 64  # per direction; annotations are 2 * d_enc wide
    d_dec: int = 64
    d_att: int = 64
    heads: int = 4
    dropout_emb: float = 0.5
    dropout_enc: float = 0.3
    dropout_out: float = 0.5
    init_scale: float = 0.08
    tie_embeddings: bool = True
    use_dim: bool = True
    use_update: bool = True
    dim_gate_bias: bool = True
    dim_grad_to_r2l: bool = False
    dim_states: str = "greedy"  # or "teacher"
    len_ratio: float = 1.5
    len_extra: int = 5

    def validate(self) -> None:
        if self.src_vocab <= 0 or self.tgt_vocab <= 0:
            raise ConfigError("src_vocab and tgt_vocab must be positive")
        if self.d_att % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_att={self.d_att}")
        for width, what in ((2 * self.d_enc, "2*d_enc"), (self.d_dec, "d_dec")):
            if width % self.heads:
                raise ConfigError(f"heads={self.heads} must divide {what}={width}")
        if self.dim_states not in ("greedy", "teacher"):
            raise ConfigError("dim_states must be 'greedy' or 'teacher'")
        for name in ("dropout_emb", "dropout_enc", "dropout_out"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    warmup: int = 500
    decay_start: int = 8000
    decay_end: int = 64000
    replicas: int = 1
    schedule_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    clip_norm: float = 5.0
    label_smoothing: float = 0.1
    agreement: float = 1.0
    token_budget: int = 4096
    seed: int = 1
    max_steps: int = 1000
    checkpoint_every: int = 0
    log_every: int = 1
    no_agreement: bool = False
    no_update: bool = False
    no_dim: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if min(self.warmup, self.decay_start, self.decay_end) <= 0:
            raise ConfigError("warmup, decay_start and decay_end must be positive")
        if self.decay_start >= self.decay_end:
            raise ConfigError("decay_start must be smaller than decay_end")
        if self.agreement < 0:
            raise ConfigError("agreement must be >= 0")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")

    @property
    def agreement_weight(self) -> float:
        return 0.0 if self.no_agreement else self.agreement


@dataclass
class DecodeConfig:
    beam: int = 10
    alpha: float = 1.0


@dataclass
class RunConfig:
    """Fully resolved settings for one command invocation."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, tree: dict) -> "RunConfig":
        known = {"model": ModelConfig, "train": TrainConfig, "decode": DecodeConfig, "data": None}
        for key in tree:
            if key not in known:
                raise ConfigError(f"unknown config section: {key!r}")
        out = cls()
        for section, klass in known.items():
            values = tree.get(section, {})
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be a table")
            if klass is None:
                out.data = dict(values)
                continue
            names = {f.name: f for f in fields(klass)}
            target = getattr(out, section)
            for k, v in values.items():
                if k not in names:
                    raise ConfigError(f"unknown config key: {section}.{k}")
                setattr(target, k, _coerce(v, names[k].type, f"{section}.{k}"))
        return out

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        if self.decode.beam < 1:
            raise ConfigError("decode.beam must be >= 1")


def _coerce(value, annotation: str, key: str):
    kind = {"int": int, "float": float, "bool": bool, "str": str}.get(str(annotation))
    if kind is None:
        return value
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"{key} must be a boolean")
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{key} must be an integer")
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value
