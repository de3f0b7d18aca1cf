"""Model shape configuration and the named profiles."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ValidationError

PREFIX_COUNT = 2


@dataclass
class ModelConfig:
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 64
    max_positions: int = 64
    d_A: int = 32
    dropout_p: float = 0.1
    laa_dropout_p: float = 0.1
    laa_activation: str = "gelu"
    # when False, prefixes bypass the embedding LayerNorm
    prefix_through_embed_ln: bool = True
    tie_mlm_weights: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("d", "n_layers", "n_heads", "d_ff", "vocab_size", "max_positions", "d_A"):
            if getattr(self, name) < 1:
                raise ValidationError(f"model.{name} must be positive, got {getattr(self, name)}")
        if self.d % self.n_heads:
            raise ValidationError(f"model.d={self.d} is not divisible by n_heads={self.n_heads}")
        for name in ("dropout_p", "laa_dropout_p"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValidationError(f"model.{name} must lie in [0, 1), got {p}")
        if self.laa_activation not in ("gelu", "tanh"):
            raise ValidationError(f"model.laa_activation must be 'gelu' or 'tanh', got {self.laa_activation!r}")
        if self.max_positions < PREFIX_COUNT + 2:
            raise ValidationError("model.max_positions must fit [CLS], two prefixes and [SEP]")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def toy_profile(**overrides) -> ModelConfig:
    base = dict(d=64, n_layers=2, n_heads=4, d_ff=256, vocab_size=64, max_positions=64, d_A=32)
    base.update(overrides)
    return ModelConfig(**base)


def base_profile(**overrides) -> ModelConfig:
    """12-layer, 768-wide encoder with the byte-level BPE vocabulary size."""
    base = dict(d=768, n_layers=12, n_heads=12, d_ff=3072, vocab_size=50265, max_positions=514, d_A=512)
    base.update(overrides)
    return ModelConfig(**base)


PROFILES = {"toy": toy_profile, "base": base_profile}
