"""Closed-form parameter counts for the prefixed model and a two-tower baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

from .audio import ConvStackConfig
from .config import ModelConfig
from .errors import ValidationError

MODES = ("prefixed", "two-tower")


def conv_count(conv: ConvStackConfig) -> int:
    total, c_in = 0, 1
    for c_out, k, _ in conv.layers:
        total += c_out * c_in * k
        c_in = c_out
    return total


def gru_count(d_in: int, h: int) -> int:
    return 3 * h * (d_in + h) + 6 * h


def laa_count(d_A: int, d: int) -> int:
    ln = 2 * d_A
    proj = d_A * d_A + d_A
    agg = (d * d + d) + (d + 1)
    return ln + proj + 2 * gru_count(d_A, d) + agg


def encoder_layer_count(d: int, d_ff: int) -> int:
    attn = 4 * (d * d + d)
    ffn = (d * d_ff + d_ff) + (d_ff * d + d)
    return attn + ffn + 4 * d  # two LayerNorms


def embeddings_count(vocab: int, positions: int, d: int) -> int:
    return vocab * d + positions * d + 2 * d


def mlm_head_count(d: int, vocab: int, tied: bool) -> int:
    return vocab if tied else d * vocab + vocab


def head_count(d: int) -> int:
    return (d * d + d) + (d + 1)


@dataclass
class TwoTowerShape:
    """Late fusion of a full text encoder and a full speech encoder.

    The speech tower is a BERT-style encoder over discretised speech units
    sitting on the same conv frontend; ``unit_vocab`` of None means "same
    as the text vocabulary".
    """

    speech_layers: int = 24
    speech_d: int = 1024
    speech_d_ff: int = 4096
    speech_positions: int = 514
    unit_vocab: Optional[int] = None


@dataclass
class ParamCount:
    mode: str
    partitions: dict
    total: int
    trainable: int
    pretrain_only: int = 0
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def count_params(cfg: ModelConfig, mode: str = "prefixed", conv: Optional[ConvStackConfig] = None,
                 two_tower: Optional[TwoTowerShape] = None) -> ParamCount:
    """Exact counts per partition.

    ``total`` is the deployed fine-tuned model (frontend, aggregation module,
    embeddings + encoder layers, regression head).  The MaskedLM head is used
    only while pretraining and is reported as ``pretrain_only``.
    ``trainable`` excludes the frozen frontend.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown count mode {mode!r}; expected one of {MODES}")
    conv = conv or ConvStackConfig.profile("wav2vec2", channels=cfg.d_A)
    theta_W = conv_count(conv)
    emb = embeddings_count(cfg.vocab_size, cfg.max_positions, cfg.d)
    layers = cfg.n_layers * encoder_layer_count(cfg.d, cfg.d_ff)
    mlm = mlm_head_count(cfg.d, cfg.vocab_size, cfg.tie_mlm_weights)

    if mode == "prefixed":
        theta_A = laa_count(cfg.d_A, cfg.d)
        theta_h = head_count(cfg.d)
        parts = {"theta_W": theta_W, "theta_A": theta_A, "theta_LM": emb + layers, "theta_h": theta_h}
        total = sum(parts.values())
        return ParamCount(mode, parts, total, total - theta_W, mlm,
                          {"embeddings": emb, "encoder_layers": layers, "mlm_head": mlm})

    tt = two_tower or TwoTowerShape()
    unit_vocab = cfg.vocab_size if tt.unit_vocab is None else tt.unit_vocab
    speech_emb = embeddings_count(unit_vocab, tt.speech_positions, tt.speech_d)
    speech_layers = tt.speech_layers * encoder_layer_count(tt.speech_d, tt.speech_d_ff)
    fusion = (cfg.d + tt.speech_d) * cfg.d + cfg.d + cfg.d + 1
    parts = {
        "speech_frontend": theta_W,
        "speech_tower": speech_emb + speech_layers,
        "text_tower": emb + layers,
        "fusion_head": fusion,
    }
    total = sum(parts.values())
    return ParamCount(mode, parts, total, total - theta_W, 0,
                      {"speech_embeddings": speech_emb, "speech_layers": speech_layers,
                       "text_embeddings": emb, "text_layers": layers})


def saving(prefixed: ParamCount, baseline: ParamCount) -> float:
    """Fraction of the baseline's parameters that the prefixed model does without."""
    return 1.0 - prefixed.total / baseline.total
