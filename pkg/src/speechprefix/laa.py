"""Lightweight attentive aggregation: frame features -> two prefix vectors.

LayerNorm -> linear projection -> bidirectional GRU -> one attentive pooling
per GRU direction.  The output length is always two, whatever the number of
frames.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import numerics as nx
from .audio import FrameSequence
from .config import PREFIX_COUNT, ModelConfig
from .errors import ShapeError
from .numerics import Tensor
from .params import ParameterStore

DIRECTIONS = ("gru_fwd", "gru_bwd")


@dataclass
class PrefixPair:
    vectors: Tensor          # (B, 2, d)
    alphas: np.ndarray       # (B, 2, T) attention weights, zero on padded frames
    frame_mask: np.ndarray   # (B, T) bool

    @property
    def batch_size(self) -> int:
        return self.vectors.shape[0]


def _as_batch(Z, frame_mask, dtype):
    if isinstance(Z, FrameSequence):
        Z = Z.frames
    Z = np.asarray(Z.data if isinstance(Z, Tensor) else Z)
    if Z.ndim == 2:
        Z = Z[None]
    if Z.ndim != 3:
        raise ShapeError(f"frame features must be (T, d_A) or (B, T, d_A), got {Z.shape}")
    if Z.shape[1] == 0:
        raise ShapeError("empty frame sequence: T_A must be at least 1")
    if frame_mask is None:
        frame_mask = np.ones(Z.shape[:2], dtype=bool)
    frame_mask = np.asarray(frame_mask, dtype=bool)
    if frame_mask.shape != Z.shape[:2]:
        raise ShapeError(f"frame mask {frame_mask.shape} does not match features {Z.shape[:2]}")
    if not frame_mask.any(axis=1).all():
        raise ShapeError("empty frame sequence: T_A must be at least 1")
    return Z.astype(dtype, copy=False), frame_mask


def laa_forward(Z: Union[FrameSequence, np.ndarray], params: ParameterStore, cfg: ModelConfig,
                training: bool = False, rng: Optional[np.random.Generator] = None,
                frame_mask: Optional[np.ndarray] = None) -> PrefixPair:
    """Aggregate frames into ``PREFIX_COUNT`` prefix vectors of width ``cfg.d``."""
    Z, frame_mask = _as_batch(Z, frame_mask, params.dtype)
    if Z.shape[2] != cfg.d_A:
        raise ShapeError(f"frame width {Z.shape[2]} != model.d_A {cfg.d_A}")
    p = params
    x = nx.layer_norm(Z, p["laa.ln.gamma"], p["laa.ln.beta"], cfg.ln_eps)
    x = nx.linear(x, p["laa.proj.W"], p["laa.proj.b"])
    x = nx.dropout(x, cfg.laa_dropout_p, rng, training)

    act = nx.ops.activation(cfg.laa_activation)
    B, T = frame_mask.shape
    vectors, alphas = [], []
    for direction in DIRECTIONS:
        phi = nx.gru(x, frame_mask, p[f"laa.{direction}.W_ih"], p[f"laa.{direction}.W_hh"],
                     p[f"laa.{direction}.b_ih"], p[f"laa.{direction}.b_hh"],
                     reverse=direction == "gru_bwd")
        u = act(nx.linear(phi, p["laa.agg1.W"], p["laa.agg1.b"]))
        scores = nx.add(nx.matmul(u, p["laa.agg2.W"]), p["laa.agg2.b"])  # (B, T)
        alpha = nx.softmax(scores, axis=-1, mask=frame_mask)
        pooled = nx.matmul(nx.reshape(alpha, (B, 1, T)), phi)  # (B, 1, d)
        vectors.append(pooled)
        alphas.append(alpha.data)
    out = nx.concat(vectors, axis=1)
    assert out.shape[1] == PREFIX_COUNT
    return PrefixPair(out, np.stack(alphas, axis=1), frame_mask)


def attention_profile(pp: PrefixPair, index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-direction frame weights for one batch row, trimmed to its valid frames."""
    n = int(pp.frame_mask[index].sum())
    return pp.alphas[index, 0, :n].copy(), pp.alphas[index, 1, :n].copy()
