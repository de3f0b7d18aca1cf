"""BERT-style encoder over ``[CLS], prefix_1, prefix_2, tokens..., [SEP]``.

Post-LayerNorm blocks with absolute position embeddings, a linear MaskedLM
head and a two-layer regression head on the ``[CLS]`` slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import numerics as nx
from .config import PREFIX_COUNT, ModelConfig
from .errors import ContractError, ShapeError, TruncationError
from .laa import PrefixPair
from .numerics import Tensor
from .params import ParameterStore
from .vocab import PAD_ID

FIRST_TEXT_POSITION = 1 + PREFIX_COUNT


@dataclass
class AssembledInput:
    embeddings: Tensor            # (B, L, d) token/prefix vectors plus position embeddings
    attention_mask: np.ndarray    # (B, L) bool, False on padding
    position_ids: np.ndarray      # (L,)
    lengths: np.ndarray           # (B,) unpadded assembled lengths, T_L + 4

    @property
    def seq_len(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class EncoderOutput:
    hidden: Tensor                       # (B, L, d)
    attentions: list = field(default_factory=list)  # per layer, (B, heads, L, L) arrays
    attention_mask: Optional[np.ndarray] = None


def _token_batch(tokens) -> np.ndarray:
    ids = np.asarray(tokens)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.ndim != 2 or ids.dtype.kind not in "iu":
        raise ShapeError(f"token ids must be a (B, L) integer array, got {ids.shape} {ids.dtype}")
    return ids.astype(np.int64, copy=False)


def assemble(tokens, prefixes: Union[PrefixPair, Tensor, np.ndarray], params: ParameterStore,
             cfg: ModelConfig, zero_prefixes: bool = False) -> AssembledInput:
    """Embed tokens and splice the prefix vectors in at positions 1 and 2.

    ``tokens`` is ``[CLS] l_1 .. l_T [SEP]`` per row, right-padded with
    ``[PAD]``.  Prefixes bypass the token table; every slot receives its
    absolute position embedding.  ``zero_prefixes`` replaces the prefix
    vectors by zeros (text-only ablation).
    """
    ids = _token_batch(tokens)
    B, Lt = ids.shape
    L = Lt + PREFIX_COUNT
    if L > cfg.max_positions:
        raise TruncationError(f"assembled length {L} exceeds max_positions={cfg.max_positions}; "
                              f"shorten the text to at most {cfg.max_positions - PREFIX_COUNT} tokens")
    vec = prefixes.vectors if isinstance(prefixes, PrefixPair) else prefixes
    vec_shape = vec.shape
    if vec_shape != (B, PREFIX_COUNT, cfg.d):
        raise ShapeError(f"prefixes have shape {vec_shape}, expected {(B, PREFIX_COUNT, cfg.d)}")
    if zero_prefixes:
        vec = np.zeros(vec_shape, dtype=params.dtype)

    tok = nx.embedding(params["lm.emb.tok"], ids)  # (B, Lt, d)
    seq = nx.concat([tok[:, :1], vec, tok[:, 1:]], axis=1)
    positions = np.arange(L)
    x = nx.add(seq, nx.embedding(params["lm.emb.pos"], positions))
    token_mask = ids != PAD_ID
    mask = np.concatenate([token_mask[:, :1], np.ones((B, PREFIX_COUNT), dtype=bool), token_mask[:, 1:]], axis=1)
    return AssembledInput(x, mask, positions, mask.sum(axis=1))


def _split_heads(x: Tensor, B: int, L: int, h: int, dh: int) -> Tensor:
    return nx.transpose(nx.reshape(x, (B, L, h, dh)), (0, 2, 1, 3))


def encode(x: AssembledInput, params: ParameterStore, cfg: ModelConfig, training: bool = False,
           rng: Optional[np.random.Generator] = None) -> EncoderOutput:
    p = params
    h = x.embeddings
    B, L, d = h.shape
    if d != cfg.d:
        raise ShapeError(f"embedding width {d} != model.d {cfg.d}")
    gamma, beta = p["lm.emb.ln.gamma"], p["lm.emb.ln.beta"]
    if cfg.prefix_through_embed_ln:
        h = nx.layer_norm(h, gamma, beta, cfg.ln_eps)
    else:
        normed = nx.layer_norm(h, gamma, beta, cfg.ln_eps)
        h = nx.concat([normed[:, :1], h[:, 1:FIRST_TEXT_POSITION], normed[:, FIRST_TEXT_POSITION:]], axis=1)
    h = nx.dropout(h, cfg.dropout_p, rng, training)

    nh, dh = cfg.n_heads, cfg.head_dim
    key_mask = x.attention_mask[:, None, None, :]
    scale = 1.0 / math.sqrt(dh)
    attentions = []
    for i in range(cfg.n_layers):
        pre = f"lm.layer{i}"
        q = _split_heads(nx.linear(h, p[f"{pre}.attn.q.W"], p[f"{pre}.attn.q.b"]), B, L, nh, dh)
        k = _split_heads(nx.linear(h, p[f"{pre}.attn.k.W"], p[f"{pre}.attn.k.b"]), B, L, nh, dh)
        v = _split_heads(nx.linear(h, p[f"{pre}.attn.v.W"], p[f"{pre}.attn.v.b"]), B, L, nh, dh)
        scores = nx.mul(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), scale)
        probs = nx.softmax(scores, axis=-1, mask=key_mask)
        attentions.append(probs.data)
        probs = nx.dropout(probs, cfg.dropout_p, rng, training)
        ctx = nx.reshape(nx.transpose(nx.matmul(probs, v), (0, 2, 1, 3)), (B, L, d))
        attn_out = nx.dropout(nx.linear(ctx, p[f"{pre}.attn.o.W"], p[f"{pre}.attn.o.b"]), cfg.dropout_p, rng, training)
        h = nx.layer_norm(nx.add(h, attn_out), p[f"{pre}.attn_ln.gamma"], p[f"{pre}.attn_ln.beta"], cfg.ln_eps)
        ff = nx.gelu(nx.linear(h, p[f"{pre}.ffn.in.W"], p[f"{pre}.ffn.in.b"]))
        ff = nx.dropout(nx.linear(ff, p[f"{pre}.ffn.out.W"], p[f"{pre}.ffn.out.b"]), cfg.dropout_p, rng, training)
        h = nx.layer_norm(nx.add(h, ff), p[f"{pre}.ffn_ln.gamma"], p[f"{pre}.ffn_ln.beta"], cfg.ln_eps)
    return EncoderOutput(h, attentions, x.attention_mask)


def check_mlm_positions(rows: np.ndarray, cols: np.ndarray, lengths: np.ndarray) -> None:
    """Masked positions must be textual: index >= 3 and before the row's [SEP]."""
    bad = (cols < FIRST_TEXT_POSITION) | (cols >= lengths[rows] - 1)
    if bad.any():
        i = int(np.argmax(bad))
        raise ContractError(f"MLM position {int(cols[i])} in row {int(rows[i])} is not a textual slot "
                            f"(valid range {FIRST_TEXT_POSITION}..{int(lengths[rows[i]]) - 2})")


def mlm_logits(H: Union[EncoderOutput, Tensor], rows: Sequence[int], cols: Sequence[int],
               params: ParameterStore, cfg: ModelConfig, lengths: Optional[np.ndarray] = None) -> Tensor:
    """Vocabulary logits (N, V) at the given (row, assembled-position) pairs."""
    hidden = H.hidden if isinstance(H, EncoderOutput) else H
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size == 0:
        raise ContractError("no masked positions; the MLM loss is undefined for this batch")
    if lengths is None:
        if isinstance(H, EncoderOutput) and H.attention_mask is not None:
            lengths = H.attention_mask.sum(axis=1)
        else:
            lengths = np.full(hidden.shape[0], hidden.shape[1])
    check_mlm_positions(rows, cols, np.asarray(lengths))
    picked = nx.getitem(hidden, (rows, cols))  # (N, d)
    if cfg.tie_mlm_weights:
        w = nx.transpose(params["lm.emb.tok"], (1, 0))
    else:
        w = params["lm.mlm.W"]
    return nx.linear(picked, w, params["lm.mlm.b"])


def mlm_loss(H, rows, cols, targets, params: ParameterStore, cfg: ModelConfig, lengths=None) -> Tensor:
    """Cross-entropy averaged over the masked positions only."""
    return nx.cross_entropy(mlm_logits(H, rows, cols, params, cfg, lengths), np.asarray(targets))


def cls_regression(H: Union[EncoderOutput, Tensor], params: ParameterStore, cfg: ModelConfig,
                   training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Sentiment score per row from the ``[CLS]`` hidden state; unclamped."""
    hidden = H.hidden if isinstance(H, EncoderOutput) else H
    cls = hidden[:, 0] if hidden.ndim == 3 else hidden
    p = params
    z = nx.gelu(nx.linear(cls, p["head.dense.W"], p["head.dense.b"]))
    z = nx.dropout(z, cfg.dropout_p, rng, training)
    y = nx.linear(z, p["head.out.W"], p["head.out.b"])  # (B, 1)
    return nx.reshape(y, (y.shape[0],))
