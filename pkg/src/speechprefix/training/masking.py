"""MaskedLM corruption restricted to lexical tokens."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import PREFIX_COUNT
from ..errors import ValidationError
from ..vocab import CLS_ID, MASK_ID, N_SPECIAL, PAD_ID, SEP_ID

_NEVER_MASK = (PAD_ID, CLS_ID, SEP_ID, MASK_ID)


@dataclass
class MaskingPolicy:
    mask_prob: float = 0.15
    sub_probs: tuple = (0.8, 0.1, 0.1)  # [MASK], random token, unchanged

    def __post_init__(self):
        self.sub_probs = tuple(float(p) for p in self.sub_probs)
        if len(self.sub_probs) != 3 or abs(sum(self.sub_probs) - 1.0) > 1e-9 or min(self.sub_probs) < 0:
            raise ValidationError(f"masking sub_probs must be three non-negative values summing to 1, got {self.sub_probs}")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValidationError(f"mask_prob must lie in [0, 1], got {self.mask_prob}")


@dataclass
class MaskedBatch:
    ids: np.ndarray       # corrupted token ids, same shape as the input
    rows: np.ndarray      # batch row of each selected position
    cols: np.ndarray      # selected positions in assembled coordinates
    targets: np.ndarray   # original ids at those positions
    kinds: np.ndarray = field(default=None)  # 0 mask, 1 random, 2 kept

    @property
    def n_selected(self) -> int:
        return int(self.rows.size)

    def label_map(self) -> dict:
        return {(int(r), int(c)): int(t) for r, c, t in zip(self.rows, self.cols, self.targets)}


def eligible_positions(ids: np.ndarray) -> np.ndarray:
    return ~np.isin(ids, _NEVER_MASK)


def token_to_assembled(positions: np.ndarray) -> np.ndarray:
    """Token-sequence index -> assembled index (the prefixes sit after [CLS])."""
    positions = np.asarray(positions)
    return np.where(positions >= 1, positions + PREFIX_COUNT, positions)


def apply_mlm_mask(tokens, policy: MaskingPolicy, rng: np.random.Generator, vocab_size: int) -> MaskedBatch:
    """Select each lexical token with ``policy.mask_prob`` and corrupt it.

    ``tokens`` is one ``[CLS] .. [SEP]`` sequence or a right-padded batch.
    Returned positions are assembled indices, so [CLS] (0), the prefixes
    (1, 2), [SEP] and padding can never appear.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None]
    eligible = eligible_positions(ids)
    selected = eligible & (rng.random(ids.shape) < policy.mask_prob)
    u = rng.random(ids.shape)
    p_mask, p_rand, _ = policy.sub_probs
    to_mask = selected & (u < p_mask)
    to_rand = selected & (u >= p_mask) & (u < p_mask + p_rand)
    random_ids = rng.integers(N_SPECIAL, vocab_size, size=ids.shape) if vocab_size > N_SPECIAL else ids
    out = ids.copy()
    out[to_mask] = MASK_ID
    out[to_rand] = random_ids[to_rand]
    rows, tcols = np.nonzero(selected)
    kinds = np.where(to_mask[rows, tcols], 0, np.where(to_rand[rows, tcols], 1, 2))
    result = MaskedBatch(out[0] if squeeze else out, rows, token_to_assembled(tcols), ids[rows, tcols], kinds)
    return result
