"""Sentiment regression metrics: MAE, Pearson r, non-zero binary accuracy/F1, Acc7."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, NoEvaluableExamplesError, UndefinedCorrelationError


def _pair(pred, gold, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gold, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise ContractError(f"prediction/gold length mismatch: {p.size} vs {g.size}")
    if p.size < min_len:
        raise ContractError(f"need at least {min_len} examples, got {p.size}")
    return p, g


def mae(pred, gold) -> float:
    p, g = _pair(pred, gold)
    return float(np.mean(np.abs(p - g)))


def pearson(pred, gold) -> float:
    p, g = _pair(pred, gold, min_len=2)
    pc, gc = p - p.mean(), g - g.mean()
    sp, sg = math.sqrt(float(pc @ pc)), math.sqrt(float(gc @ gc))
    if sp == 0.0 or sg == 0.0:
        raise UndefinedCorrelationError("Pearson correlation is undefined for a constant input")
    return float(np.clip((pc @ gc) / (sp * sg), -1.0, 1.0))


def binary_scores(pred, gold) -> tuple[float, float, int]:
    """(acc2, positive-class F1, n_nonzero) over examples whose gold label is non-zero."""
    p, g = _pair(pred, gold)
    keep = g != 0.0
    if not keep.any():
        raise NoEvaluableExamplesError("every gold label is zero; binary scores are undefined")
    pp, gp = p[keep] > 0, g[keep] > 0
    acc = float(np.mean(pp == gp))
    tp = int(np.sum(pp & gp))
    fp = int(np.sum(pp & ~gp))
    fn = int(np.sum(~pp & gp))
    f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
    return acc, float(f1), int(keep.sum())


def seven_class(x) -> np.ndarray:
    """Round half away from zero, then clamp to [-3, 3]."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), -3, 3).astype(np.int64)


def acc7(pred, gold) -> float:
    p, g = _pair(pred, gold)
    return float(np.mean(seven_class(p) == seven_class(g)))


@dataclass
class EvalReport:
    mae: float
    corr: Optional[float]
    acc2: Optional[float]
    f1: Optional[float]
    acc7: float
    n_total: int
    n_nonzero: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def evaluate(pred: Sequence[float], gold: Sequence[float]) -> EvalReport:
    p, g = _pair(pred, gold)
    try:
        corr: Optional[float] = pearson(p, g)
    except (UndefinedCorrelationError, ContractError):
        corr = None
    try:
        acc2, f1, n_nonzero = binary_scores(p, g)
    except NoEvaluableExamplesError:
        acc2 = f1 = None
        n_nonzero = 0
    return EvalReport(mae=mae(p, g), corr=corr, acc2=acc2, f1=f1, acc7=acc7(p, g),
                      n_total=int(p.size), n_nonzero=n_nonzero)
