"""AdamW with decoupled weight decay and a warmup + cosine schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Optional

import numpy as np

from ..errors import NonFiniteError, ValidationError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimisation settings for one loop.

    ``lr`` is the peak rate.  2e-5 suits a 125M-parameter encoder; toy
    profiles use around 1e-3.  Set ``total_steps`` for step-based loops
    (pretraining) or ``epochs`` for epoch-based ones (fine-tuning).
    """

    lr: float = 2e-5
    warmup_frac: float = 0.1
    total_steps: Optional[int] = None
    epochs: Optional[int] = None
    batch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValidationError(f"warmup_frac must lie in [0, 1), got {self.warmup_frac}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.lr < 0:
            raise ValidationError("lr must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def pretrain_defaults(**overrides) -> TrainConfig:
    base = dict(lr=2e-5, warmup_frac=0.1, total_steps=8000, batch_size=32, checkpoint_every=2000)
    base.update(overrides)
    return TrainConfig(**base)


def finetune_defaults(**overrides) -> TrainConfig:
    base = dict(lr=2e-5, warmup_frac=0.1, epochs=3, batch_size=16)
    base.update(overrides)
    return TrainConfig(**base)


def lr_at(step: int, peak: float, total_steps: int, warmup_frac: float) -> float:
    """Linear warmup to ``peak`` over ``warmup_frac * total_steps``, then cosine to 0."""
    if step > total_steps:
        log.warning("step %d is past the schedule end %d; learning rate clamped to 0", step, total_steps)
        return 0.0
    if step < 0:
        raise ValidationError("step must be non-negative")
    warm = warmup_frac * total_steps
    if step < warm:
        return peak * step / warm
    if total_steps <= warm:
        return peak
    progress = (step - warm) / (total_steps - warm)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_update(param: np.ndarray, grad: np.ndarray, moments: tuple, lr: float, step: int,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01) -> tuple[np.ndarray, tuple]:
    """One AdamW step.  ``step`` is 1-based; returns (new_param, (m, v))."""
    if not np.isfinite(grad).all():
        raise NonFiniteError("non-finite gradient")
    dt = param.dtype
    m, v = moments
    m = (beta1 * m + (1 - beta1) * grad).astype(dt, copy=False)
    v = (beta2 * v + (1 - beta2) * grad * grad).astype(dt, copy=False)
    m_hat = m / dt.type(1 - beta1 ** step)
    v_hat = v / dt.type(1 - beta2 ** step)
    new = param * dt.type(1 - lr * weight_decay)
    new = new - dt.type(lr) * m_hat / (np.sqrt(v_hat) + dt.type(eps))
    return new.astype(dt, copy=False), (m, v)


class AdamW:
    """Moment buffers keyed by parameter id plus a shared step counter."""

    def __init__(self, cfg: TrainConfig):
        self.beta1, self.beta2 = cfg.beta1, cfg.beta2
        self.eps, self.weight_decay = cfg.eps, cfg.weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads: Mapping[str, np.ndarray], lr: float) -> None:
        bad = [pid for pid, g in grads.items() if not np.isfinite(g).all()]
        if bad:
            raise NonFiniteError(f"non-finite gradients for {bad[:5]}{'...' if len(bad) > 5 else ''}; step aborted")
        self.t += 1
        for pid in sorted(grads):
            p = params[pid]
            m = self.m.get(pid)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[pid] = np.zeros_like(p.data)
            p.data, (self.m[pid], self.v[pid]) = adamw_update(
                p.data, grads[pid], (m, self.v[pid]), lr, self.t,
                self.beta1, self.beta2, self.eps, self.weight_decay)
