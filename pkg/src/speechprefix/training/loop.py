"""Pretraining (only the aggregation module learns) and regression fine-tuning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import numerics as nx
from ..audio import ConvStackConfig, conv_frontend
from ..config import PREFIX_COUNT, ModelConfig
from ..data import LABEL_RANGE, Example
from ..encoder import assemble, cls_regression, encode, mlm_loss
from ..errors import ContractError, TruncationError
from ..laa import laa_forward
from ..metrics import EvalReport, evaluate
from ..params import ParameterStore
from ..vocab import Vocab, pad_batch
from .checkpoint import TrainingState
from .freeze import pretrain_trainable, resolve_freeze, trainable_ids
from .masking import MaskingPolicy, apply_mlm_mask
from .optim import AdamW, TrainConfig, lr_at

log = logging.getLogger(__name__)


@dataclass
class PreparedExample:
    id: str
    features: np.ndarray  # (T_A, d_A)
    tokens: np.ndarray    # [CLS] .. [SEP]
    label: float


@dataclass
class Batch:
    ids: list
    features: np.ndarray    # (B, T, d_A), zero padded
    frame_mask: np.ndarray  # (B, T)
    tokens: np.ndarray      # (B, L_tok), [PAD] padded
    labels: np.ndarray      # (B,)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class StepResult:
    step: int
    lr: float
    loss: Optional[float]
    skipped: bool = False
    n_masked: int = 0


def prepare_examples(examples: Sequence[Example], vocab: Vocab, params: ParameterStore,
                     conv_cfg: ConvStackConfig, model_cfg: ModelConfig) -> list[PreparedExample]:
    """Run the frozen frontend once per example and tokenize the text."""
    weights = params.conv_weights()
    out = []
    for ex in examples:
        frames = conv_frontend(ex.waveform(), conv_cfg, weights).frames
        tokens = vocab.encode(ex.text)
        if len(tokens) + PREFIX_COUNT > model_cfg.max_positions:
            raise TruncationError(f"example {ex.id!r}: {len(tokens)} tokens plus prefixes exceed "
                                  f"max_positions={model_cfg.max_positions}")
        out.append(PreparedExample(ex.id, frames, tokens, ex.label))
    return out


def collate(items: Sequence[PreparedExample]) -> Batch:
    T = max(it.features.shape[0] for it in items)
    dA = items[0].features.shape[1]
    feats = np.zeros((len(items), T, dA), dtype=items[0].features.dtype)
    mask = np.zeros((len(items), T), dtype=bool)
    for i, it in enumerate(items):
        n = it.features.shape[0]
        feats[i, :n] = it.features
        mask[i, :n] = True
    tokens = pad_batch([it.tokens for it in items])
    labels = np.asarray([it.label for it in items], dtype=np.float64)
    return Batch([it.id for it in items], feats, mask, tokens, labels)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Example indices for 1-based ``step``: fresh permutation per epoch, a pure function of (seed, epoch)."""
    spe = steps_per_epoch(n, batch_size)
    epoch, within = divmod(step - 1, spe)
    perm = np.random.default_rng([seed, 1000 + epoch]).permutation(n)
    return perm[within * batch_size:(within + 1) * batch_size]


def _prefixes(batch: Batch, params, cfg, training, rng):
    return laa_forward(batch.features, params, cfg, training=training, rng=rng, frame_mask=batch.frame_mask)


def pretrain_step(batch: Batch, params: ParameterStore, opt: AdamW, cfg: ModelConfig,
                  policy: MaskingPolicy, rng: np.random.Generator, lr: float, step: int = 0) -> StepResult:
    """MaskedLM on the text slots; gradients and updates reach the aggregation module only."""
    masked = apply_mlm_mask(batch.tokens, policy, rng, cfg.vocab_size)
    if masked.n_selected == 0:
        log.info("pretrain step %d: no token selected for masking; step skipped", step)
        return StepResult(step, lr, None, skipped=True)
    with nx.Graph() as graph:
        pp = _prefixes(batch, params, cfg, True, rng)
        x = assemble(masked.ids, pp, params, cfg)
        H = encode(x, params, cfg, training=True, rng=rng)
        loss = mlm_loss(H, masked.rows, masked.cols, masked.targets, params, cfg, x.lengths)
    grads = nx.backward(graph, loss, pretrain_trainable(params))
    opt.step(params, grads, lr)
    return StepResult(step, lr, loss.item(), n_masked=masked.n_selected)


def regression_forward(batch: Batch, params: ParameterStore, cfg: ModelConfig, training: bool = False,
                       rng: Optional[np.random.Generator] = None, zero_prefixes: bool = False):
    pp = _prefixes(batch, params, cfg, training, rng)
    x = assemble(batch.tokens, pp, params, cfg, zero_prefixes=zero_prefixes)
    H = encode(x, params, cfg, training=training, rng=rng)
    return cls_regression(H, params, cfg, training=training, rng=rng), pp, H


def finetune_step(batch: Batch, params: ParameterStore, opt: AdamW, cfg: ModelConfig, freeze: str,
                  rng: np.random.Generator, lr: float, step: int = 0, zero_prefixes: bool = False) -> StepResult:
    """MSE regression on [CLS]; only the freeze configuration's parameters move."""
    y = batch.labels
    if np.any((y < LABEL_RANGE[0]) | (y > LABEL_RANGE[1])):
        raise ContractError(f"labels must lie in [-3, 3]; got range [{y.min()}, {y.max()}]")
    with nx.Graph() as graph:
        pred, _, _ = regression_forward(batch, params, cfg, True, rng, zero_prefixes)
        loss = nx.mse_loss(pred, y.astype(pred.dtype))
    grads = nx.backward(graph, loss, trainable_ids(params, freeze))
    opt.step(params, grads, lr)
    return StepResult(step, lr, loss.item())


def predict(params: ParameterStore, cfg: ModelConfig, items: Sequence[PreparedExample],
            batch_size: int = 64, zero_prefixes: bool = False) -> np.ndarray:
    out = []
    for start in range(0, len(items), batch_size):
        batch = collate(items[start:start + batch_size])
        pred, _, _ = regression_forward(batch, params, cfg, False, None, zero_prefixes)
        out.append(pred.data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_items(params, cfg, items, zero_prefixes: bool = False) -> EvalReport:
    pred = predict(params, cfg, items, zero_prefixes=zero_prefixes)
    return evaluate(pred, [it.label for it in items])


def run_pretraining(state: TrainingState, items: Sequence[PreparedExample], cfg: TrainConfig,
                    policy: MaskingPolicy,
                    on_step: Optional[Callable[[StepResult], None]] = None,
                    on_checkpoint: Optional[Callable[[TrainingState], None]] = None,
                    until: Optional[int] = None) -> list[StepResult]:
    """Continue pretraining from ``state.step`` to ``cfg.total_steps`` (or ``until``)."""
    if cfg.total_steps is None:
        raise ContractError("pretraining needs train.total_steps")
    if state.opt is None:
        state.opt = AdamW(cfg)
    total = cfg.total_steps
    stop = total if until is None else min(until, total)
    results = []
    while state.step < stop:
        step = state.step + 1
        batch = collate([items[i] for i in batch_indices(len(items), cfg.batch_size, cfg.seed, step)])
        lr = lr_at(step, cfg.lr, total, cfg.warmup_frac)
        res = pretrain_step(batch, state.params, state.opt, state.model_cfg, policy, state.rng, lr, step)
        state.step = step
        results.append(res)
        if on_step is not None:
            on_step(res)
        if on_checkpoint is not None and ((cfg.checkpoint_every and step % cfg.checkpoint_every == 0) or step == total):
            on_checkpoint(state)
    return results


@dataclass
class FinetuneResult:
    best_params: ParameterStore
    best_epoch: int
    best_report: Optional[EvalReport]
    history: list = field(default_factory=list)
    epoch_reports: list = field(default_factory=list)


def start_finetune(pretrained: TrainingState, cfg: TrainConfig) -> TrainingState:
    """Fresh optimiser, RNG and step counter on a copy of the pretrained parameters."""
    return TrainingState(pretrained.model_cfg, pretrained.conv_cfg, pretrained.params.copy(), pretrained.vocab,
                         np.random.default_rng([cfg.seed, 2]), AdamW(cfg), 0, "finetune",
                         dict(pretrained.run_config))


def run_finetuning(state: TrainingState, train: Sequence[PreparedExample], valid: Sequence[PreparedExample],
                   cfg: TrainConfig, freeze: str, zero_prefixes: bool = False,
                   on_step: Optional[Callable[[StepResult], None]] = None) -> FinetuneResult:
    """Train ``cfg.epochs`` epochs; keep the parameters with the lowest validation MAE."""
    freeze = resolve_freeze(freeze)
    if cfg.epochs is None:
        raise ContractError("fine-tuning needs train.epochs")
    if state.opt is None:
        state.opt = AdamW(cfg)
    spe = steps_per_epoch(len(train), cfg.batch_size)
    total = cfg.epochs * spe
    history, reports = [], []
    best = FinetuneResult(state.params.copy(), 0, None)
    while state.step < total:
        step = state.step + 1
        batch = collate([train[i] for i in batch_indices(len(train), cfg.batch_size, cfg.seed, step)])
        lr = lr_at(step, cfg.lr, total, cfg.warmup_frac)
        res = finetune_step(batch, state.params, state.opt, state.model_cfg, freeze, state.rng, lr, step,
                            zero_prefixes)
        state.step = step
        history.append(res)
        if on_step is not None:
            on_step(res)
        if step % spe == 0 and valid:
            report = evaluate_items(state.params, state.model_cfg, valid, zero_prefixes)
            reports.append(report)
            if best.best_report is None or report.mae < best.best_report.mae:
                best = FinetuneResult(state.params.copy(), step // spe, report)
    if not valid:
        best = FinetuneResult(state.params.copy(), cfg.epochs, None)
    best.history, best.epoch_reports = history, reports
    return best
