"""Pretraining and fine-tuning loops, masking, optimisation and checkpoints."""
from .checkpoint import FORMAT_VERSION, TrainingState, load_checkpoint, save_checkpoint
from .freeze import DEFAULT_FREEZE, FREEZE_GROUPS, FREEZE_NAMES, pretrain_trainable, resolve_freeze, trainable_ids
from .loop import (Batch, FinetuneResult, PreparedExample, StepResult, batch_indices, collate, evaluate_items,
                   finetune_step, predict, prepare_examples, pretrain_step, regression_forward, run_finetuning,
                   run_pretraining, start_finetune, steps_per_epoch)
from .masking import MaskedBatch, MaskingPolicy, apply_mlm_mask, eligible_positions
from .optim import AdamW, TrainConfig, adamw_update, finetune_defaults, lr_at, pretrain_defaults

__all__ = [name for name in dir() if not name.startswith("_")]
