"""Command-line entry point.

Verbs: pretrain, finetune, evaluate, export-attention, param-count, synth-data.
Exit codes: 0 success, 1 validation error, 2 runtime failure (non-finite
values, I/O, corrupt checkpoints).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .counting import TwoTowerShape, count_params, saving
from .data import SynthSpec, export_splits_csv, load_manifest, select_split, synth_dataset
from .errors import IntegrityError, NonFiniteError, SpeechPrefixError, ValidationError
from .metrics import evaluate
from .params import init_params
from .runconfig import load_config_doc, resolve
from .training import (AdamW, TrainingState, collate, evaluate_items, load_checkpoint, prepare_examples,
                       regression_forward, run_finetuning, run_pretraining, save_checkpoint, start_finetune)
from .vocab import build_vocab

log = logging.getLogger("speechprefix")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
LOSS_HEADER = ("step", "lr", "loss")


class _UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _write_json(path: Path, obj) -> None:
    path.write_text(_dump(obj) + "\n", encoding="utf-8")


def _load_split(manifest: Optional[str], split: str):
    if manifest is None:
        raise ValidationError("no manifest given (use --manifest or data.manifest=...)")
    examples = select_split(load_manifest(manifest), split)
    if not examples:
        raise ValidationError(f"split {split!r} is absent from manifest {manifest}")
    return examples


class _LossLog:
    """``step,lr,loss`` CSV; skipped steps leave the loss empty."""

    def __init__(self, path: Path):
        self.fh = path.open("w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(LOSS_HEADER)

    def __call__(self, res) -> None:
        self.writer.writerow([res.step, repr(float(res.lr)), "" if res.loss is None else repr(float(res.loss))])

    def close(self) -> None:
        self.fh.close()


def _ckpt_name(step: int) -> str:
    return f"step_{step:06d}"


# ------------------------------------------------------------------ commands

def cmd_pretrain(args) -> int:
    doc = load_config_doc(args.config, args.overrides, "pretrain")
    if args.manifest:
        doc.setdefault("data", {})["manifest"] = args.manifest
    if args.checkpoint_every is not None:
        doc.setdefault("pretrain", {})["checkpoint_every"] = args.checkpoint_every
    if args.steps is not None:
        doc.setdefault("pretrain", {})["total_steps"] = args.steps
    run = resolve(doc, "pretrain")
    train = list(_load_split(run.manifest, "train"))
    vocab = build_vocab([ex.text for ex in train])
    run.model = replace(run.model, vocab_size=len(vocab))
    params = init_params(run.model, run.conv, run.seed)
    items = prepare_examples(train, vocab, params, run.conv, run.model)

    out = Path(args.out)
    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    resolved = run.to_dict()
    _write_json(out / "config.json", resolved)
    state = TrainingState(run.model, run.conv, params, vocab, np.random.default_rng([run.seed, 1]),
                          AdamW(run.train), 0, "pretrain", resolved)
    save_checkpoint(state, ckdir / _ckpt_name(0))
    loss_log = _LossLog(out / "loss.csv")
    try:
        run_pretraining(state, items, run.train, run.masking, on_step=loss_log,
                        on_checkpoint=lambda s: save_checkpoint(s, ckdir / _ckpt_name(s.step)))
    except NonFiniteError as exc:
        loss_log.close()
        partial = ckdir / (_ckpt_name(state.step) + ".partial")
        save_checkpoint(state, partial)
        (out / ".failed").write_text(f"step {state.step + 1}: {exc}\n", encoding="utf-8")
        (partial / ".failed").write_text(f"step {state.step + 1}: {exc}\n", encoding="utf-8")
        log.error("pretraining aborted at step %d: %s (partial state in %s)", state.step + 1, exc, partial)
        return EXIT_RUNTIME
    loss_log.close()
    save_checkpoint(state, ckdir / "final")
    log.info("pretraining finished at step %d; checkpoints in %s", state.step, ckdir)
    return EXIT_OK


def cmd_finetune(args) -> int:
    doc = load_config_doc(args.config, args.overrides, "finetune")
    if args.manifest:
        doc.setdefault("data", {})["manifest"] = args.manifest
    if args.freeze is not None:
        doc["freeze"] = args.freeze
    if args.epochs is not None:
        doc.setdefault("finetune", {})["epochs"] = args.epochs
    if args.zero_prefixes:
        doc["zero_prefixes"] = True
    run = resolve(doc, "finetune")
    expect = replace(run.model, vocab_size=_stored_vocab_size(args.init)) if "model" in doc else None
    pretrained = load_checkpoint(args.init, expect_model=expect, train_cfg=run.train)
    run.model, run.conv = pretrained.model_cfg, pretrained.conv_cfg
    if run.manifest is None:
        run.manifest = pretrained.run_config.get("data", {}).get("manifest")
    train = _load_split(run.manifest, "train")
    valid = _load_split(run.manifest, "valid")
    prep = lambda exs: prepare_examples(exs, pretrained.vocab, pretrained.params, run.conv, run.model)
    train_items, valid_items = prep(train), prep(valid)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {**run.to_dict(), "init": str(Path(args.init))}
    _write_json(out / "config.json", resolved)
    state = start_finetune(pretrained, run.train)
    state.run_config = resolved
    loss_log = _LossLog(out / "loss.csv")
    try:
        result = run_finetuning(state, train_items, valid_items, run.train, run.freeze, run.zero_prefixes,
                                on_step=loss_log)
    except NonFiniteError as exc:
        loss_log.close()
        (out / ".failed").write_text(f"step {state.step + 1}: {exc}\n", encoding="utf-8")
        log.error("fine-tuning aborted at step %d: %s", state.step + 1, exc)
        return EXIT_RUNTIME
    loss_log.close()
    best = TrainingState(run.model, run.conv, result.best_params, pretrained.vocab, state.rng, None,
                         state.step, "finetune", {**resolved, "best_epoch": result.best_epoch})
    save_checkpoint(best, out / "model")
    report = result.best_report or evaluate_items(result.best_params, run.model, valid_items, run.zero_prefixes)
    (out / "eval_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    log.info("best epoch %d: valid %s", result.best_epoch, report)
    return EXIT_OK


def _stored_vocab_size(path) -> int:
    try:
        return len(json.loads((Path(path) / "vocab.json").read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise IntegrityError(f"checkpoint file missing: {Path(path) / 'vocab.json'}") from None


def _read_predictions(path) -> dict:
    """CSV with columns ``id`` and ``prediction``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "prediction"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: predictions CSV needs columns 'id' and 'prediction'")
        return {row["id"]: float(row["prediction"]) for row in reader}


def cmd_evaluate(args) -> int:
    if (args.model is None) == (args.predictions is None):
        raise ValidationError("give exactly one of --model or --predictions")
    state = load_checkpoint(args.model) if args.model else None
    manifest = args.manifest
    if manifest is None and state is not None:
        manifest = state.run_config.get("data", {}).get("manifest")
    examples = _load_split(manifest, args.split)
    gold = [ex.label for ex in examples]
    if state is not None:
        zero = args.zero_prefixes or bool(state.run_config.get("zero_prefixes", False))
        items = prepare_examples(examples, state.vocab, state.params, state.conv_cfg, state.model_cfg)
        report = evaluate_items(state.params, state.model_cfg, items, zero)
    else:
        preds = _read_predictions(args.predictions)
        missing = [ex.id for ex in examples if ex.id not in preds]
        if missing:
            raise ValidationError(f"predictions missing for {len(missing)} examples, e.g. {missing[:3]}")
        report = evaluate([preds[ex.id] for ex in examples], gold)
    text = report.to_json()
    sys.stdout.write(text + "\n")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(text + "\n", encoding="utf-8")
        _write_json(out / "config.json", {"model": args.model, "predictions": args.predictions,
                                          "manifest": manifest, "split": args.split})
    return EXIT_OK


def _write_matrix(path: Path, rows: Sequence[str], cols: Sequence[str], M: np.ndarray) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *cols])
        for label, values in zip(rows, M):
            w.writerow([label, *(f"{float(v):.9g}" for v in values)])


def cmd_export_attention(args) -> int:
    state = load_checkpoint(args.model)
    manifest = args.manifest or state.run_config.get("data", {}).get("manifest")
    if manifest is None:
        raise ValidationError("no manifest given (use --manifest)")
    by_id = {ex.id: ex for ex in load_manifest(manifest)}
    if args.example_id not in by_id:
        raise ValidationError(f"unknown example id {args.example_id!r} in {manifest}")
    item = prepare_examples([by_id[args.example_id]], state.vocab, state.params, state.conv_cfg, state.model_cfg)[0]
    batch = collate([item])
    zero = bool(state.run_config.get("zero_prefixes", False))
    _, pp, H = regression_forward(batch, state.params, state.model_cfg, False, None, zero)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    T = pp.alphas.shape[2]
    frames = [f"frame_{t}" for t in range(T)]
    _write_matrix(out / "laa_alpha.csv", ["prefix_1", "prefix_2"], frames, pp.alphas[0])

    words = state.vocab.decode(item.tokens[1:-1])
    labels = ["[CLS]", "prefix_1", "prefix_2", *words, "[SEP]"]
    keep = np.arange(len(labels))
    if args.drop_specials:
        keep = keep[1:-1]
    shown = [labels[i] for i in keep]
    for layer, A in enumerate(H.attentions):
        for head in range(A.shape[1]):
            M = A[0, head][np.ix_(keep, keep)]
            _write_matrix(out / f"encoder_attn_L{layer}_H{head}.csv", shown, shown, M)
    _write_json(out / "config.json", {"model": args.model, "manifest": manifest, "example_id": args.example_id,
                                      "drop_specials": bool(args.drop_specials)})
    return EXIT_OK


def cmd_param_count(args) -> int:
    doc = load_config_doc(args.config, args.overrides)
    if args.profile:
        doc.setdefault("model", {})["profile"] = args.profile
    elif args.config is None:
        doc.setdefault("model", {}).setdefault("profile", "base")
    run = resolve(doc)
    ours = count_params(run.model, "prefixed", run.conv)
    result = {"model": run.model.to_dict(), "prefixed": ours.to_dict()}
    lines = [f"{'partition':<18}{'parameters':>16}"]
    lines += [f"{name:<18}{n:>16,}" for name, n in ours.partitions.items()]
    lines.append(f"{'total':<18}{ours.total:>16,}")
    lines.append(f"{'trainable':<18}{ours.trainable:>16,}")
    lines.append(f"{'mlm_head':<18}{ours.pretrain_only:>16,}  (pretraining only, not in total)")
    if args.compare:
        other = count_params(run.model, "two-tower", run.conv, TwoTowerShape())
        frac = saving(ours, other)
        result["two-tower"] = other.to_dict()
        result["saving"] = frac
        lines.append("")
        lines.append(f"{'two-tower':<18}{'parameters':>16}")
        lines += [f"{name:<18}{n:>16,}" for name, n in other.partitions.items()]
        lines.append(f"{'total':<18}{other.total:>16,}")
        lines.append(f"saving: {100 * frac:.1f}%")
    sys.stdout.write((_dump(result) if args.json else "\n".join(lines)) + "\n")
    return EXIT_OK


def cmd_synth_data(args) -> int:
    spec = SynthSpec(n=args.n, seed=args.seed, conflict_fraction=args.conflict_fraction,
                     duration_s=args.duration)
    out = Path(args.out)
    examples = synth_dataset(spec, out)
    export_splits_csv(out / "splits.csv", [replace(ex, audio=ex.audio.relative_to(out)) for ex in examples])
    _write_json(out / "config.json", {"synth": asdict(spec)})
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="speechprefix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run configuration")
            sp.add_argument("overrides", nargs="*", metavar="key=value",
                            help="dotted overrides, e.g. train.lr=1e-3 model.d=64")

    sp = sub.add_parser("pretrain", help="MaskedLM pretraining of the aggregation module")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--steps", type=int, help="total pretraining steps")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="regression fine-tuning from a pretraining checkpoint")
    common(sp)
    sp.add_argument("--init", required=True, help="checkpoint directory to start from")
    sp.add_argument("--out", required=True)
    sp.add_argument("--freeze", help="R, R+Att, R+Att+GRU, R+Att+GRU+Proj or ALL")
    sp.add_argument("--manifest")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--zero-prefixes", action="store_true", help="text-only ablation")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("evaluate", help="score a model or a predictions CSV; JSON to stdout")
    sp.add_argument("--model")
    sp.add_argument("--predictions", help="CSV with columns id,prediction")
    sp.add_argument("--manifest")
    sp.add_argument("--split", default="test")
    sp.add_argument("--zero-prefixes", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("export-attention", help="write aggregation and encoder attention as CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--example-id", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--drop-specials", action="store_true", help="drop [CLS] and [SEP] rows and columns")
    sp.set_defaults(func=cmd_export_attention)

    sp = sub.add_parser("param-count", help="closed-form parameter audit")
    common(sp)
    sp.add_argument("--profile", choices=("toy", "base"))
    sp.add_argument("--compare", choices=("two-tower",))
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_param_count)

    sp = sub.add_parser("synth-data", help="generate the synthetic tone/keyword corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--conflict-fraction", type=float, default=0.5)
    sp.add_argument("--duration", type=float, default=1.0, help="seconds per clip")
    sp.set_defaults(func=cmd_synth_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (NonFiniteError, IntegrityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SpeechPrefixError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
