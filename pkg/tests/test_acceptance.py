"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed together at the
end of the pytest run (see conftest.py) and immediately when run with -s.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from speechprefix.audio import ConvStackConfig, Waveform, conv_frontend
from speechprefix.cli import main as cli_main
from speechprefix.config import base_profile, toy_profile
from speechprefix.counting import count_params, saving
from speechprefix.data import SynthSpec, select_split, synth_dataset
from speechprefix.encoder import assemble, encode
from speechprefix.laa import laa_forward
from speechprefix.params import init_params, partition_of
from speechprefix.training import (FREEZE_NAMES, AdamW, MaskingPolicy, TrainConfig, TrainingState,
                                   apply_mlm_mask, collate, eligible_positions, evaluate_items, finetune_step,
                                   prepare_examples, run_finetuning, run_pretraining, start_finetune,
                                   trainable_ids)
from speechprefix.vocab import CLS_ID, N_SPECIAL, PAD_ID, SEP_ID, build_vocab

from helpers import (ACCEPTANCE_RESULTS, grad_errors, mlm_objective, random_batch, random_params,
                     regression_objective, tiny_model)


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {title}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert ok, line


# ----------------------------------------------------------------- 1

def test_criterion_01_gradients():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        cfg = tiny_model()
        params = random_params(cfg, seed)
        Z, fm, tok = random_batch(cfg, seed)
        rng = np.random.default_rng(seed)
        rows = np.array([0, 0, 1])
        cols = np.array([3, rng.integers(4, 7), 4])
        targets = rng.integers(N_SPECIAL, cfg.vocab_size, 3)
        y = rng.uniform(-3, 3, 2)
        mlm_pids = params.ids("theta_A") + params.ids("theta_LM")
        errs = grad_errors(lambda: mlm_objective(params, cfg, Z, fm, tok, rows, cols, targets), params, mlm_pids)
        reg_pids = params.ids("theta_h") + params.ids("theta_A")
        errs_r = grad_errors(lambda: regression_objective(params, cfg, Z, fm, tok, y), params, reg_pids)
        for pid, e in list(errs.items()) + list(errs_r.items()):
            worst[partition_of(pid)] = max(worst.get(partition_of(pid), 0.0), e)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 120
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in sorted(worst.items()))
    report(1, "finite-difference gradients (20 seeds)", ok, f"{detail}; {elapsed:.0f}s")


# ----------------------------------------------------------------- 2

def test_criterion_02_gradient_restriction(toy_setup):
    cfg, conv, params, vocab, items = toy_setup
    t0 = time.perf_counter()
    state = TrainingState(cfg, conv, params.copy(), vocab, np.random.default_rng([0, 1]), None)
    before = state.params.partition_digests()
    tc = TrainConfig(lr=1e-3, total_steps=100, batch_size=16)
    res = run_pretraining(state, items["train"], tc, MaskingPolicy())
    after = state.params.partition_digests()
    elapsed = time.perf_counter() - t0
    same = [k for k in ("theta_LM", "theta_W", "theta_h") if before[k] == after[k]]
    ok = len(same) == 3 and before["theta_A"] != after["theta_A"] and len(res) == 100 and elapsed < 60
    report(2, "pretraining moves only the aggregation module", ok,
           f"unchanged {same}, theta_A changed={before['theta_A'] != after['theta_A']}; {elapsed:.0f}s")


# ----------------------------------------------------------------- 3

def test_criterion_03_masking_statistics():
    rng = np.random.default_rng(0)
    policy = MaskingPolicy()
    V = 50
    n_elig = n_sel = 0
    kinds = np.zeros(3)
    while n_elig < 100_000:
        L = 40
        ids = rng.integers(N_SPECIAL, V, size=(64, L))
        ids[:, 0] = CLS_ID
        for b, n in enumerate(rng.integers(3, L + 1, size=64)):
            ids[b, n - 1] = SEP_ID
            ids[b, n:] = PAD_ID
        m = apply_mlm_mask(ids, policy, rng, V)
        n_elig += int(eligible_positions(ids).sum())
        n_sel += m.n_selected
        kinds += np.bincount(m.kinds, minlength=3)
    frac = n_sel / n_elig
    split = kinds / kinds.sum()

    violations = 0
    base = np.array([[CLS_ID, 7, 8, 9, 10, SEP_ID, PAD_ID, PAD_ID],
                     [CLS_ID, 5, 6, SEP_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]])
    lengths = (base != PAD_ID).sum(1) + 2
    for seed in range(10_000):
        m = apply_mlm_mask(base, MaskingPolicy(mask_prob=0.5), np.random.default_rng(seed), V)
        # assembled layout: [CLS]=0, prefixes 1-2, text 3 .. len-2, [SEP]=len-1, then padding
        violations += int(np.sum((m.cols < 3) | (m.cols >= lengths[m.rows] - 1)))
        for b in range(2):
            fixed = base[b] < N_SPECIAL
            violations += int(np.sum(m.ids[b][fixed] != base[b][fixed]))
    ok = (abs(frac - 0.15) <= 0.01 and np.all(np.abs(split - [0.8, 0.1, 0.1]) <= 0.02) and violations == 0)
    report(3, "MLM masking statistics", ok,
           f"{n_elig} eligible, selected {frac:.4f}, split {np.round(split, 4).tolist()}, "
           f"{violations} violations over 10k seeds")


# ------------------------------------------------------------- 4 and 5

@pytest.fixture(scope="module")
def synth2000(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth2000")
    examples = synth_dataset(SynthSpec(n=2000, seed=0, conflict_fraction=0.5), root)
    splits = {s: select_split(examples, s) for s in ("train", "valid", "test")}
    vocab = build_vocab([ex.text for ex in splits["train"]])
    conv = ConvStackConfig.profile("wav2vec2", channels=32)
    cfg = toy_profile(vocab_size=len(vocab))
    frontend = init_params(cfg, conv, seed=0)
    items = {s: prepare_examples(exs, vocab, frontend, conv, cfg) for s, exs in splits.items()}
    return cfg, conv, vocab, items


def _finetune(cfg, conv, vocab, params, items, seed, zero_prefixes=False):
    tc = TrainConfig(lr=1e-3, epochs=10, batch_size=16, seed=seed)
    state = start_finetune(TrainingState(cfg, conv, params, vocab, None, None), tc)
    return run_finetuning(state, items["train"], items["valid"], tc, "R+Att", zero_prefixes)


def test_criterion_04_fusion_benefit(synth2000):
    cfg, conv, vocab, items = synth2000
    t0 = time.perf_counter()
    bi, text = [], []
    for seed in range(3):
        params = init_params(cfg, conv, seed=seed)
        for zero, acc in ((False, bi), (True, text)):
            res = _finetune(cfg, conv, vocab, params, items, seed, zero)
            acc.append(evaluate_items(res.best_params, cfg, items["test"], zero).acc2)
    elapsed = time.perf_counter() - t0
    ok = np.mean(bi) >= 0.90 and np.mean(text) <= 0.80 and elapsed < 900
    report(4, "speech prefixes beat text only on conflict data", ok,
           f"test acc2 bimodal {np.mean(bi):.3f} {np.round(bi, 3).tolist()}, "
           f"text-only {np.mean(text):.3f} {np.round(text, 3).tolist()} (ceiling 0.75); {elapsed:.0f}s")


def test_criterion_05_pretraining_trend(synth2000):
    cfg, conv, vocab, items = synth2000
    t0 = time.perf_counter()
    marks = (0, 100, 200, 400)
    f1 = {k: [] for k in marks}
    for seed in range(3):
        pc = TrainConfig(lr=1e-3, total_steps=400, batch_size=16, seed=seed)
        state = TrainingState(cfg, conv, init_params(cfg, conv, seed=seed), vocab,
                              np.random.default_rng([seed, 1]), AdamW(pc))
        snaps = {}
        for k in marks:
            run_pretraining(state, items["train"], pc, MaskingPolicy(), until=k)
            snaps[k] = state.params.copy()
        for k in marks:
            f1[k].append(_finetune(cfg, conv, vocab, snaps[k], items, seed).best_report.f1)
    elapsed = time.perf_counter() - t0
    means = {k: float(np.mean(v)) for k, v in f1.items()}
    ok = means[400] >= means[0] and elapsed < 1800
    report(5, "fine-tuning from later pretraining checkpoints", ok,
           "mean valid F1 " + ", ".join(f"step {k}: {means[k]:.4f}" for k in marks) + f"; {elapsed:.0f}s")


# ----------------------------------------------------------------- 6

def test_criterion_06_freeze_contracts(toy_setup):
    cfg, conv, params, vocab, items = toy_setup
    batch = collate(items["train"][:8])
    sets, bad = [], []
    for name in FREEZE_NAMES:
        p = params.copy()
        snap = p.snapshot()
        finetune_step(batch, p, AdamW(TrainConfig()), cfg, name, np.random.default_rng(0), 1e-3, 1)
        changed = {pid for pid in snap if not np.array_equal(snap[pid], p[pid].data)}
        declared = trainable_ids(p, name)
        sets.append(changed)
        if changed != declared:
            bad.append(name)
    nested = all(a < b for a, b in zip(sets, sets[1:]))
    report(6, "freeze configurations", not bad and nested,
           f"sizes {[len(s) for s in sets]}, mismatches {bad}, strictly nested={nested}")


# ----------------------------------------------------------------- 7

def test_criterion_07_parameter_audit():
    cfg = base_profile()
    ours, other = count_params(cfg), count_params(cfg, "two-tower")
    ratio = ours.total / 133.4e6
    s = saving(ours, other)
    report(7, "parameter audit", abs(ratio - 1) <= 0.05 and s >= 0.70,
           f"total {ours.total:,} ({100 * (ratio - 1):+.2f}% vs 133.4M), two-tower {other.total:,}, "
           f"saving {100 * s:.1f}%")


# ----------------------------------------------------------------- 8

def test_criterion_08_sequence_length():
    cfg = toy_profile(vocab_size=20)
    params = init_params(cfg, ConvStackConfig.profile("wav2vec2", channels=cfg.d_A), seed=0)
    rng = np.random.default_rng(0)
    lengths = {}
    ok = True
    for T_L in (3, 9):
        tokens = np.concatenate([[CLS_ID], rng.integers(N_SPECIAL, 20, T_L), [SEP_ID]])
        for T_A in (1, 5, 49, 500):
            pp = laa_forward(rng.standard_normal((T_A, cfg.d_A)).astype(np.float32), params, cfg)
            x = assemble(tokens, pp, params, cfg)
            H = encode(x, params, cfg)
            n = x.embeddings.shape[1]
            ok &= n == T_L + 4 and H.hidden.shape[1] == n and H.attentions[0].shape[-1] == n
            lengths[(T_L, T_A)] = n
    report(8, "assembled length independent of audio length", ok,
           ", ".join(f"T_L={a} T_A={b}: {n}" for (a, b), n in lengths.items()))


# ----------------------------------------------------------------- 9

def test_criterion_09_frame_count():
    kernels, strides = (10, 3, 3, 3, 3, 2, 2), (5, 2, 2, 2, 2, 2, 2)
    n = 16000
    for k, s in zip(kernels, strides):
        n = (n - k) // s + 1
    conv = ConvStackConfig.profile("wav2vec2", channels=8)
    cfg = toy_profile(d_A=8)
    frames = conv_frontend(Waveform(np.zeros(16000, np.float32)), conv,
                           init_params(cfg, conv, seed=0).conv_weights()).frames
    T_A = frames.shape[0]
    report(9, "frame count for one second of audio", T_A == n == 49, f"frontend {T_A}, recurrence {n}")


# ---------------------------------------------------------------- 10

def _pipeline(root: Path, data: Path, tag: str):
    out = root / tag
    cfg = root / "toy.json"
    assert cli_main(["pretrain", "--config", str(cfg), "--out", str(out / "pre"), "--steps", "200",
                     "--manifest", str(data / "manifest.jsonl")]) == 0
    assert cli_main(["finetune", "--config", str(cfg), "--init", str(out / "pre" / "checkpoints" / "final"),
                     "--out", str(out / "ft"), "--epochs", "1"]) == 0
    assert cli_main(["evaluate", "--model", str(out / "ft" / "model"), "--out", str(out / "eval")]) == 0
    return [(out / "pre" / "loss.csv").read_bytes(), (out / "ft" / "loss.csv").read_bytes(),
            (out / "ft" / "eval_report.json").read_bytes(), (out / "eval" / "eval_report.json").read_bytes()]


def test_criterion_10_determinism(tmp_path, capsys):
    data = tmp_path / "data"
    assert cli_main(["synth-data", "--out", str(data), "--n", "200", "--seed", "0"]) == 0
    repo_cfg = Path(__file__).resolve().parents[1] / "configs" / "toy.json"
    (tmp_path / "toy.json").write_text(repo_cfg.read_text())
    a = _pipeline(tmp_path, data, "run_a")
    b = _pipeline(tmp_path, data, "run_b")
    capsys.readouterr()
    names = ["pretrain loss.csv", "finetune loss.csv", "finetune eval_report.json", "evaluate eval_report.json"]
    same = [n for n, x, y in zip(names, a, b) if x == y]
    ok = len(same) == 4 and len(a[0].splitlines()) == 201
    report(10, "end-to-end determinism", ok, f"byte-identical: {same}; report {json.loads(a[3])}")
