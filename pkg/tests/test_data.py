import json

import numpy as np
import pytest

from speechprefix.audio import load_wav
from speechprefix.data import (NEGATIVE_WORDS, POSITIVE_WORDS, Example, SynthSpec, export_splits_csv,
                               load_manifest, select_split, synth_dataset, synth_example, write_manifest)
from speechprefix.errors import ValidationError
from speechprefix.vocab import CLS_ID, N_SPECIAL, SEP_ID, SPECIALS, UNK_ID, Vocab, build_vocab, pad_batch


# ------------------------------------------------------------------ vocab

def test_reserved_ids():
    assert SPECIALS == ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "<unk>")
    v = build_vocab(["a b", "a"])
    assert [v.stoi[s] for s in SPECIALS] == [0, 1, 2, 3, 4]
    assert v.stoi["a"] == N_SPECIAL and v.stoi["b"] == N_SPECIAL + 1


def test_ties_lexicographic_and_deterministic():
    corpus = ["zeta beta", "alpha beta", "zeta"]
    v = build_vocab(corpus)
    assert v.itos[N_SPECIAL:] == ["beta", "zeta", "alpha"]
    assert build_vocab(corpus) == v


def test_encode_with_unknown_and_lowercase():
    v = build_vocab(["good film"])
    ids = v.encode("Good MOVIE")
    assert ids[0] == CLS_ID and ids[-1] == SEP_ID
    assert ids[1] == v.stoi["good"] and ids[2] == UNK_ID


def test_empty_corpus_rejected():
    with pytest.raises(ValidationError):
        build_vocab([])


def test_vocab_json_roundtrip(tmp_path):
    v = build_vocab(["x y z", "y"])
    v.save(tmp_path / "v.json")
    assert Vocab.load(tmp_path / "v.json") == v


def test_pad_batch():
    out = pad_batch([np.array([1, 5, 2]), np.array([1, 2])])
    np.testing.assert_array_equal(out, [[1, 5, 2], [1, 2, 0]])


# --------------------------------------------------------------- manifests

def _write(tmp_path, lines, make_audio=True):
    if make_audio:
        from speechprefix.audio import write_wav
        write_wav(tmp_path / "a.wav", np.zeros(800))
    path = tmp_path / "m.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in lines))
    return path


def _rec(i, label=1.0, split="train"):
    return {"id": f"e{i}", "audio": "a.wav", "text": "some text", "label": label, "split": split}


def test_manifest_three_lines(tmp_path):
    exs = load_manifest(_write(tmp_path, [_rec(0), _rec(1, -2.0, "valid"), _rec(2, 0.0, "test")]))
    assert len(exs) == 3
    assert exs[0].audio == tmp_path / "a.wav"
    assert [e.split for e in exs] == ["train", "valid", "test"]


def test_manifest_label_out_of_range_names_line(tmp_path):
    with pytest.raises(ValidationError, match=":2:"):
        load_manifest(_write(tmp_path, [_rec(0), _rec(1, 4.2)]))


def test_manifest_duplicate_and_missing(tmp_path):
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(_write(tmp_path, [_rec(0), _rec(0)]))
    with pytest.raises(ValidationError, match="missing"):
        load_manifest(_write(tmp_path, [{"id": "x"}]))
    rec = _rec(3)
    rec["audio"] = "nope.wav"
    with pytest.raises(FileNotFoundError):
        load_manifest(_write(tmp_path, [rec]))


def test_manifest_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "m.jsonl"
    path.write_text("")
    assert load_manifest(path) == []
    assert "no examples" in caplog.text


def test_manifest_roundtrip(tmp_path):
    exs = load_manifest(_write(tmp_path, [_rec(0, -0.5), _rec(1, 3.0, "test")]))
    write_manifest(tmp_path / "copy.jsonl", exs)
    back = load_manifest(tmp_path / "copy.jsonl")
    assert [(e.id, e.audio, e.text, e.label, e.split, e.meta) for e in back] == \
           [(e.id, e.audio, e.text, e.label, e.split, e.meta) for e in exs]


def test_example_validation():
    with pytest.raises(ValidationError):
        Example("x", "a.wav", "t", 3.5, "train")
    with pytest.raises(ValidationError):
        Example("x", "a.wav", "t", 0.0, "dev")
    with pytest.raises(ValidationError):
        select_split([], "dev")


# ------------------------------------------------------------- synthetic

def test_sign_balance():
    spec = SynthSpec(n=1000, seed=0)
    labels = np.array([synth_example(spec, i)[2] for i in range(spec.n)])
    assert abs((labels > 0).mean() - 0.5) < 0.05


def _keyword_oracle_acc(spec):
    correct = 0
    for i in range(spec.n):
        _, text, label, _ = synth_example(spec, i)
        words = set(text.split())
        guess = 1 if words & set(POSITIVE_WORDS) else -1
        assert bool(words & set(POSITIVE_WORDS)) != bool(words & set(NEGATIVE_WORDS))
        correct += np.sign(label) == guess
    return correct / spec.n


@pytest.mark.parametrize("cf", [0.0, 0.5, 1.0])
def test_text_only_ceiling(cf):
    acc = _keyword_oracle_acc(SynthSpec(n=1000, seed=1, conflict_fraction=cf))
    assert abs(acc - (1 - cf / 2)) < 0.03
    if cf == 0.0:
        assert acc == 1.0


def test_label_follows_tone_with_two_magnitudes():
    spec = SynthSpec(n=300, seed=2)
    for i in range(spec.n):
        _, _, label, meta = synth_example(spec, i)
        assert np.sign(label) == meta["tone_sign"]
        assert abs(label) == (2.0 if meta["tone_sign"] == meta["keyword_sign"] else 0.5)


def test_tone_recoverable_by_fft(tmp_path):
    spec = SynthSpec(n=200, seed=4)
    correct = 0
    for i in range(spec.n):
        x, _, label, _ = synth_example(spec, i)
        freqs = np.fft.rfftfreq(len(x), 1 / 16000)
        peak = freqs[np.argmax(np.abs(np.fft.rfft(x)))]
        correct += (1 if abs(peak - 440) < abs(peak - 220) else -1) == np.sign(label)
    assert correct / spec.n >= 0.99


def test_synth_dataset_deterministic(tmp_path):
    spec = SynthSpec(n=12, seed=5)
    a = synth_dataset(spec, tmp_path / "a")
    b = synth_dataset(spec, tmp_path / "b")
    for ea, eb in zip(a, b):
        assert ea.audio.read_bytes() == eb.audio.read_bytes()
        assert (ea.label, ea.text, ea.split) == (eb.label, eb.text, eb.split)
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()
    w = load_wav(a[0].audio)
    assert len(w) == 16000
    back = load_manifest(tmp_path / "a" / "manifest.jsonl")
    assert [e.id for e in back] == sorted(e.id for e in back)


def test_split_fractions(tmp_path):
    exs = synth_dataset(SynthSpec(n=50, seed=0), tmp_path)
    counts = {s: len(select_split(exs, s)) for s in ("train", "valid", "test")}
    assert counts == {"train": 40, "valid": 5, "test": 5}


def test_splits_csv(tmp_path):
    exs = synth_dataset(SynthSpec(n=5, seed=0), tmp_path)
    export_splits_csv(tmp_path / "s.csv", exs)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "id,split,label,text,audio" and len(lines) == 6


def test_spec_validation():
    with pytest.raises(ValidationError):
        SynthSpec(conflict_fraction=1.5)
