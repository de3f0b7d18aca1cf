"""Dataset manifests and the synthetic tone/keyword corpus."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .audio import SAMPLE_RATE, Waveform, load_wav, write_wav
from .errors import ValidationError

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
LABEL_RANGE = (-3.0, 3.0)


@dataclass
class Example:
    id: str
    audio: Path
    text: str
    label: float
    split: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.audio = Path(self.audio)
        self.label = float(self.label)
        if not LABEL_RANGE[0] <= self.label <= LABEL_RANGE[1]:
            raise ValidationError(f"example {self.id!r}: label {self.label} outside [-3, 3]")
        if self.split not in SPLITS:
            raise ValidationError(f"example {self.id!r}: split {self.split!r} not in {SPLITS}")

    def waveform(self) -> Waveform:
        return load_wav(self.audio)

    def to_record(self, root: Optional[Path] = None) -> dict:
        audio = self.audio
        if root is not None:
            try:
                audio = audio.resolve().relative_to(root)
            except ValueError:
                pass
        rec = {"id": self.id, "audio": audio.as_posix(), "text": self.text,
               "label": self.label, "split": self.split}
        if self.meta:
            rec["meta"] = self.meta
        return rec


def load_manifest(path) -> list[Example]:
    """Parse a JSONL manifest; audio paths are resolved against its directory."""
    path = Path(path)
    root = path.parent
    examples: list[Example] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            missing = {"id", "audio", "text", "label", "split"} - set(rec)
            if missing:
                raise ValidationError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            label = rec["label"]
            if not isinstance(label, (int, float)) or not LABEL_RANGE[0] <= label <= LABEL_RANGE[1]:
                raise ValidationError(f"{path}:{lineno}: label {label!r} outside [-3, 3]")
            if rec["id"] in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
            seen.add(rec["id"])
            audio = Path(rec["audio"])
            if not audio.is_absolute():
                audio = root / audio
            if not audio.is_file():
                raise FileNotFoundError(f"{path}:{lineno}: audio file {audio} not found")
            try:
                examples.append(Example(rec["id"], audio, rec["text"], label, rec["split"], rec.get("meta", {})))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not examples:
        log.warning("manifest %s contains no examples", path)
    return examples


def write_manifest(path, examples: Iterable[Example]) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            rec = ex.to_record(root) if ex.audio.is_absolute() else ex.to_record()
            rec["audio"] = Path(rec["audio"]).as_posix()
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def export_splits_csv(path, examples: Sequence[Example]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split", "label", "text", "audio"])
        for ex in examples:
            writer.writerow([ex.id, ex.split, repr(ex.label), ex.text, ex.audio.as_posix()])


def select_split(examples: Sequence[Example], split: str) -> list[Example]:
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}; expected one of {SPLITS}")
    return [ex for ex in examples if ex.split == split]


# ------------------------------------------------------------ synthetic data

POSITIVE_WORDS = ("good", "great", "excellent", "wonderful", "lovely")
NEGATIVE_WORDS = ("bad", "awful", "terrible", "poor", "boring")
FILLER_WORDS = ("the", "movie", "was", "really", "quite", "i", "think", "it", "is", "so",
                "this", "film", "very", "honestly", "plot", "acting", "and", "overall", "just", "a")


@dataclass
class SynthSpec:
    """Generator settings.

    A ``conflict_fraction`` share of examples draws its tone independently of
    its keyword; the rest use the keyword's tone.  Label sign always follows
    the tone: magnitude 2.0 when keyword and tone agree, 0.5 when they differ.
    A text-only predictor therefore tops out at ``1 - conflict_fraction / 2``
    binary accuracy.
    """

    n: int = 1000
    seed: int = 0
    conflict_fraction: float = 0.5
    tones: tuple = (440.0, 220.0)
    keywords: tuple = (POSITIVE_WORDS, NEGATIVE_WORDS)
    noise_sigma: float = 0.05
    duration_s: float = 1.0
    amplitude: float = 0.5
    filler_range: tuple = (3, 6)
    split_fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if not 0.0 <= self.conflict_fraction <= 1.0:
            raise ValidationError(f"conflict_fraction must lie in [0, 1], got {self.conflict_fraction}")
        if self.n < 0:
            raise ValidationError("n must be non-negative")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValidationError("split_fractions must sum to 1")


def _split_names(spec: SynthSpec) -> list[str]:
    counts = [int(round(f * spec.n)) for f in spec.split_fractions[:2]]
    counts.append(spec.n - sum(counts))
    names = [s for s, c in zip(SPLITS, counts) for _ in range(c)]
    np.random.default_rng([spec.seed, 7]).shuffle(names)
    return names


def synth_example(spec: SynthSpec, i: int) -> tuple[np.ndarray, str, float, dict]:
    """Deterministic (samples, text, label, meta) for example ``i``."""
    rng = np.random.default_rng([spec.seed, i])
    kw_sign = 1 if rng.random() < 0.5 else -1
    decoupled = rng.random() < spec.conflict_fraction
    tone_sign = (1 if rng.random() < 0.5 else -1) if decoupled else kw_sign
    pos_words, neg_words = spec.keywords
    words = pos_words if kw_sign > 0 else neg_words
    keyword = words[rng.integers(len(words))]
    n_fill = int(rng.integers(spec.filler_range[0], spec.filler_range[1] + 1))
    tokens = [FILLER_WORDS[j] for j in rng.integers(len(FILLER_WORDS), size=n_fill)]
    tokens.insert(int(rng.integers(n_fill + 1)), keyword)

    freq = spec.tones[0] if tone_sign > 0 else spec.tones[1]
    n_samples = int(round(spec.duration_s * SAMPLE_RATE))
    t = np.arange(n_samples) / SAMPLE_RATE
    phase = rng.uniform(0.0, 2 * np.pi)
    samples = spec.amplitude * np.sin(2 * np.pi * freq * t + phase) + rng.normal(0.0, spec.noise_sigma, n_samples)
    samples = np.clip(samples, -1.0, 1.0)

    label = 2.0 * tone_sign if tone_sign == kw_sign else 0.5 * tone_sign
    meta = {"keyword": keyword, "keyword_sign": kw_sign, "tone_sign": tone_sign, "tone_hz": freq}
    return samples, " ".join(tokens), label, meta


def synth_dataset(spec: SynthSpec, out_dir) -> list[Example]:
    """Write WAVs plus ``manifest.jsonl`` under ``out_dir`` and return the examples."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    splits = _split_names(spec)
    examples = []
    for i in range(spec.n):
        samples, text, label, meta = synth_example(spec, i)
        ex_id = f"synth_{i:05d}"
        wav = out_dir / "audio" / f"{ex_id}.wav"
        write_wav(wav, samples)
        examples.append(Example(ex_id, wav, text, label, splits[i], meta))
    write_manifest(out_dir / "manifest.jsonl", examples)
    return examples
