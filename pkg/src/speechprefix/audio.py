"""WAV ingestion and the frozen strided-convolution feature encoder."""
from __future__ import annotations

import hashlib
import json
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import (EmptyAudioError, ShapeError, TooShortError, UnsupportedChannelsError,
                     UnsupportedRateError, ValidationError)

SAMPLE_RATE = 16000

# (kernel, stride) per layer
WAV2VEC2_LAYERS = ((10, 5), (3, 2), (3, 2), (3, 2), (3, 2), (2, 2), (2, 2))
FIVE_LAYERS = ((10, 5), (8, 4), (4, 2), (4, 2), (4, 2))


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedRateError(f"sample rate {self.sample_rate} Hz; only {SAMPLE_RATE} Hz is supported")

    def __len__(self) -> int:
        return self.samples.shape[0]


def load_wav(path) -> Waveform:
    """Read a PCM16 mono 16 kHz WAV file and scale samples to [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        channels = fh.getnchannels()
        rate = fh.getframerate()
        width = fh.getsampwidth()
        raw = fh.readframes(fh.getnframes())
    if channels != 1:
        raise UnsupportedChannelsError(f"{path}: {channels} channels; only mono is supported")
    if rate != SAMPLE_RATE:
        raise UnsupportedRateError(f"{path}: sample rate {rate} Hz; only {SAMPLE_RATE} Hz is supported")
    if width != 2:
        raise ValidationError(f"{path}: sample width {8 * width} bits; only PCM16 is supported")
    if not raw:
        raise EmptyAudioError(f"{path}: no audio frames")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float32) / 32768.0, rate)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


@dataclass
class ConvStackConfig:
    """Layer shapes of the frozen encoder.  ``layers`` holds (channels, kernel, stride)."""

    layers: list = field(default_factory=lambda: [(512, k, s) for k, s in WAV2VEC2_LAYERS])
    seed: int = 0

    def __post_init__(self):
        self.layers = [tuple(int(v) for v in layer) for layer in self.layers]
        if not self.layers:
            raise ValidationError("conv stack needs at least one layer")
        for c, k, s in self.layers:
            if c < 1 or k < 1 or s < 1:
                raise ValidationError(f"invalid conv layer (channels={c}, kernel={k}, stride={s})")

    @property
    def d_A(self) -> int:
        return self.layers[-1][0]

    @classmethod
    def profile(cls, name: str, channels: int = 512, seed: int = 0) -> "ConvStackConfig":
        shapes = {"wav2vec2": WAV2VEC2_LAYERS, "five-layer": FIVE_LAYERS}
        if name not in shapes:
            raise ValidationError(f"unknown conv profile {name!r}; choose from {sorted(shapes)}")
        return cls([(channels, k, s) for k, s in shapes[name]], seed)

    def to_dict(self) -> dict:
        return {"layers": [list(layer) for layer in self.layers], "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvStackConfig":
        return cls([tuple(layer) for layer in d["layers"]], int(d.get("seed", 0)))

    def receptive_field(self) -> int:
        """Smallest input length that yields one output frame."""
        rf = 1
        for _, k, s in reversed(self.layers):
            rf = (rf - 1) * s + k
        return rf

    def output_length(self, n_samples: int) -> int:
        n = n_samples
        for _, k, s in self.layers:
            if n < k:
                return 0
            n = (n - k) // s + 1
        return n

    @property
    def frame_stride_samples(self) -> int:
        return int(np.prod([s for _, _, s in self.layers]))


@dataclass
class FrameSequence:
    frames: np.ndarray  # (T_A, d_A)
    frame_stride_samples: int

    @property
    def T_A(self) -> int:
        return self.frames.shape[0]


def init_conv_weights(cfg: ConvStackConfig) -> list[np.ndarray]:
    """Seeded He-normal weights, one (out, in, kernel) array per layer, no bias."""
    rng = np.random.default_rng(cfg.seed)
    weights = []
    c_in = 1
    for c_out, k, _ in cfg.layers:
        std = np.sqrt(2.0 / (c_in * k))
        weights.append((rng.standard_normal((c_out, c_in, k)) * std).astype(np.float32))
        c_in = c_out
    return weights


def check_conv_weights(cfg: ConvStackConfig, weights: Sequence[np.ndarray]) -> None:
    if len(weights) != len(cfg.layers):
        raise ShapeError(f"expected {len(cfg.layers)} conv weight arrays, got {len(weights)}")
    c_in = 1
    for i, ((c_out, k, _), w) in enumerate(zip(cfg.layers, weights)):
        if tuple(w.shape) != (c_out, c_in, k):
            raise ShapeError(f"conv layer {i}: weight shape {tuple(w.shape)} != {(c_out, c_in, k)}")
        c_in = c_out


def _gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def conv_frontend(w: Waveform, cfg: ConvStackConfig, theta_W: Sequence[np.ndarray]) -> FrameSequence:
    """Run the frozen conv stack; GELU follows every layer.

    Plain numpy with no graph recording: nothing upstream of these features
    is ever trained.
    """
    check_conv_weights(cfg, theta_W)
    n = len(w)
    rf = cfg.receptive_field()
    if n < rf:
        raise TooShortError(f"waveform has {n} samples; the conv stack needs at least {rf}")
    x = w.samples[None, :]  # (C, L)
    for (_, k, s), weight in zip(cfg.layers, theta_W):
        win = sliding_window_view(x, k, axis=1)[:, ::s, :]  # (C_in, L_out, k)
        cols = win.transpose(1, 0, 2).reshape(win.shape[1], -1)
        x = _gelu(cols @ weight.reshape(weight.shape[0], -1).T).T
    frames = np.ascontiguousarray(x.T, dtype=np.float32)
    return FrameSequence(frames, cfg.frame_stride_samples)


def export_conv_weights(directory, weights: Sequence[np.ndarray]) -> None:
    """Write little-endian float32 arrays plus a JSON shape manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, w in enumerate(weights):
        name = f"conv{i}.bin"
        (directory / name).write_bytes(np.asarray(w, dtype="<f4").tobytes())
        entries.append({"file": name, "shape": list(w.shape)})
    (directory / "manifest.json").write_text(json.dumps({"layers": entries}, indent=2))


def import_conv_weights(directory, cfg: Optional[ConvStackConfig] = None) -> list[np.ndarray]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    weights = []
    for entry in manifest["layers"]:
        shape = tuple(entry["shape"])
        raw = (directory / entry["file"]).read_bytes()
        if len(raw) != 4 * int(np.prod(shape)):
            raise ShapeError(f"{entry['file']}: {len(raw)} bytes do not match shape {shape}")
        weights.append(np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32))
    if cfg is not None:
        check_conv_weights(cfg, weights)
    return weights


def weights_digest(weights: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for w in weights:
        h.update(np.ascontiguousarray(w).tobytes())
    return h.hexdigest()
