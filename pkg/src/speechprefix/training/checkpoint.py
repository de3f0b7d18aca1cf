"""Checkpoint directories.

Layout::

    config.json    format version, model/conv config, run config, phase, step
    arrays.bin     little-endian float32 parameters, concatenated
    manifest.json  name -> offset, shape, partition; file sizes and sha256
    opt.bin        AdamW first and second moments, concatenated
    rng.json       bit-generator state of the training RNG
    vocab.json     token list
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..audio import ConvStackConfig
from ..config import ModelConfig
from ..errors import IncompatibleCheckpointError, IntegrityError
from ..numerics import Parameter
from ..params import ParameterStore, partition_of
from ..vocab import Vocab
from .optim import AdamW, TrainConfig

FORMAT_VERSION = 1
_DTYPE = "<f4"


@dataclass
class TrainingState:
    model_cfg: ModelConfig
    conv_cfg: ConvStackConfig
    params: ParameterStore
    vocab: Vocab
    rng: np.random.Generator
    opt: Optional[AdamW] = None
    step: int = 0
    phase: str = "pretrain"
    run_config: dict = field(default_factory=dict)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(state: TrainingState, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for pid, p in state.params.items():
        raw = np.ascontiguousarray(p.data, dtype=_DTYPE).tobytes()
        entries.append({"name": pid, "offset": offset, "shape": list(p.shape), "partition": partition_of(pid)})
        chunks.append(raw)
        offset += len(raw)
    arrays = b"".join(chunks)

    opt_entries, opt_chunks, opt_offset = [], [], 0
    opt = state.opt
    if opt is not None:
        for pid in sorted(opt.m):
            for kind, buf in (("m", opt.m[pid]), ("v", opt.v[pid])):
                raw = np.ascontiguousarray(buf, dtype=_DTYPE).tobytes()
                opt_entries.append({"name": pid, "kind": kind, "offset": opt_offset, "shape": list(buf.shape)})
                opt_chunks.append(raw)
                opt_offset += len(raw)
    opt_bytes = b"".join(opt_chunks)

    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "arrays": entries,
        "arrays_bytes": len(arrays),
        "arrays_sha256": _sha(arrays),
        "opt": None if opt is None else {
            "t": opt.t, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "weight_decay": opt.weight_decay, "buffers": opt_entries,
        },
        "opt_bytes": len(opt_bytes),
        "opt_sha256": _sha(opt_bytes),
    }
    config = {
        "format_version": FORMAT_VERSION,
        "model": state.model_cfg.to_dict(),
        "conv": state.conv_cfg.to_dict(),
        "phase": state.phase,
        "step": state.step,
        "run": state.run_config,
    }
    (path / "arrays.bin").write_bytes(arrays)
    (path / "opt.bin").write_bytes(opt_bytes)
    (path / "manifest.json").write_text(_dump(manifest))
    (path / "rng.json").write_text(_dump(state.rng.bit_generator.state))
    (path / "vocab.json").write_text(state.vocab.to_json())
    (path / "config.json").write_text(_dump(config))
    return path


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise IntegrityError(f"checkpoint file missing: {path}") from None
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"checkpoint file {path} is not valid JSON ({exc.msg})") from None


def _read_blob(path: Path, size: int, digest: str) -> bytes:
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise IntegrityError(f"checkpoint file missing: {path}") from None
    if len(data) != size:
        raise IntegrityError(f"{path}: expected {size} bytes, found {len(data)} (truncated or corrupt)")
    if _sha(data) != digest:
        raise IntegrityError(f"{path}: checksum mismatch")
    return data


def load_checkpoint(path, expect_model: Optional[ModelConfig] = None,
                    train_cfg: Optional[TrainConfig] = None) -> TrainingState:
    """Load a checkpoint directory, verifying version, sizes and checksums.

    ``expect_model`` (when given) must equal the stored model configuration.
    """
    path = Path(path)
    if not path.is_dir():
        raise IntegrityError(f"checkpoint directory {path} does not exist")
    config = _read_json(path / "config.json")
    manifest = _read_json(path / "manifest.json")
    for name, doc in (("config.json", config), ("manifest.json", manifest)):
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise IncompatibleCheckpointError(f"{path / name}: format version {version!r}, expected {FORMAT_VERSION}")

    model_cfg = ModelConfig.from_dict(config["model"])
    if expect_model is not None and expect_model != model_cfg:
        diff = {k: (v, getattr(expect_model, k)) for k, v in model_cfg.to_dict().items()
                if getattr(expect_model, k) != v}
        raise IncompatibleCheckpointError(f"checkpoint model config differs (stored, requested): {diff}")
    conv_cfg = ConvStackConfig.from_dict(config["conv"])

    arrays = _read_blob(path / "arrays.bin", manifest["arrays_bytes"], manifest["arrays_sha256"])
    params = ParameterStore()
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"])) * 4
        arr = np.frombuffer(arrays, dtype=_DTYPE, count=n // 4, offset=e["offset"]).reshape(e["shape"])
        params.add(Parameter(e["name"], arr.astype(np.float32)))

    opt = None
    opt_doc = manifest.get("opt")
    opt_bytes = _read_blob(path / "opt.bin", manifest["opt_bytes"], manifest["opt_sha256"])
    if opt_doc is not None:
        base = train_cfg or TrainConfig()
        opt = AdamW(TrainConfig(**{**base.to_dict(), "beta1": opt_doc["beta1"], "beta2": opt_doc["beta2"],
                                   "eps": opt_doc["eps"], "weight_decay": opt_doc["weight_decay"]}))
        opt.t = int(opt_doc["t"])
        for e in opt_doc["buffers"]:
            n = int(np.prod(e["shape"]))
            buf = np.frombuffer(opt_bytes, dtype=_DTYPE, count=n, offset=e["offset"]).reshape(e["shape"])
            getattr(opt, e["kind"])[e["name"]] = buf.astype(np.float32)

    rng = np.random.default_rng()
    rng.bit_generator.state = _read_json(path / "rng.json")
    try:
        vocab = Vocab.from_json((path / "vocab.json").read_text())
    except FileNotFoundError:
        raise IntegrityError(f"checkpoint file missing: {path / 'vocab.json'}") from None
    return TrainingState(model_cfg, conv_cfg, params, vocab, rng, opt, int(config["step"]),
                         config.get("phase", "pretrain"), config.get("run", {}))
