"""Run configuration: a JSON file plus dotted ``key=value`` overrides.

Layout (every section optional)::

    {
      "seed": 0,
      "model": {"profile": "toy", "d": 64, ...},
      "conv": {"profile": "wav2vec2", "seed": 0},
      "pretrain": {"lr": 1e-3, "total_steps": 400, ...},
      "finetune": {"lr": 1e-3, "epochs": 10, ...},
      "masking": {"mask_prob": 0.15, "sub_probs": [0.8, 0.1, 0.1]},
      "freeze": "R+Att",
      "zero_prefixes": false,
      "data": {"manifest": "synth/manifest.jsonl"}
    }

``train.*`` overrides address the section of the command being run.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .audio import ConvStackConfig
from .config import PROFILES, ModelConfig
from .errors import ValidationError
from .training.freeze import DEFAULT_FREEZE, resolve_freeze
from .training.masking import MaskingPolicy
from .training.optim import TrainConfig, finetune_defaults, pretrain_defaults

SECTIONS = ("seed", "model", "conv", "pretrain", "finetune", "masking", "freeze", "zero_prefixes", "data")
_PHASE_DEFAULTS = {"pretrain": pretrain_defaults, "finetune": finetune_defaults}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: Sequence[str], phase: Optional[str] = None) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if parts[0] == "train":
            if phase is None:
                raise ValidationError(f"override {key!r}: 'train.' needs a training command")
            parts[0] = phase
        if parts[0] not in SECTIONS:
            raise ValidationError(f"override {key!r}: unknown section {parts[0]!r}")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = _parse_value(raw)
    return doc


def load_config_doc(path: Optional[str], overrides: Sequence[str] = (), phase: Optional[str] = None) -> dict:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise ValidationError(f"config {path}: top level must be an object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ValidationError(f"config {path}: unknown sections {sorted(unknown)}")
        base = Path(path).resolve().parent
        manifest = doc.get("data", {}).get("manifest")
        if manifest is not None and not Path(manifest).is_absolute():
            doc["data"]["manifest"] = str(base / manifest)
    return apply_overrides(doc, overrides, phase)


@dataclass
class RunConfig:
    seed: int
    model: ModelConfig
    conv: ConvStackConfig
    train: Optional[TrainConfig]
    masking: MaskingPolicy
    freeze: str
    zero_prefixes: bool
    manifest: Optional[str]
    phase: Optional[str]

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "conv": self.conv.to_dict(),
            "masking": {"mask_prob": self.masking.mask_prob, "sub_probs": list(self.masking.sub_probs)},
            "freeze": self.freeze,
            "zero_prefixes": self.zero_prefixes,
            "data": {"manifest": self.manifest},
        }
        if self.phase is not None and self.train is not None:
            out[self.phase] = self.train.to_dict()
        return out


def resolve(doc: dict, phase: Optional[str] = None) -> RunConfig:
    seed = int(doc.get("seed", 0))
    model_doc = dict(doc.get("model", {}))
    profile = model_doc.pop("profile", "toy")
    if profile not in PROFILES:
        raise ValidationError(f"unknown model profile {profile!r}; expected one of {sorted(PROFILES)}")
    base = PROFILES[profile]().to_dict()
    unknown = set(model_doc) - set(base)
    if unknown:
        raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
    model = ModelConfig.from_dict({**base, **model_doc})

    conv_doc = dict(doc.get("conv", {}))
    if "layers" in conv_doc:
        conv = ConvStackConfig.from_dict(conv_doc)
        if conv.d_A != model.d_A:
            raise ValidationError(f"conv output channels {conv.d_A} != model.d_A {model.d_A}")
    else:
        name = conv_doc.pop("profile", "wav2vec2")
        conv_seed = int(conv_doc.pop("seed", seed))
        if conv_doc:
            raise ValidationError(f"unknown conv config keys: {sorted(conv_doc)}")
        conv = ConvStackConfig.profile(name, channels=model.d_A, seed=conv_seed)

    train = None
    if phase is not None:
        section = dict(doc.get(phase, {}))
        section.setdefault("seed", seed)
        train = TrainConfig.from_dict({**_PHASE_DEFAULTS[phase]().to_dict(), **section})

    m = doc.get("masking", {})
    unknown = set(m) - {"mask_prob", "sub_probs"}
    if unknown:
        raise ValidationError(f"unknown masking keys: {sorted(unknown)}")
    masking = MaskingPolicy(**{k: (tuple(v) if k == "sub_probs" else v) for k, v in m.items()})
    freeze = resolve_freeze(doc.get("freeze", DEFAULT_FREEZE))
    manifest = doc.get("data", {}).get("manifest")
    return RunConfig(seed, model, conv, train, masking, freeze, bool(doc.get("zero_prefixes", False)),
                     manifest, phase)
