"""Named fine-tuning freeze configurations and the pretraining trainable set."""
from __future__ import annotations

from ..errors import ValidationError
from ..params import ParameterStore

# nested: each configuration adds one group to the previous
FREEZE_GROUPS = {
    "R": ("encoder", "head"),
    "R+Att": ("encoder", "head", "attention"),
    "R+Att+GRU": ("encoder", "head", "attention", "gru"),
    "R+Att+GRU+Proj": ("encoder", "head", "attention", "gru", "projection"),
    "ALL": ("encoder", "head", "attention", "gru", "projection", "embeddings"),
}
FREEZE_NAMES = tuple(FREEZE_GROUPS)
DEFAULT_FREEZE = "R+Att"

_ALIASES = {
    "roberta-encoder": "R", "robert-encoder": "R", "encoder": "R",
    "+attention": "R+Att", "+att": "R+Att",
    "+bigru": "R+Att+GRU", "+gru": "R+Att+GRU",
    "+projection": "R+Att+GRU+Proj", "+proj": "R+Att+GRU+Proj",
    "all": "ALL", "all parameters": "ALL",
}


def resolve_freeze(name: str) -> str:
    if name in FREEZE_GROUPS:
        return name
    canon = _ALIASES.get(name.strip().lower())
    if canon is None:
        canon = {k.lower(): k for k in FREEZE_GROUPS}.get(name.strip().lower())
    if canon is None:
        raise ValidationError(f"unknown freeze configuration {name!r}; valid names: {', '.join(FREEZE_NAMES)}")
    return canon


def trainable_ids(params: ParameterStore, freeze: str) -> set[str]:
    groups = FREEZE_GROUPS[resolve_freeze(freeze)]
    return {pid for g in groups for pid in params.ids(group=g)}


def pretrain_trainable(params: ParameterStore) -> set[str]:
    return set(params.ids("theta_A"))
