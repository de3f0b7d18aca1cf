"""Parameter initialisation and the partitioned parameter store.

Parameter ids are dotted paths.  Their first component fixes the partition:

* ``frontend.*`` -> ``theta_W`` (frozen conv encoder)
* ``laa.*``      -> ``theta_A`` (aggregation module)
* ``lm.*``       -> ``theta_LM`` (embeddings, encoder layers, MLM head)
* ``head.*``     -> ``theta_h`` (regression head)
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Iterable, Iterator, Optional

import numpy as np

from .audio import ConvStackConfig, init_conv_weights
from .config import ModelConfig
from .errors import ValidationError
from .numerics import TRAIN_DTYPE, Parameter

PARTITIONS = ("theta_W", "theta_A", "theta_LM", "theta_h")
_PREFIX_TO_PARTITION = {"frontend": "theta_W", "laa": "theta_A", "lm": "theta_LM", "head": "theta_h"}

# fine-grained groups used by freeze configurations
GROUP_PATTERNS = {
    "frontend": ("frontend.",),
    "projection": ("laa.ln.", "laa.proj."),
    "gru": ("laa.gru_fwd.", "laa.gru_bwd."),
    "attention": ("laa.agg1.", "laa.agg2."),
    "embeddings": ("lm.emb.",),
    "encoder": ("lm.layer",),
    "mlm_head": ("lm.mlm.",),
    "head": ("head.",),
}


def partition_of(pid: str) -> str:
    try:
        return _PREFIX_TO_PARTITION[pid.split(".", 1)[0]]
    except KeyError:
        raise ValidationError(f"parameter id {pid!r} belongs to no partition") from None


def group_of(pid: str) -> str:
    for group, prefixes in GROUP_PATTERNS.items():
        if pid.startswith(prefixes):
            return group
    raise ValidationError(f"parameter id {pid!r} belongs to no group")


class ParameterStore:
    """Ordered mapping ``pid -> Parameter`` with partition-level helpers."""

    def __init__(self, params: Optional[Iterable[Parameter]] = None):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()
        for p in params or ():
            self.add(p)

    def add(self, p: Parameter) -> None:
        if p.pid in self._params:
            raise ValidationError(f"duplicate parameter id {p.pid!r}")
        partition_of(p.pid)
        self._params[p.pid] = p

    def __getitem__(self, pid: str) -> Parameter:
        return self._params[pid]

    def __contains__(self, pid: str) -> bool:
        return pid in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def ids(self, partition: Optional[str] = None, group: Optional[str] = None) -> list[str]:
        out = []
        for pid in self._params:
            if partition is not None and partition_of(pid) != partition:
                continue
            if group is not None and group_of(pid) != group:
                continue
            out.append(pid)
        return out

    def count(self, partition: Optional[str] = None) -> int:
        return int(sum(self._params[pid].size for pid in self.ids(partition)))

    def digest(self, pids: Iterable[str]) -> str:
        h = hashlib.sha256()
        for pid in sorted(pids):
            h.update(pid.encode())
            h.update(np.ascontiguousarray(self._params[pid].data).tobytes())
        return h.hexdigest()

    def partition_digests(self) -> dict[str, str]:
        return {part: self.digest(self.ids(part)) for part in PARTITIONS}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {pid: p.data.copy() for pid, p in self._params.items()}

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore(Parameter(pid, p.data.astype(dtype)) for pid, p in self._params.items())

    def copy(self) -> "ParameterStore":
        return ParameterStore(Parameter(pid, p.data.copy()) for pid, p in self._params.items())

    def conv_weights(self) -> list[np.ndarray]:
        return [self._params[pid].data for pid in self.ids("theta_W")]

    @property
    def dtype(self):
        return next(iter(self._params.values())).dtype


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _normal(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


def init_laa(cfg: ModelConfig, rng: np.random.Generator) -> list[tuple[str, np.ndarray]]:
    dA, d = cfg.d_A, cfg.d
    out = [
        ("laa.ln.gamma", np.ones(dA)),
        ("laa.ln.beta", np.zeros(dA)),
        ("laa.proj.W", _uniform(rng, (dA, dA), dA)),
        ("laa.proj.b", _uniform(rng, (dA,), dA)),
    ]
    for direction in ("gru_fwd", "gru_bwd"):
        out += [
            (f"laa.{direction}.W_ih", _uniform(rng, (dA, 3 * d), d)),
            (f"laa.{direction}.W_hh", _uniform(rng, (d, 3 * d), d)),
            (f"laa.{direction}.b_ih", _uniform(rng, (3 * d,), d)),
            (f"laa.{direction}.b_hh", _uniform(rng, (3 * d,), d)),
        ]
    out += [
        ("laa.agg1.W", _uniform(rng, (d, d), d)),
        ("laa.agg1.b", _uniform(rng, (d,), d)),
        ("laa.agg2.W", _uniform(rng, (d,), d)),
        ("laa.agg2.b", _uniform(rng, (1,), d)),
    ]
    return out


def init_lm(cfg: ModelConfig, rng: np.random.Generator) -> list[tuple[str, np.ndarray]]:
    d, ff = cfg.d, cfg.d_ff
    out = [
        ("lm.emb.tok", _normal(rng, (cfg.vocab_size, d))),
        ("lm.emb.pos", _normal(rng, (cfg.max_positions, d))),
        ("lm.emb.ln.gamma", np.ones(d)),
        ("lm.emb.ln.beta", np.zeros(d)),
    ]
    for i in range(cfg.n_layers):
        pre = f"lm.layer{i}"
        for proj in ("q", "k", "v", "o"):
            out += [(f"{pre}.attn.{proj}.W", _normal(rng, (d, d))), (f"{pre}.attn.{proj}.b", np.zeros(d))]
        out += [
            (f"{pre}.attn_ln.gamma", np.ones(d)),
            (f"{pre}.attn_ln.beta", np.zeros(d)),
            (f"{pre}.ffn.in.W", _normal(rng, (d, ff))),
            (f"{pre}.ffn.in.b", np.zeros(ff)),
            (f"{pre}.ffn.out.W", _normal(rng, (ff, d))),
            (f"{pre}.ffn.out.b", np.zeros(d)),
            (f"{pre}.ffn_ln.gamma", np.ones(d)),
            (f"{pre}.ffn_ln.beta", np.zeros(d)),
        ]
    if not cfg.tie_mlm_weights:
        out.append(("lm.mlm.W", _normal(rng, (d, cfg.vocab_size))))
    out.append(("lm.mlm.b", np.zeros(cfg.vocab_size)))
    return out


def init_head(cfg: ModelConfig, rng: np.random.Generator) -> list[tuple[str, np.ndarray]]:
    d = cfg.d
    return [
        ("head.dense.W", _normal(rng, (d, d))),
        ("head.dense.b", np.zeros(d)),
        ("head.out.W", _normal(rng, (d, 1))),
        ("head.out.b", np.zeros(1)),
    ]


def init_params(cfg: ModelConfig, conv: ConvStackConfig, seed: int, dtype=TRAIN_DTYPE) -> ParameterStore:
    """Build every partition.  The conv encoder has its own seed (``conv.seed``)."""
    if conv.d_A != cfg.d_A:
        raise ValidationError(f"conv stack width {conv.d_A} != model.d_A {cfg.d_A}")
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for i, w in enumerate(init_conv_weights(conv)):
        store.add(Parameter(f"frontend.conv{i}.weight", w.astype(dtype)))
    for init in (init_laa, init_lm, init_head):
        for pid, arr in init(cfg, rng):
            store.add(Parameter(pid, np.asarray(arr, dtype=dtype)))
    return store
