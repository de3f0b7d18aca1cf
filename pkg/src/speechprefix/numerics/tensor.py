"""Tape-based reverse-mode differentiation over numpy arrays.

Kernels in :mod:`speechprefix.numerics.ops` record themselves on the graph
that is active in the current thread.  ``backward`` walks that tape once in
reverse and returns gradients only for parameter ids in the trainable set.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ContractError, ShapeError

TRAIN_DTYPE = np.float32
WIDE_DTYPE = np.float64

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "_graph")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(TRAIN_DTYPE)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self._graph: Optional[Graph] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    # operator sugar; kernels live in ops to avoid a cycle at import time
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


class Parameter(Tensor):
    """A named leaf.  ``pid`` is the key used by trainable sets and checkpoints."""

    __slots__ = ("pid",)

    def __init__(self, pid: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.pid = pid

    def __repr__(self) -> str:
        return f"Parameter({self.pid!r}, shape={self.shape}, dtype={self.dtype})"


BackwardFn = Callable[[np.ndarray, Sequence[bool]], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    out: Tensor
    parents: tuple
    backward: BackwardFn
    op: str


class Graph:
    """Ordered record of kernels executed while the graph is active.

    Use as a context manager.  A graph is consumed by exactly one call to
    :func:`backward`; reusing it raises ``ContractError``.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Graph":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, out: Tensor, parents: Iterable, backward: BackwardFn, op: str) -> None:
        if self.consumed:
            raise ContractError("cannot record on a graph that was already consumed by backward")
        out.requires_grad = True
        out._graph = self
        self.nodes.append(Node(out, tuple(parents), backward, op))

    def __len__(self) -> int:
        return len(self.nodes)


def active_graph() -> Optional[Graph]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(graph: Graph, loss: Tensor, trainable: Iterable[str]) -> dict[str, np.ndarray]:
    """Reverse pass over ``graph`` seeded at scalar ``loss``.

    Returns a map ``pid -> gradient`` containing only parameters whose pid is
    in ``trainable`` and that took part in the recorded computation.
    Intermediate gradients that cannot reach a trainable parameter are never
    computed.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if graph.consumed:
        raise ContractError("stale graph: backward was already run on this graph")
    if loss._graph is not graph:
        raise ContractError("loss was not produced by the given graph (stale or foreign graph)")
    trainable = set(trainable)

    needs: dict[int, bool] = {}
    params: dict[int, Parameter] = {}

    def leaf_needs(t: Tensor) -> bool:
        key = id(t)
        if key not in needs:
            is_trainable = isinstance(t, Parameter) and t.pid in trainable
            needs[key] = is_trainable
            if is_trainable:
                params[key] = t
        return needs[key]

    for node in graph.nodes:
        flag = False
        for p in node.parents:
            if isinstance(p, Tensor) and leaf_needs(p):
                flag = True
        needs[id(node.out)] = flag

    grads: dict[int, np.ndarray] = {}
    if needs.get(id(loss)):
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(graph.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            mask = [isinstance(p, Tensor) and needs.get(id(p), False) for p in node.parents]
            if not any(mask):
                continue
            pgrads = node.backward(g, mask)
            for p, pg, m in zip(node.parents, pgrads, mask):
                if not m or pg is None:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    graph.consumed = True
    graph.nodes = []
    out: dict[str, np.ndarray] = {}
    for key, p in params.items():
        g = grads.get(key)
        out[p.pid] = np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=False)
    return out
