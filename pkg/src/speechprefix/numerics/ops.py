"""Differentiable dense kernels.

Every kernel accepts ``Tensor`` or array-like inputs, checks its output for
NaN/Inf, and records a backward closure when a graph is active and at least
one input is tracked.  Backward closures receive the upstream gradient and a
mask saying which parents need a gradient; they return one entry per parent
(``None`` where not needed).
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from ..errors import NonFiniteError, ShapeError
from .tensor import Tensor, active_graph

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _check(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


def _finish(out_data: np.ndarray, parents: Sequence, backward, op: str) -> Tensor:
    _check(out_data, op)
    out = Tensor(out_data)
    graph = active_graph()
    if graph is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        graph.record(out, parents, backward, op)
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad + bd

    def bw(g, need):
        return (unbroadcast(g, ad.shape) if need[0] else None,
                unbroadcast(g, bd.shape) if need[1] else None)

    return _finish(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad - bd

    def bw(g, need):
        return (unbroadcast(g, ad.shape) if need[0] else None,
                unbroadcast(-g, bd.shape) if need[1] else None)

    return _finish(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad * bd

    def bw(g, need):
        return (unbroadcast(g * bd, ad.shape) if need[0] else None,
                unbroadcast(g * ad, bd.shape) if need[1] else None)

    return _finish(out, (a, b), bw, "mul")


def sigmoid(x) -> Tensor:
    xd = _data(x)
    out = _sigmoid(xd)

    def bw(g, need):
        return (g * out * (1 - out),)

    return _finish(out, (x,), bw, "sigmoid")


def _sigmoid(xd: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(x) -> Tensor:
    xd = _data(x)
    out = np.tanh(xd)

    def bw(g, need):
        return (g * (1 - out * out),)

    return _finish(out, (x,), bw, "tanh")


def gelu_scalar(x: float) -> float:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    return 0.5 * x * (1.0 + math.erf(x / _SQRT2))


def gelu(x) -> Tensor:
    xd = _data(x)
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    out = xd * cdf

    def bw(g, need):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _finish(out, (x,), bw, "gelu")


def activation(name: str):
    try:
        return {"gelu": gelu, "tanh": tanh, "sigmoid": sigmoid}[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected gelu, tanh or sigmoid") from None


# -------------------------------------------------------------------- linear

def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    if ad.ndim < 1 or bd.ndim < 1 or ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    try:
        out = np.matmul(ad, bd)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}") from exc

    def bw(g, need):
        ga = gb = None
        if ad.ndim == 1 or bd.ndim == 1:
            a2 = ad[None, :] if ad.ndim == 1 else ad
            b2 = bd[:, None] if bd.ndim == 1 else bd
            g2 = g.reshape(a2.shape[:-1] + b2.shape[-1:])
            if need[0]:
                ga = unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(ad.shape)
            if need[1]:
                gb = unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bd.shape)
            return ga, gb
        if need[0]:
            ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if need[1]:
            gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _finish(out, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is (in, out)."""
    xd, wd = _data(x), _data(w)
    if xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"linear shape mismatch: input {xd.shape} vs weight {wd.shape}")
    bd = None if b is None else _data(b)
    out = xd @ wd
    if bd is not None:
        out = out + bd

    def bw(g, need):
        gx = gw = gb = None
        if need[0]:
            gx = g @ wd.T
        if need[1]:
            gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if bd is not None and need[2]:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return _finish(out, (x, w, b), bw, "linear")


# ------------------------------------------------------------- normalisation

def softmax(x, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Numerically stable softmax.  ``mask`` (broadcastable bool) marks kept entries."""
    xd = _data(x)
    if xd.size == 0 or xd.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        z = np.where(mask, xd, -np.inf)
    else:
        z = xd
    m = np.max(z, axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise ShapeError("softmax row with every entry masked")
    e = np.exp(z - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g, need):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _finish(out, (x,), bw, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with population variance."""
    xd = _data(x)
    if xd.ndim == 0 or xd.shape[-1] == 0:
        raise ShapeError("layer_norm over an empty axis")
    gd, bd = _data(gamma), _data(beta)
    if gd.shape != xd.shape[-1:] or bd.shape != xd.shape[-1:]:
        raise ShapeError(f"layer_norm affine shapes {gd.shape}/{bd.shape} vs input {xd.shape}")
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + bd

    def bw(g, need):
        gx = gg = gb = None
        if need[0]:
            gh = g * gd
            n = xd.shape[-1]
            gx = inv / n * (n * gh - gh.sum(axis=-1, keepdims=True)
                            - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
        if need[1]:
            gg = (g * xhat).reshape(-1, xd.shape[-1]).sum(axis=0)
        if need[2]:
            gb = g.reshape(-1, xd.shape[-1]).sum(axis=0)
        return gx, gg, gb

    return _finish(out, (x, gamma, beta), bw, "layer_norm")


def dropout(x, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout.  Identity (same tensor) when not training or ``p == 0``."""
    if not training or p == 0.0:
        return as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    xd = _data(x)
    keep = (rng.random(xd.shape) >= p).astype(xd.dtype) / (1.0 - p)

    def bw(g, need):
        return (g * keep,)

    return _finish(xd * keep, (x,), bw, "dropout")


# ------------------------------------------------------------------ shaping

def reshape(x, shape) -> Tensor:
    xd = _data(x)
    out = xd.reshape(shape)

    def bw(g, need):
        return (g.reshape(xd.shape),)

    return _finish(out, (x,), bw, "reshape")


def transpose(x, axes) -> Tensor:
    xd = _data(x)
    out = np.transpose(xd, axes)
    inv = np.argsort(axes)

    def bw(g, need):
        return (np.transpose(g, inv),)

    return _finish(out, (x,), bw, "transpose")


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    datas = [_data(x) for x in xs]
    out = np.concatenate(datas, axis=axis)
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g, need):
        parts = np.split(g, bounds, axis=axis)
        return tuple(part if n else None for part, n in zip(parts, need))

    return _finish(out, tuple(xs), bw, "concat")


def getitem(x, index) -> Tensor:
    xd = _data(x)
    out = xd[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bw(g, need):
        gx = np.zeros_like(xd)
        np.add.at(gx, index, g)
        return (gx,)

    return _finish(np.array(out, copy=True), (x,), bw, "getitem")


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; integer ``ids`` of any shape."""
    td = _data(table)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= td.shape[0]):
        raise ShapeError(f"embedding id out of range for table with {td.shape[0]} rows")
    out = td[ids]

    def bw(g, need):
        gt = np.zeros_like(td)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, td.shape[1]))
        return (gt,)

    return _finish(out, (table,), bw, "embedding")


def reduce_sum(x, axis=None) -> Tensor:
    xd = _data(x)
    out = np.asarray(xd.sum(axis=axis))

    def bw(g, need):
        if axis is None:
            return (np.broadcast_to(g, xd.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xd.shape).copy(),)

    return _finish(out, (x,), bw, "reduce_sum")


def mean(x, axis=None) -> Tensor:
    xd = _data(x)
    n = xd.size if axis is None else xd.shape[axis]
    return mul(reduce_sum(x, axis=axis), 1.0 / n)


# ------------------------------------------------------------------- losses

def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-wise softmax."""
    ld = _data(logits)
    targets = np.asarray(targets)
    if ld.ndim != 2 or targets.shape != (ld.shape[0],):
        raise ShapeError(f"cross_entropy expects (N, V) logits and (N,) targets, got {ld.shape}, {targets.shape}")
    n = ld.shape[0]
    m = ld.max(axis=1, keepdims=True)
    shifted = ld - m
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    out = np.asarray(-logp[np.arange(n), targets].mean())

    def bw(g, need):
        p = np.exp(logp)
        p[np.arange(n), targets] -= 1.0
        return (p * (g / n),)

    return _finish(out.astype(ld.dtype), (logits,), bw, "cross_entropy")


def mse_loss(pred, target) -> Tensor:
    pd = _data(pred)
    td = np.asarray(_data(target), dtype=pd.dtype)
    if pd.shape != td.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pd.shape} vs {td.shape}")
    diff = pd - td
    out = np.asarray((diff * diff).mean())

    def bw(g, need):
        return (g * 2.0 * diff / diff.size, None)

    return _finish(out.astype(pd.dtype), (pred, target), bw, "mse_loss")


# ---------------------------------------------------------------- recurrent

def gru(x, mask, w_ih, w_hh, b_ih, b_hh, reverse: bool = False) -> Tensor:
    """Single-direction GRU over a right-padded batch.

    ``x`` is (B, T, d_in); ``mask`` (B, T) marks valid frames; weights are
    laid out as ``x @ w_ih`` with gate blocks ordered (reset, update, new),
    so ``w_ih`` is (d_in, 3H) and ``w_hh`` is (H, 3H).  The initial state is
    zero.  Padded steps carry the state through unchanged, so the reverse
    direction starts at each row's last valid frame.
    """
    xd, whh = _data(x), _data(w_hh)
    wih, bih, bhh = _data(w_ih), _data(b_ih), _data(b_hh)
    B, T, _ = xd.shape
    H = whh.shape[0]
    if wih.shape != (xd.shape[2], 3 * H) or whh.shape != (H, 3 * H):
        raise ShapeError(f"gru weight shapes {wih.shape}/{whh.shape} do not match input {xd.shape}")
    m = np.asarray(mask, dtype=xd.dtype).reshape(B, T, 1)
    order = range(T - 1, -1, -1) if reverse else range(T)

    gi = xd @ wih + bih
    hs = np.empty((B, T, H), dtype=xd.dtype)
    cache = [None] * T
    h = np.zeros((B, H), dtype=xd.dtype)
    for t in order:
        gh = h @ whh + bhh
        r = _sigmoid(gi[:, t, :H] + gh[:, :H])
        z = _sigmoid(gi[:, t, H:2 * H] + gh[:, H:2 * H])
        ghn = gh[:, 2 * H:]
        n = np.tanh(gi[:, t, 2 * H:] + r * ghn)
        h_new = (1.0 - z) * n + z * h
        mt = m[:, t]
        cache[t] = (h, r, z, n, ghn)
        h = mt * h_new + (1.0 - mt) * h
        hs[:, t] = h

    def bw(g, need):
        dgi = np.zeros_like(gi)
        dwhh = np.zeros_like(whh)
        dbhh = np.zeros_like(bhh)
        dh = np.zeros((B, H), dtype=xd.dtype)
        for t in reversed(list(order)):
            h_prev, r, z, n, ghn = cache[t]
            mt = m[:, t]
            dh_t = g[:, t] + dh
            dh_new = mt * dh_t
            dh_prev = (1.0 - mt) * dh_t + dh_new * z
            dn = dh_new * (1.0 - z) * (1.0 - n * n)
            dz = dh_new * (h_prev - n) * z * (1.0 - z)
            dr = dn * ghn * r * (1.0 - r)
            dgh = np.concatenate([dr, dz, dn * r], axis=1)
            dgi[:, t] = np.concatenate([dr, dz, dn], axis=1)
            dwhh += h_prev.T @ dgh
            dbhh += dgh.sum(axis=0)
            dh = dh_prev + dgh @ whh.T
        flat = dgi.reshape(-1, 3 * H)
        gx = dgi @ wih.T if need[0] else None
        gwih = xd.reshape(-1, xd.shape[2]).T @ flat if need[2] else None
        gbih = flat.sum(axis=0) if need[4] else None
        return (gx, None, gwih, dwhh if need[3] else None, gbih, dbhh if need[5] else None)

    return _finish(hs, (x, mask, w_ih, w_hh, b_ih, b_hh), bw, "gru")
