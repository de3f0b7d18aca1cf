"""Central finite differences, the independent oracle for analytic gradients."""
from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np


def numerical_grad(loss_fn: Callable[[], float], arrays: Mapping[str, np.ndarray],
                   eps: float = 1e-4) -> dict[str, np.ndarray]:
    """Perturb each entry of each array in place and difference ``loss_fn``.

    ``loss_fn`` must read the arrays it is given (it is re-evaluated after
    every perturbation) and return a python float.  Arrays are restored.
    """
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|)`` in the Euclidean norm, with a small floor."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def max_relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray],
                       names: Iterable[str] | None = None) -> tuple[float, str]:
    worst, worst_name = 0.0, ""
    for name in names if names is not None else numeric:
        err = relative_error(analytic[name], numeric[name])
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name
