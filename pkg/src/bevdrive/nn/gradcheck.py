"""Central finite-difference gradient verification in float64."""

from __future__ import annotations

import numpy as np

from .layers import Layer


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _numeric(fn, x: np.ndarray, h: float, max_entries: int | None, rng) -> tuple[np.ndarray, np.ndarray]:
    flat = x.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = rng.choice(flat.size, size=max_entries, replace=False)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        out[j] = (fp - fm) / (2.0 * h)
    return idx, out


def check_layer_gradients(layer: Layer, inputs, h: float = 1e-5, seed: int = 0,
                          max_entries: int | None = 60) -> dict[str, float]:
    """Max relative error of analytic vs numeric gradients for every parameter and input.

    The layer is converted to float64. The scalar objective is ``sum(y * r)``
    for a fixed random ``r``.
    """
    rng = np.random.default_rng(seed)
    layer.astype(np.float64)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    y = layer.forward(*inputs)
    r = rng.standard_normal(y.shape)

    def objective() -> float:
        return float(np.sum(layer.forward(*inputs) * r))

    layer.forward(*inputs)
    layer.zero_grad()
    dx = layer.backward(r)
    if not isinstance(dx, tuple):
        dx = (dx,)
    errors: dict[str, float] = {}
    for i, (x, g) in enumerate(zip(inputs, dx)):
        idx, num = _numeric(objective, x, h, max_entries, rng)
        errors[f"input{i}"] = relative_error(g.reshape(-1)[idx], num)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    for k, p in layer.params.items():
        idx, num = _numeric(objective, p, h, max_entries, rng)
        errors[k] = relative_error(analytic[k].reshape(-1)[idx], num)
    return errors
