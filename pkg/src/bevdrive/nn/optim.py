"""Binary cross-entropy and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7


def bce_loss(pred: np.ndarray, target: np.ndarray, pos_weight: float = 1.0,
             eps: float = BCE_EPS) -> tuple[float, np.ndarray]:
    """Mean weighted binary cross-entropy and its gradient w.r.t. ``pred``.

    Predictions are clamped to ``[eps, 1 - eps]``; the gradient is zero where
    the clamp is active.
    """
    if pos_weight < 1.0:
        raise ValueError(f"pos_weight must be >= 1, got {pos_weight}")
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred, eps, 1.0 - eps)
    n = pred.size
    loss = -np.mean(pos_weight * target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (-pos_weight * target / p + (1.0 - target) / (1.0 - p)) / n
    grad = np.where((pred >= eps) & (pred <= 1.0 - eps), grad, 0.0).astype(pred.dtype)
    return float(loss), grad


def bce_with_logits(logits: np.ndarray, target: np.ndarray, pos_weight: float = 1.0,
                    eps: float = BCE_EPS) -> tuple[float, np.ndarray]:
    """Same loss as :func:`bce_loss` applied to ``sigmoid(logits)``, gradient w.r.t. the logits."""
    from .layers import sigmoid

    p = sigmoid(logits)
    loss, dp = bce_loss(p, target, pos_weight, eps)
    return loss, (dp * p * (1.0 - p)).astype(logits.dtype)


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update applied in place to every array in ``params``."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"{key}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype)
    return state


class Adam:
    """Adam over the parameters of a set of named layers."""

    def __init__(self, layers, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, max_grad_norm: float | None = None):
        self.layers = list(layers)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.state = AdamState()

    def _flat(self):
        params, grads = {}, {}
        for name, layer in self.layers:
            for k, p in layer.params.items():
                params[f"{name}.{k}"] = p
                grads[f"{name}.{k}"] = layer.grads[k]
        return params, grads

    def zero_grad(self):
        for _, layer in self.layers:
            layer.zero_grad()

    def grad_norm(self) -> float:
        _, grads = self._flat()
        return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))

    def step(self) -> float:
        params, grads = self._flat()
        norm = self.grad_norm()
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)
            grads = {k: g * scale for k, g in grads.items()}
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        return norm
