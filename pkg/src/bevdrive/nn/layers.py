"""Layers with explicit forward/backward passes on numpy arrays.

Arrays use NCHW for images and (batch, tokens, width) for attention. A layer
caches what its backward pass needs during ``forward``; ``backward`` takes the
gradient of the loss w.r.t. the output, accumulates parameter gradients into
``grads`` and returns the gradient w.r.t. the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values after {where}")
    return x


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dims: dict = field(default_factory=dict)

    KINDS = ("conv2d", "dense", "relu", "self_attention", "cross_attention", "sigmoid", "flatten")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for k, v in self.dims.items():
            if isinstance(v, int) and v <= 0 and k != "padding":
                raise ValueError(f"{self.kind}: dimension {k}={v} must be positive")
        if self.kind in ("self_attention", "cross_attention"):
            if self.dims["width"] % self.dims["heads"]:
                raise ValueError("attention width must be divisible by the head count")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": dict(self.dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], dict(d["dims"]))


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    spec: LayerSpec

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def zero_grad(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def astype(self, dtype) -> "Layer":
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        self.zero_grad()
        return self

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.spec.kind}: backward called without a recorded forward pass")
        return self._cache

    def __call__(self, *args):
        return self.forward(*args)


class Conv2d(Layer):
    """2-D convolution; stride 1 with odd kernels pads to keep the spatial size."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        if padding is None:
            padding = (kernel - 1) // 2 if stride == 1 else 0
        self.spec = LayerSpec("conv2d", {"in_ch": in_ch, "out_ch": out_ch, "kernel": kernel,
                                         "stride": stride, "padding": padding})
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, kernel, stride, padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        self.params = {"W": kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype),
                       "b": np.zeros(out_ch, dtype=dtype)}
        self.zero_grad()

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        return ((h + 2 * self.pad - self.k) // self.stride + 1,
                (w + 2 * self.pad - self.k) // self.stride + 1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"conv2d expects (N, {self.in_ch}, H, W), got {x.shape}")
        n, _, h, w = x.shape
        ho, wo = self.out_shape(h, w)
        if ho <= 0 or wo <= 0:
            raise ValueError(f"conv2d input {h}x{w} smaller than kernel {self.k}")
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad))) if self.pad else x
        s = self.stride
        # columns laid out (C, k, k, N, Ho, Wo) so copies stay contiguous along Wo
        win = sliding_window_view(xp, (self.k, self.k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(-1, n * ho * wo)
        wmat = self.params["W"].reshape(self.out_ch, -1)
        out = (wmat @ cols).reshape(self.out_ch, n, ho, wo) + self.params["b"][:, None, None, None]
        self._cache = (xp.shape, cols, ho, wo)
        return check_finite(np.ascontiguousarray(out.transpose(1, 0, 2, 3)), "conv2d")

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xpshape, cols, ho, wo = self._need_cache()
        n, c, hp, wp = xpshape
        dmat = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(self.out_ch, -1)
        wmat = self.params["W"].reshape(self.out_ch, -1)
        self.grads["W"] += (dmat @ cols.T).reshape(self.params["W"].shape)
        self.grads["b"] += dmat.sum(axis=1)
        dcols = (wmat.T @ dmat).reshape(c, self.k, self.k, n, ho, wo)
        dxp = np.zeros((c, n, hp, wp), dtype=dy.dtype)
        s = self.stride
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j]
        if self.pad:
            dxp = dxp[:, :, self.pad:-self.pad, self.pad:-self.pad]
        return np.ascontiguousarray(dxp.transpose(1, 0, 2, 3))


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("dense", {"in_dim": in_dim, "out_dim": out_dim})
        rng = rng or np.random.default_rng(0)
        self.params = {"W": kaiming_uniform(rng, (in_dim, out_dim), in_dim, dtype),
                       "b": np.zeros(out_dim, dtype=dtype)}
        self.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.params["W"].shape[0]:
            raise ValueError(f"dense expects last dim {self.params['W'].shape[0]}, got {x.shape}")
        self._cache = x
        return check_finite(x @ self.params["W"] + self.params["b"], "dense")

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._need_cache()
        x2 = x.reshape(-1, x.shape[-1])
        d2 = dy.reshape(-1, dy.shape[-1])
        self.grads["W"] += x2.T @ d2
        self.grads["b"] += d2.sum(axis=0)
        return dy @ self.params["W"].T


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("relu")

    def forward(self, x):
        self._cache = x > 0
        return x * self._cache

    def backward(self, dy):
        return dy * self._need_cache()


class Sigmoid(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("sigmoid")

    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return dy * y * (1.0 - y)


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("flatten")

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def cross_attention(queries: np.ndarray, keys: np.ndarray, values: np.ndarray, heads: int = 1,
                    return_weights: bool = False):
    """Scaled dot-product attention with a softmax over key positions.

    Accepts (tokens, width) or (batch, tokens, width) arrays.
    """
    squeeze = queries.ndim == 2
    q, k, v = (np.asarray(a)[None] if squeeze else np.asarray(a) for a in (queries, keys, values))
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[1] != v.shape[1]:
        raise ValueError("keys and values must have the same number of positions")
    if q.shape[-1] % heads or v.shape[-1] % heads:
        raise ValueError("widths must be divisible by the head count")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    weights = softmax(qh @ kh.transpose(0, 1, 3, 2) * scale)
    out = _merge_heads(weights @ vh)
    if squeeze:
        out, weights = out[0], weights[0]
    return (out, weights) if return_weights else out


def _attention_backward(dout, qh, kh, vh, weights, scale, dweights=None):
    """Gradients of merged attention output (and optionally the weights) w.r.t. per-head q, k, v."""
    do = _split_heads(dout, qh.shape[1])
    dv = weights.transpose(0, 1, 3, 2) @ do
    dw = do @ vh.transpose(0, 1, 3, 2)
    if dweights is not None:
        dw = dw + dweights
    ds = weights * (dw - np.sum(dw * weights, axis=-1, keepdims=True))
    dq = ds @ kh * scale
    dk = ds.transpose(0, 1, 3, 2) @ qh * scale
    return dq, dk, dv


class _AttentionBase(Layer):
    def _init_params(self, width: int, rng, dtype):
        for name in ("q", "k", "v", "o"):
            self.params[f"W{name}"] = kaiming_uniform(rng, (width, width), width, dtype)
            self.params[f"b{name}"] = np.zeros(width, dtype=dtype)
        self.zero_grad()

    def _attend(self, xq, xkv):
        p = self.params
        q = xq @ p["Wq"] + p["bq"]
        k = xkv @ p["Wk"] + p["bk"]
        v = xkv @ p["Wv"] + p["bv"]
        qh, kh, vh = _split_heads(q, self.heads), _split_heads(k, self.heads), _split_heads(v, self.heads)
        scale = 1.0 / math.sqrt(qh.shape[-1])
        weights = softmax(qh @ kh.transpose(0, 1, 3, 2) * scale)
        o = _merge_heads(weights @ vh)
        out = o @ p["Wo"] + p["bo"]
        self._cache = (xq, xkv, qh, kh, vh, weights, scale, o)
        self.last_weights = weights
        return check_finite(out, self.spec.kind)

    def _attend_backward(self, dy, dweights=None):
        xq, xkv, qh, kh, vh, weights, scale, o = self._need_cache()
        p, g = self.params, self.grads
        flat = lambda a: a.reshape(-1, a.shape[-1])
        g["Wo"] += flat(o).T @ flat(dy)
        g["bo"] += flat(dy).sum(axis=0)
        do = dy @ p["Wo"].T
        dqh, dkh, dvh = _attention_backward(do, qh, kh, vh, weights, scale, dweights)
        dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
        for name, d, x in (("q", dq, xq), ("k", dk, xkv), ("v", dv, xkv)):
            g[f"W{name}"] += flat(x).T @ flat(d)
            g[f"b{name}"] += flat(d).sum(axis=0)
        dxq = dq @ p["Wq"].T
        dxkv = dk @ p["Wk"].T + dv @ p["Wv"].T
        return dxq, dxkv


class SelfAttention(_AttentionBase):
    """Multi-head self-attention over (batch, tokens, width); no residual."""

    def __init__(self, width: int, heads: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("self_attention", {"width": width, "heads": heads})
        self.heads = heads
        self._init_params(width, rng or np.random.default_rng(0), dtype)

    def forward(self, x):
        return self._attend(x, x)

    def backward(self, dy):
        dxq, dxkv = self._attend_backward(dy)
        return dxq + dxkv


class CrossAttention(_AttentionBase):
    """Multi-head attention of ``queries`` over ``context`` tokens.

    ``last_weights`` (batch, heads, queries, tokens) may feed later layers;
    pass their gradient as ``dweights`` to :meth:`backward`.
    """

    def __init__(self, width: int, heads: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("cross_attention", {"width": width, "heads": heads})
        self.heads = heads
        self._init_params(width, rng or np.random.default_rng(0), dtype)

    def forward(self, queries, context):
        if queries.shape[-1] != context.shape[-1]:
            raise ValueError("query and context widths differ")
        return self._attend(queries, context)

    def backward(self, dy, dweights=None):
        return self._attend_backward(dy, dweights)


def build_layer(spec: LayerSpec, rng=None, dtype=np.float32) -> Layer:
    d = spec.dims
    if spec.kind == "conv2d":
        return Conv2d(d["in_ch"], d["out_ch"], d["kernel"], d.get("stride", 1), d.get("padding"), rng, dtype)
    if spec.kind == "dense":
        return Dense(d["in_dim"], d["out_dim"], rng, dtype)
    if spec.kind == "relu":
        return ReLU()
    if spec.kind == "sigmoid":
        return Sigmoid()
    if spec.kind == "flatten":
        return Flatten()
    if spec.kind == "self_attention":
        return SelfAttention(d["width"], d.get("heads", 1), rng, dtype)
    if spec.kind == "cross_attention":
        return CrossAttention(d["width"], d.get("heads", 1), rng, dtype)
    raise ValueError(spec.kind)


def forward(layer: Layer, *inputs):
    return layer.forward(*inputs)


class Sequential:
    """A chain of single-input layers."""

    def __init__(self, *layers: Layer):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_layers(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}{i}", layer
