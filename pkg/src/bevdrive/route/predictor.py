"""Learned route predictor: road and lane masks plus five waypoints to a route mask.

The mask encoder patchifies a 48x48 two-channel input into 8x8 tokens that
go through one self-attention layer. An MLP embeds each waypoint; the
embeddings query the tokens through cross-attention. Each token then sees
its own features, how strongly each waypoint attended to it, and a pooled
summary of the attended values; a small convolutional head decodes this map
back to 48x48.
"""

from __future__ import annotations

import logging
import time

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..bev.raster import GRID
from ..nn import (Adam, Conv2d, CrossAttention, Dense, ReLU, SelfAttention, bce_with_logits,
                  checkpoint_from_bytes, checkpoint_to_bytes, load_into, sigmoid)
from ..perception_proxy import iou
from .dataset import N_WAYPOINTS, TOY

log = logging.getLogger(__name__)

PATCH = 6
WAYPOINT_SCALE = 30.0


def _upsample(x: np.ndarray, f: int) -> np.ndarray:
    return x.repeat(f, axis=2).repeat(f, axis=3)


def _upsample_backward(dy: np.ndarray, f: int) -> np.ndarray:
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5))


def waypoint_features(waypoints: np.ndarray) -> np.ndarray:
    """Scaled, clipped coordinates plus a one-hot slot index, shape (N, 5, 7)."""
    n = waypoints.shape[0]
    xy = np.clip(waypoints / WAYPOINT_SCALE, -4.0, 4.0).astype(np.float32)
    slots = np.broadcast_to(np.eye(N_WAYPOINTS, dtype=np.float32), (n, N_WAYPOINTS, N_WAYPOINTS))
    return np.concatenate([xy, slots], axis=2)


class RouteNet:
    """The predictor network with explicit forward and backward passes."""

    def __init__(self, width: int = 64, heads: int = 4, skip_ch: int = 16, fuse_ch: int = 32,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.width, self.heads = width, heads
        self.tokens = (TOY // PATCH) ** 2
        self.stem = Conv2d(2, skip_ch, 3, rng=rng)
        self.patch = Conv2d(skip_ch, width, PATCH, stride=PATCH, rng=rng)
        self.attn = SelfAttention(width, heads, rng=rng)
        self.wp1 = Dense(2 + N_WAYPOINTS, width, rng=rng)
        self.wp2 = Dense(width, width, rng=rng)
        self.cross = CrossAttention(width, heads, rng=rng)
        self.summary = Dense(N_WAYPOINTS * width, fuse_ch, rng=rng)
        self.fuse = Dense(width + N_WAYPOINTS + fuse_ch, fuse_ch, rng=rng)
        self.head1 = Conv2d(fuse_ch + skip_ch, skip_ch, 3, rng=rng)
        self.head2 = Conv2d(skip_ch, 1, 3, rng=rng)
        self.relus = {k: ReLU() for k in ("stem", "wp", "summary", "fuse", "head")}
        self.pos = (rng.standard_normal((self.tokens, width)) * 0.02).astype(np.float32)
        self.pos_grad = np.zeros_like(self.pos)

    def named_layers(self):
        return [(name, getattr(self, name)) for name in
                ("stem", "patch", "attn", "wp1", "wp2", "cross", "summary", "fuse", "head1", "head2")]

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()
        self.pos_grad[:] = 0.0

    def forward(self, masks: np.ndarray, waypoints: np.ndarray) -> np.ndarray:
        """Logits of shape (N, 48, 48)."""
        n = masks.shape[0]
        r = self.relus
        skip = r["stem"].forward(self.stem.forward(masks))
        g = TOY // PATCH
        tok = self.patch.forward(skip).reshape(n, self.width, self.tokens).transpose(0, 2, 1) + self.pos
        tok = tok + self.attn.forward(tok)
        q = self.wp2.forward(r["wp"].forward(self.wp1.forward(waypoint_features(waypoints))))
        att = self.cross.forward(q, tok)
        weights = self.cross.last_weights.mean(axis=1)  # (N, 5, tokens)
        summ = r["summary"].forward(self.summary.forward(att.reshape(n, -1)))
        feats = np.concatenate([tok, weights.transpose(0, 2, 1) * self.tokens,
                                np.broadcast_to(summ[:, None, :], (n, self.tokens, summ.shape[1]))], axis=2)
        fused = r["fuse"].forward(self.fuse.forward(feats))
        grid = fused.transpose(0, 2, 1).reshape(n, -1, g, g)
        dec = np.concatenate([_upsample(grid, PATCH), skip], axis=1)
        h = r["head"].forward(self.head1.forward(dec))
        self._shapes = (n, grid.shape[1], skip.shape[1], summ.shape[1])
        return self.head2.forward(h)[:, 0]

    def backward(self, dlogits: np.ndarray) -> None:
        n, fuse_ch, skip_ch, summ_ch = self._shapes
        r = self.relus
        g = TOY // PATCH
        dh = self.head2.backward(dlogits[:, None])
        ddec = self.head1.backward(r["head"].backward(dh))
        dgrid = _upsample_backward(ddec[:, :fuse_ch], PATCH)
        dskip = ddec[:, fuse_ch:].copy()
        dfused = dgrid.reshape(n, fuse_ch, self.tokens).transpose(0, 2, 1)
        dfeats = self.fuse.backward(r["fuse"].backward(dfused))
        w = self.width
        dtok = dfeats[:, :, :w].copy()
        dweights = dfeats[:, :, w:w + N_WAYPOINTS].transpose(0, 2, 1) * self.tokens
        dsumm = dfeats[:, :, w + N_WAYPOINTS:].sum(axis=1)
        datt = self.summary.backward(r["summary"].backward(dsumm)).reshape(n, N_WAYPOINTS, w)
        dw_heads = np.broadcast_to(dweights[:, None] / self.heads,
                                   (n, self.heads, N_WAYPOINTS, self.tokens))
        dq, dctx = self.cross.backward(datt, dw_heads)
        dtok += dctx
        self.wp1.backward(r["wp"].backward(self.wp2.backward(dq)))
        dtok = dtok + self.attn.backward(dtok)
        self.pos_grad += dtok.sum(axis=0)
        dpatch = dtok.transpose(0, 2, 1).reshape(n, w, g, g)
        dskip += self.patch.backward(dpatch)
        self.stem.backward(r["stem"].backward(dskip))


class _PosEmbedding:
    """Adapter exposing the positional table to the optimizer like a layer."""

    def __init__(self, net: RouteNet):
        self.net = net

    @property
    def params(self):
        return {"pos": self.net.pos}

    @property
    def grads(self):
        return {"pos": self.net.pos_grad}

    def zero_grad(self):
        self.net.pos_grad[:] = 0.0


def _check_inputs(X) -> tuple[np.ndarray, np.ndarray]:
    try:
        masks, waypoints = X
    except (TypeError, ValueError):
        raise ValueError("X must be a pair (masks, waypoints)") from None
    masks = np.asarray(masks, dtype=np.float32)
    waypoints = np.asarray(waypoints, dtype=np.float32)
    if masks.ndim != 4 or masks.shape[1:] != (2, TOY, TOY):
        raise ValueError(f"masks must have shape (N, 2, {TOY}, {TOY}), got {masks.shape}")
    if waypoints.shape != (masks.shape[0], N_WAYPOINTS, 2):
        raise ValueError(f"waypoints must have shape ({masks.shape[0]}, {N_WAYPOINTS}, 2), got {waypoints.shape}")
    if not (np.isfinite(masks).all() and np.isfinite(waypoints).all()):
        raise ValueError("inputs must be finite")
    return masks, waypoints


class RoutePredictor(BaseEstimator):
    """Estimator wrapping :class:`RouteNet`.

    ``X`` is a pair ``(masks, waypoints)``: masks (N, 2, 48, 48) holding the
    road and lane-line channels, waypoints (N, 5, 2) in the ego frame. ``y``
    holds the oracle route masks (N, 48, 48).
    """

    def __init__(self, width: int = 64, heads: int = 4, epochs: int = 20, batch_size: int = 32,
                 lr: float = 1e-3, pos_weight: float = 4.0, threshold: float = 0.5,
                 max_time: float | None = None, random_state: int = 0, verbose: bool = False):
        self.width = width
        self.heads = heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.pos_weight = pos_weight
        self.threshold = threshold
        self.max_time = max_time
        self.random_state = random_state
        self.verbose = verbose

    def _init_net(self):
        self.net_ = RouteNet(self.width, self.heads, seed=self.random_state)
        self.optimizer_ = Adam(self.net_.named_layers() + [("pos", _PosEmbedding(self.net_))], lr=self.lr)
        self.loss_history_ = []

    def fit(self, X, y):
        masks, waypoints = _check_inputs(X)
        y = np.asarray(y, dtype=np.float32)
        if y.shape != (masks.shape[0], TOY, TOY):
            raise ValueError(f"y must have shape ({masks.shape[0]}, {TOY}, {TOY}), got {y.shape}")
        self._init_net()
        rng = np.random.default_rng(self.random_state)
        start = time.monotonic()
        for epoch in range(self.epochs):
            order = rng.permutation(len(masks))
            total = 0.0
            for i in range(0, len(order), self.batch_size):
                idx = order[i:i + self.batch_size]
                total += self._step(masks[idx], waypoints[idx], y[idx]) * len(idx)
            self.loss_history_.append(total / len(masks))
            if self.verbose:
                log.info("epoch %d loss %.4f (%.0fs)", epoch, self.loss_history_[-1], time.monotonic() - start)
            if self.max_time is not None and time.monotonic() - start > self.max_time:
                break
        self.n_epochs_ = len(self.loss_history_)
        return self

    def _step(self, masks, waypoints, y) -> float:
        self.optimizer_.zero_grad()
        logits = self.net_.forward(masks, waypoints)
        loss, grad = bce_with_logits(logits, y, self.pos_weight)
        self.net_.backward(grad)
        self.optimizer_.step()
        return loss

    def predict_proba(self, X) -> np.ndarray:
        """Route probabilities in [0, 1], shape (N, 48, 48)."""
        check_is_fitted(self, "net_")
        masks, waypoints = _check_inputs(X)
        out = [sigmoid(self.net_.forward(masks[i:i + 256], waypoints[i:i + 256]))
               for i in range(0, len(masks), 256)]
        return np.concatenate(out) if out else np.zeros((0, TOY, TOY), dtype=np.float32)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(np.uint8)

    def predict_full(self, X) -> np.ndarray:
        """Binary 192x192 route channels: bilinear upsampling of the probabilities, then the threshold."""
        prob = self.predict_proba(X)
        up = ndimage.zoom(prob, (1, GRID / TOY, GRID / TOY), order=1)
        return (up >= self.threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        """Mean IoU between thresholded predictions and ``y``."""
        pred = self.predict(X)
        y = np.asarray(y).astype(bool)
        return float(np.mean([iou(p, t) for p, t in zip(pred, y)]))

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "net_")
        layers = self.net_.named_layers()
        meta = {"params": self.get_params(), "pos": self.net_.pos.tolist(),
                "loss_history": self.loss_history_}
        return checkpoint_to_bytes(layers, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RoutePredictor":
        layers, meta = checkpoint_from_bytes(data)
        est = cls(**meta["params"])
        est._init_net()
        load_into(est.net_.named_layers(), layers)
        est.net_.pos[:] = np.asarray(meta["pos"], dtype=np.float32)
        est.loss_history_ = meta["loss_history"]
        est.n_epochs_ = len(est.loss_history_)
        return est
