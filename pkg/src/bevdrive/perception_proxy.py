"""Stand-ins for learned perception: IoU, calibrated mask degradation and a stop-zone classifier."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

IOU_TOLERANCE = 0.02
DEVIATION_SATURATION = 2.0
DEVIATION_WEIGHT = 0.5


def iou(mask_a, mask_b) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    a = np.asarray(mask_a)
    b = np.asarray(mask_b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


@dataclass
class DegradationProfile:
    target_iou: float
    ood_multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.target_iou <= 1.0:
            raise ValueError(f"target IoU must lie in (0, 1], got {self.target_iou}")
        if self.ood_multiplier < 1.0:
            raise ValueError(f"out-of-distribution multiplier must be >= 1, got {self.ood_multiplier}")

    def effective_target(self, deviation: float) -> float:
        """Target IoU lowered for a vehicle ``deviation`` metres away from the training distribution."""
        if deviation < 0:
            raise ValueError("deviation must be >= 0")
        shift = min(deviation / DEVIATION_SATURATION, 1.0) * DEVIATION_WEIGHT
        return self.target_iou / (1.0 + self.ood_multiplier * shift)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


class Degradation(NamedTuple):
    mask: np.ndarray
    iou: float
    target: float
    magnitude: float
    attainable: bool


def _ranked(field_: np.ndarray) -> np.ndarray:
    """Map values to their rank fraction in [0, 1) so thresholds select exact proportions."""
    flat = field_.reshape(-1)
    ranks = np.empty(flat.size)
    ranks[np.argsort(flat, kind="stable")] = np.arange(flat.size) / flat.size
    return ranks.reshape(field_.shape)


class _FlipFields:
    """Fixed random fields; the flipped set grows monotonically with magnitude."""

    def __init__(self, mask: np.ndarray, rng: np.random.Generator, band: int = 2, smooth: float = 1.5):
        m = mask.astype(bool)
        grown = ndimage.binary_dilation(m, iterations=band)
        shrunk = ndimage.binary_erosion(m, iterations=band, border_value=1)
        self.band = grown & ~shrunk
        self.boundary = _ranked(ndimage.gaussian_filter(rng.random(m.shape), smooth))
        self.salt = rng.random(m.shape)
        self.mask = m

    def flips(self, magnitude: float) -> np.ndarray:
        mb = min(1.0, 2.0 * magnitude)
        ms = max(0.0, 2.0 * magnitude - 1.0)
        return (self.band & (self.boundary < mb)) | (self.salt < ms)

    def apply(self, magnitude: float) -> np.ndarray:
        return self.mask ^ self.flips(magnitude)


def degrade_to_iou(mask, profile: DegradationProfile, deviation: float = 0.0,
                   rng: np.random.Generator | None = None, tol: float = IOU_TOLERANCE,
                   max_iter: int = 40) -> Degradation:
    """Corrupt ``mask`` by boundary erosion/dilation and salt-and-pepper flips to a target IoU.

    The target is ``profile.effective_target(deviation)``. Noise magnitude is
    bisected; the result is the magnitude whose IoU is closest to the target.
    An empty mask cannot be degraded and comes back unchanged with
    ``attainable=False``.
    """
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    target = profile.effective_target(deviation)
    if rng is None:
        rng = profile.rng()
    out_dtype = mask.dtype
    if target >= 1.0:
        return Degradation(mask.copy(), 1.0, target, 0.0, True)
    if not mask.any():
        return Degradation(mask.copy(), 1.0, target, 0.0, False)
    fields = _FlipFields(mask, rng)
    lo, hi = 0.0, 1.0
    best = (1.0, 0.0)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        value = iou(mask, fields.apply(mid))
        if abs(value - target) < abs(best[0] - target):
            best = (value, mid)
        if abs(value - target) <= tol * 0.05:
            break
        if value > target:
            lo = mid
        else:
            hi = mid
    value, magnitude = best
    return Degradation(fields.apply(magnitude).astype(out_dtype), value, target, magnitude,
                       abs(value - target) <= tol)


class MaskDegrader(TransformerMixin, BaseEstimator):
    """Transformer degrading a batch of binary masks to a target IoU.

    ``transform`` accepts masks of shape (N, H, W) and an optional per-mask
    ``deviation`` in metres. Randomness comes from a generator seeded at
    ``fit`` so repeated transforms keep drawing fresh noise.
    """

    def __init__(self, target_iou: float = 0.924, ood_multiplier: float = 1.0, random_state: int = 0):
        self.target_iou = target_iou
        self.ood_multiplier = ood_multiplier
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.profile_ = DegradationProfile(self.target_iou, self.ood_multiplier, self.random_state)
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def transform(self, X, deviation=0.0) -> np.ndarray:
        if not hasattr(self, "profile_"):
            self.fit()
        X = np.asarray(X)
        if X.ndim != 3:
            raise ValueError(f"expected masks of shape (N, H, W), got {X.shape}")
        dev = np.broadcast_to(np.asarray(deviation, dtype=np.float64), (len(X),))
        return np.stack([degrade_to_iou(m, self.profile_, d, self.rng_).mask for m, d in zip(X, dev)])


@dataclass
class StopClassifierSim:
    """Binary stop-zone detector with configured error rates and decision latency.

    A latent probability is drawn uniformly above the threshold with
    probability TPR (positives) or FPR (negatives), otherwise uniformly below
    it, so thresholding reproduces both rates exactly in expectation.
    """

    tpr: float = 1.0
    fpr: float = 0.0
    threshold: float = 0.4
    latency: int = 0
    _queue: deque = field(default_factory=deque, init=False, repr=False)

    def __post_init__(self):
        for name in ("tpr", "fpr"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")

    def reset(self) -> None:
        self._queue.clear()

    def latent(self, ground_truth: bool, rng: np.random.Generator) -> float:
        rate = self.tpr if ground_truth else self.fpr
        u = rng.random()
        if rng.random() < rate:
            return self.threshold + u * (1.0 - self.threshold)
        return u * self.threshold * (1.0 - 1e-12)

    def step(self, ground_truth: bool, rng: np.random.Generator) -> bool:
        decision = self.latent(bool(ground_truth), rng) >= self.threshold
        if not self._queue:
            self._queue.extend([decision] * self.latency)
        self._queue.append(decision)
        return self._queue.popleft()


def simulate_stop_classifier(ground_truth: bool, sim: StopClassifierSim, rng: np.random.Generator) -> bool:
    return sim.step(ground_truth, rng)
