"""Actor-critic network over the BEV tensor and the measurement vector."""

from __future__ import annotations

import copy

import numpy as np

from ..bev.raster import GRID
from ..bev.render import N_CHANNELS, ROUTE
from ..nn import Conv2d, Dense, Flatten, ReLU

ACTION_DIM = 2


class PolicyNet:
    """Conv trunk on the BEV, MLP on measurements, joint hidden layer, three heads.

    The first convolution uses a 4x4 stride-4 kernel to bring the 192x192
    input to 48x48 cheaply; three 3x3 stride-2 convolutions follow. The
    log-std head is a dense layer fed a constant 1, i.e. a learned,
    state-independent vector that still lives in the layer table.
    """

    def __init__(self, measurement_dim: int = 6, seed: int = 0, channels=(8, 16, 32, 32),
                 hidden: int = 128, init_log_std: float = -0.5):
        rng = np.random.default_rng(seed)
        c1, c2, c3, c4 = channels
        self.measurement_dim = measurement_dim
        self.conv1 = Conv2d(N_CHANNELS, c1, 4, stride=4, rng=rng)
        self.conv2 = Conv2d(c1, c2, 3, stride=2, padding=1, rng=rng)
        self.conv3 = Conv2d(c2, c3, 3, stride=2, padding=1, rng=rng)
        self.conv4 = Conv2d(c3, c4, 3, stride=2, padding=1, rng=rng)
        side = GRID // 4 // 8
        self.flat_dim = c4 * side * side
        self.bev_fc = Dense(self.flat_dim, hidden, rng=rng)
        self.meas_fc = Dense(measurement_dim, 32, rng=rng)
        self.joint = Dense(hidden + 32, hidden, rng=rng)
        self.mu_head = Dense(hidden, ACTION_DIM, rng=rng)
        self.value_head = Dense(hidden, 1, rng=rng)
        self.log_std_head = Dense(1, ACTION_DIM, rng=rng)
        self.mu_head.params["W"] *= 0.01
        self.value_head.params["W"] *= 0.1
        self.log_std_head.params["W"][:] = 0.0
        self.log_std_head.params["b"][:] = init_log_std
        self._relus = [ReLU() for _ in range(7)]
        self._flatten = Flatten()

    def named_layers(self):
        return [(n, getattr(self, n)) for n in ("conv1", "conv2", "conv3", "conv4", "bev_fc", "meas_fc",
                                                "joint", "mu_head", "value_head", "log_std_head")]

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def state(self) -> dict:
        return {n: copy.deepcopy(l.params) for n, l in self.named_layers()}

    def load_state(self, state: dict) -> None:
        for n, layer in self.named_layers():
            layer.params = copy.deepcopy(state[n])
            layer.zero_grad()

    def forward(self, bev: np.ndarray, meas: np.ndarray):
        """Returns ``(mu, log_std, value)`` with shapes (B, 2), (B, 2), (B,)."""
        if bev.ndim != 4 or bev.shape[1:] != (N_CHANNELS, GRID, GRID):
            raise ValueError(f"BEV batch must be (B, {N_CHANNELS}, {GRID}, {GRID}), got {bev.shape}")
        if meas.shape != (bev.shape[0], self.measurement_dim):
            raise ValueError(f"measurements must be (B, {self.measurement_dim}), got {meas.shape}")
        r = self._relus
        h = r[0].forward(self.conv1.forward(bev))
        h = r[1].forward(self.conv2.forward(h))
        h = r[2].forward(self.conv3.forward(h))
        h = r[3].forward(self.conv4.forward(h))
        hb = r[4].forward(self.bev_fc.forward(self._flatten.forward(h)))
        hm = r[5].forward(self.meas_fc.forward(meas))
        j = r[6].forward(self.joint.forward(np.concatenate([hb, hm], axis=1)))
        mu = self.mu_head.forward(j)
        value = self.value_head.forward(j)[:, 0]
        log_std = self.log_std_head.forward(np.ones((bev.shape[0], 1), dtype=np.float32))
        self._hidden = hb.shape[1]
        return mu, log_std, value

    def backward(self, dmu: np.ndarray, dlog_std: np.ndarray, dvalue: np.ndarray) -> None:
        r = self._relus
        dj = self.mu_head.backward(dmu.astype(np.float32))
        dj = dj + self.value_head.backward(dvalue[:, None].astype(np.float32))
        self.log_std_head.backward(dlog_std.astype(np.float32))
        dcat = self.joint.backward(r[6].backward(dj))
        dhb, dhm = dcat[:, :self._hidden], dcat[:, self._hidden:]
        self.meas_fc.backward(r[5].backward(dhm))
        dh = self._flatten.backward(self.bev_fc.backward(r[4].backward(dhb)))
        dh = self.conv4.backward(r[3].backward(dh))
        dh = self.conv3.backward(r[2].backward(dh))
        dh = self.conv2.backward(r[1].backward(dh))
        self.conv1.backward(r[0].backward(dh))


class ObservationStore:
    """Compact rollout storage: binary channels bit-packed, the route channel as uint8.

    The route channel is the only one that may be real-valued (target heatmap);
    environments quantize it to multiples of 1/255 so storage is lossless.
    """

    def __init__(self, capacity: int, measurement_dim: int):
        self.capacity = capacity
        plane = GRID * GRID
        self._bits = np.zeros((capacity, (N_CHANNELS - 1) * plane // 8), dtype=np.uint8)
        self._route = np.zeros((capacity, GRID, GRID), dtype=np.uint8)
        self.meas = np.zeros((capacity, measurement_dim), dtype=np.float32)
        self._others = [c for c in range(N_CHANNELS) if c != ROUTE]

    def put(self, i: int, bev: np.ndarray, meas: np.ndarray) -> None:
        others = bev[self._others]
        if not np.isin(others, (0.0, 1.0)).all():
            raise ValueError("only the route channel may hold non-binary values")
        self._bits[i] = np.packbits(others.astype(bool).reshape(-1))
        self._route[i] = np.round(bev[ROUTE] * 255.0).astype(np.uint8)
        self.meas[i] = meas

    def get(self, idx) -> tuple[np.ndarray, np.ndarray]:
        idx = np.atleast_1d(idx)
        out = np.zeros((len(idx), N_CHANNELS, GRID, GRID), dtype=np.float32)
        unpacked = np.unpackbits(self._bits[idx], axis=1).reshape(len(idx), N_CHANNELS - 1, GRID, GRID)
        out[:, self._others] = unpacked
        out[:, ROUTE] = self._route[idx] / np.float32(255.0)
        return out, self.meas[idx]
