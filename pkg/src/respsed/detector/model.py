"""Toy CNN-BiGRU segment detector in plain numpy with hand-written gradients.

Layout: conv1d (kernel 3, same padding) -> ReLU -> max-pool stride 2 over time
-> bidirectional GRU -> per-step affine -> logistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

GATES = ("z", "r", "h")  # update, reset, candidate
DIRECTIONS = ("fwd", "bwd")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModelParams:
    tensors: dict[str, np.ndarray]
    task: str = "I"

    def __post_init__(self):
        frozen = {}
        for name, arr in self.tensors.items():
            arr = np.array(arr, dtype=np.float64)
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "tensors", frozen)
        self.check()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def in_dim(self) -> int:
        return self.tensors["conv_w"].shape[1]

    @property
    def channels(self) -> int:
        return self.tensors["conv_w"].shape[2]

    @property
    def hidden(self) -> int:
        return self.tensors["fwd_Uz"].shape[0]

    def check(self) -> None:
        expected = param_shapes(self.in_dim, self.channels, self.hidden)
        if list(self.tensors) != list(expected):
            raise ShapeError(f"parameter names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape} != {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ShapeError(f"{name}: non-finite values")

    def replace(self, tensors: dict[str, np.ndarray]) -> ModelParams:
        return ModelParams(tensors, self.task)

    def n_params(self) -> int:
        return sum(a.size for a in self.tensors.values())


def param_shapes(in_dim: int, channels: int, hidden: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"conv_w": (3, in_dim, channels), "conv_b": (channels,)}
    for d in DIRECTIONS:
        for g in GATES:
            shapes[f"{d}_W{g}"] = (channels, hidden)
            shapes[f"{d}_U{g}"] = (hidden, hidden)
            shapes[f"{d}_b{g}"] = (hidden,)
    shapes["head_w"] = (2 * hidden,)
    shapes["head_b"] = (1,)
    return shapes


def init_model(seed=0, in_dim: int = 193, channels: int = 64, hidden: int = 32,
               task: str = "I") -> ModelParams:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    fan_in = {"conv_w": 3 * in_dim, "head_w": 2 * hidden}
    tensors = {}
    for name, shape in param_shapes(in_dim, channels, hidden).items():
        kind = name.split("_")[-1]
        if kind.startswith("b"):
            tensors[name] = np.zeros(shape)
            continue
        if name == "conv_w":
            limit = np.sqrt(6.0 / fan_in[name])  # ReLU follows
        elif name == "head_w":
            limit = np.sqrt(1.0 / fan_in[name])
        else:
            limit = np.sqrt(1.0 / shape[0])
        tensors[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(tensors, task)


@dataclass(frozen=True, eq=False)
class SegmentProbabilities:
    p: np.ndarray
    task: str = "I"

    def __post_init__(self):
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise ValueError("probabilities outside [0, 1]")

    def __len__(self):
        return len(self.p)


# --------------------------------------------------------------------------
# Forward pass


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def _conv_forward(m: ModelParams, x: np.ndarray):
    b, t, d = x.shape
    if d != m.in_dim:
        raise ShapeError(f"feature width {d} does not match model input width {m.in_dim}")
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    stacked = np.concatenate([xp[:, 0:t], xp[:, 1:t + 1], xp[:, 2:t + 2]], axis=2)
    pre = stacked @ m["conv_w"].reshape(3 * d, -1) + m["conv_b"]
    return stacked, pre


def _pool_forward(act: np.ndarray):
    b, t, c = act.shape
    if t % 2:
        act = np.concatenate([act, np.full((b, 1, c), -np.inf)], axis=1)
    pairs = act.reshape(b, -1, 2, c)
    idx = np.argmax(pairs, axis=2)
    return np.take_along_axis(pairs, idx[:, :, None, :], axis=2)[:, :, 0, :], idx


def _gru_forward(m: ModelParams, d: str, a: np.ndarray):
    b, t, _ = a.shape
    hdim = m.hidden
    xz = a @ m[f"{d}_Wz"] + m[f"{d}_bz"]
    xr = a @ m[f"{d}_Wr"] + m[f"{d}_br"]
    xh = a @ m[f"{d}_Wh"] + m[f"{d}_bh"]
    uz, ur, uh = m[f"{d}_Uz"], m[f"{d}_Ur"], m[f"{d}_Uh"]
    hs = np.zeros((b, t + 1, hdim))
    zs = np.empty((b, t, hdim))
    rs = np.empty((b, t, hdim))
    cs = np.empty((b, t, hdim))
    h = hs[:, 0]
    for i in range(t):
        z = expit(xz[:, i] + h @ uz)
        r = expit(xr[:, i] + h @ ur)
        c = np.tanh(xh[:, i] + (r * h) @ uh)
        h = (1.0 - z) * h + z * c
        zs[:, i], rs[:, i], cs[:, i], hs[:, i + 1] = z, r, c, h
    return hs, zs, rs, cs


def _forward(m: ModelParams, x: np.ndarray):
    x = _as_batch(x)
    stacked, pre = _conv_forward(m, x)
    act = np.maximum(pre, 0.0)
    pooled, idx = _pool_forward(act)
    fwd = _gru_forward(m, "fwd", pooled)
    bwd = _gru_forward(m, "bwd", pooled[:, ::-1])
    states = np.concatenate([fwd[0][:, 1:], bwd[0][:, 1:][:, ::-1]], axis=2)
    logits = states @ m["head_w"] + m["head_b"][0]
    cache = dict(x=x, stacked=stacked, pre=pre, idx=idx, pooled=pooled, fwd=fwd, bwd=bwd,
                 states=states)
    return logits, cache


def predict_logits(m: ModelParams, x: np.ndarray) -> np.ndarray:
    return _forward(m, x)[0]


def forward(m: ModelParams, f) -> SegmentProbabilities:
    """Per-segment probabilities for one feature matrix (T frames -> ceil(T/2))."""
    x = f.x if hasattr(f, "x") else f
    logits = predict_logits(m, x)[0]
    return SegmentProbabilities(expit(logits), m.task)


def forward_batch(m: ModelParams, x: np.ndarray) -> np.ndarray:
    return expit(predict_logits(m, x))


# --------------------------------------------------------------------------
# Loss and backward pass


def bce_from_logits(logits: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, logits) - target * logits))


def _gru_backward(m: ModelParams, d: str, a: np.ndarray, cache, d_states: np.ndarray):
    hs, zs, rs, cs = cache
    b, t, hdim = zs.shape
    uz, ur, uh = m[f"{d}_Uz"], m[f"{d}_Ur"], m[f"{d}_Uh"]
    d_uz = np.zeros_like(uz)
    d_ur = np.zeros_like(ur)
    d_uh = np.zeros_like(uh)
    d_xz = np.empty((b, t, hdim))
    d_xr = np.empty((b, t, hdim))
    d_xh = np.empty((b, t, hdim))
    dh_next = np.zeros((b, hdim))
    for i in range(t - 1, -1, -1):
        h_prev, z, r, c = hs[:, i], zs[:, i], rs[:, i], cs[:, i]
        dh = d_states[:, i] + dh_next
        dc_pre = dh * z * (1.0 - c * c)
        dz_pre = dh * (c - h_prev) * z * (1.0 - z)
        rh = r * h_prev
        d_rh = dc_pre @ uh.T
        dr_pre = d_rh * h_prev * r * (1.0 - r)
        d_uh += rh.T @ dc_pre
        d_uz += h_prev.T @ dz_pre
        d_ur += h_prev.T @ dr_pre
        dh_next = dh * (1.0 - z) + d_rh * r + dz_pre @ uz.T + dr_pre @ ur.T
        d_xz[:, i], d_xr[:, i], d_xh[:, i] = dz_pre, dr_pre, dc_pre
    grads = {}
    d_a = np.zeros_like(a)
    for g, dx, du in (("z", d_xz, d_uz), ("r", d_xr, d_ur), ("h", d_xh, d_uh)):
        grads[f"{d}_W{g}"] = np.einsum("btc,bth->ch", a, dx)
        grads[f"{d}_U{g}"] = du
        grads[f"{d}_b{g}"] = dx.sum(axis=(0, 1))
        d_a += dx @ m[f"{d}_W{g}"].T
    return grads, d_a


def loss_and_grad(m: ModelParams, x: np.ndarray, target: np.ndarray):
    """Mean binary cross-entropy over all segments and its parameter gradient."""
    logits, cache = _forward(m, x)
    target = np.asarray(target, dtype=np.float64).reshape(logits.shape)
    loss = bce_from_logits(logits, target)
    d_logits = (expit(logits) - target) / logits.size

    hdim = m.hidden
    grads = {}
    grads["head_w"] = np.einsum("btk,bt->k", cache["states"], d_logits)
    grads["head_b"] = np.array([d_logits.sum()])
    d_states = d_logits[..., None] * m["head_w"]
    pooled = cache["pooled"]
    g_f, da_f = _gru_backward(m, "fwd", pooled, cache["fwd"], d_states[..., :hdim])
    g_b, da_b = _gru_backward(m, "bwd", pooled[:, ::-1], cache["bwd"],
                              d_states[..., hdim:][:, ::-1])
    grads.update(g_f)
    grads.update(g_b)
    d_pooled = da_f + da_b[:, ::-1]

    pre = cache["pre"]
    b, t, c = pre.shape
    t_pad = t + (t % 2)
    d_pairs = np.zeros((b, t_pad // 2, 2, c))
    np.put_along_axis(d_pairs, cache["idx"][:, :, None, :], d_pooled[:, :, None, :], axis=2)
    d_act = d_pairs.reshape(b, t_pad, c)[:, :t]
    d_pre = d_act * (pre > 0)
    stacked = cache["stacked"]
    grads["conv_w"] = (stacked.reshape(-1, stacked.shape[2]).T @ d_pre.reshape(-1, c)).reshape(
        m["conv_w"].shape)
    grads["conv_b"] = d_pre.sum(axis=(0, 1))
    return loss, {name: grads[name] for name in m.tensors}
