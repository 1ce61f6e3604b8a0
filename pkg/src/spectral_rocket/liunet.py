"""
LiuNet, a compact 1D CNN, in numpy.

Up to four stages of same-padded Conv1d (kernel 6) -> ReLU -> MaxPool(2),
with widths 6, 12, 18, 24, followed by flatten and one dense softmax layer.
Spectra too short for four poolings lose trailing stages (see
:func:`adapt_depth`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WIDTHS = (6, 12, 18, 24)
KERNEL_SIZE = 6
POOL = 2
PAD_LEFT = (KERNEL_SIZE - 1) // 2
PAD_RIGHT = KERNEL_SIZE - 1 - PAD_LEFT


def stage_lengths(length: int, depth: int, padding: str = "same") -> list[int]:
    """Feature-map length after each conv+pool stage."""
    out = []
    for _ in range(depth):
        if padding == "valid":
            length = length - KERNEL_SIZE + 1
        length = max(length, 0) // POOL
        out.append(length)
    return out


def adapt_depth(b_eff: int, padding: str = "same") -> int:
    """Largest depth <= 4 whose final feature map is non-empty."""
    best = 0
    for depth in range(1, len(WIDTHS) + 1):
        if stage_lengths(b_eff, depth, padding)[-1] >= 1:
            best = depth
    if best == 0:
        raise ValueError(f"no LiuNet depth fits spectra of length {b_eff}")
    return best


def count_parameters(b_eff: int, classes: int, depth: int | None = None, padding: str = "same") -> int:
    """Closed-form parameter count from the layer shapes alone."""
    depth = adapt_depth(b_eff, padding) if depth is None else depth
    total, in_ch = 0, 1
    for width in WIDTHS[:depth]:
        total += width * in_ch * KERNEL_SIZE + width
        in_ch = width
    flat = in_ch * stage_lengths(b_eff, depth, padding)[-1]
    return total + flat * classes + classes


@dataclass
class LiuNetParams:
    length: int
    classes: int
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray]
    dense_w: np.ndarray
    dense_b: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.conv_w)

    @property
    def flat_dim(self) -> int:
        return self.dense_w.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"conv{i}.weight"] = w
            out[f"conv{i}.bias"] = b
        out["dense.weight"] = self.dense_w
        out["dense.bias"] = self.dense_b
        return out

    @classmethod
    def from_arrays(cls, length: int, classes: int, arrays: dict[str, np.ndarray]) -> "LiuNetParams":
        depth = sum(1 for k in arrays if k.startswith("conv") and k.endswith(".weight"))
        return cls(
            length,
            classes,
            [np.asarray(arrays[f"conv{i}.weight"], dtype=np.float64) for i in range(depth)],
            [np.asarray(arrays[f"conv{i}.bias"], dtype=np.float64) for i in range(depth)],
            np.asarray(arrays["dense.weight"], dtype=np.float64),
            np.asarray(arrays["dense.bias"], dtype=np.float64),
        )

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def copy(self) -> "LiuNetParams":
        return LiuNetParams.from_arrays(self.length, self.classes, {k: v.copy() for k, v in self.arrays().items()})


def init_params(length: int, classes: int, seed: int = 0, depth: int | None = None) -> LiuNetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of every weight and bias."""
    depth = adapt_depth(length) if depth is None else depth
    if depth < 1 or stage_lengths(length, depth)[-1] < 1:
        raise ValueError(f"depth {depth} does not fit spectra of length {length}")
    rng = np.random.default_rng(seed)
    conv_w, conv_b, in_ch = [], [], 1
    for width in WIDTHS[:depth]:
        bound = 1.0 / np.sqrt(in_ch * KERNEL_SIZE)
        conv_w.append(rng.uniform(-bound, bound, (width, in_ch, KERNEL_SIZE)))
        conv_b.append(rng.uniform(-bound, bound, width))
        in_ch = width
    flat = in_ch * stage_lengths(length, depth)[-1]
    bound = 1.0 / np.sqrt(flat)
    dense_w = rng.uniform(-bound, bound, (flat, classes))
    dense_b = rng.uniform(-bound, bound, classes)
    return LiuNetParams(length, classes, conv_w, conv_b, dense_w, dense_b)


def _windows(x: np.ndarray) -> np.ndarray:
    """(N, C, L) -> same-padded sliding windows (N, C, L, K)."""
    xp = np.pad(x, ((0, 0), (0, 0), (PAD_LEFT, PAD_RIGHT)))
    return np.lib.stride_tricks.sliding_window_view(xp, KERNEL_SIZE, axis=2)


def forward(params: LiuNetParams, x):
    """Logits for a batch (N, L) or a single spectrum (L,), plus caches for :func:`backward`."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != params.length:
        raise ValueError(f"expected spectra of length {params.length}, got shape {x.shape}")
    h = x[:, None, :]
    caches = []
    for w, b in zip(params.conv_w, params.conv_b):
        cols = _windows(h)
        z = np.einsum("nclk,ock->nol", cols, w, optimize=True) + b[None, :, None]
        a = np.maximum(z, 0.0)
        n, c, length = a.shape
        half = length // POOL
        blocks = a[:, :, : half * POOL].reshape(n, c, half, POOL)
        arg = blocks.argmax(axis=-1)
        h = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        caches.append((cols, z, arg, length))
    flat = h.reshape(len(h), -1)
    logits = flat @ params.dense_w + params.dense_b
    caches.append(flat)
    return (logits[0] if single else logits), caches


def backward(params: LiuNetParams, caches, dlogits) -> LiuNetParams:
    """Gradients of a loss w.r.t. every parameter, given dLoss/dLogits (N, c)."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.ndim == 1:
        dlogits = dlogits[None]
    flat = caches[-1]
    d_dense_w = flat.T @ dlogits
    d_dense_b = dlogits.sum(axis=0)
    dh = (dlogits @ params.dense_w.T).reshape(len(flat), params.conv_w[-1].shape[0], -1)
    d_conv_w = [None] * params.depth
    d_conv_b = [None] * params.depth
    for i in reversed(range(params.depth)):
        cols, z, arg, length = caches[i]
        n, c, half = dh.shape
        da = np.zeros((n, c, length))
        blocks = np.zeros((n, c, half, POOL))
        np.put_along_axis(blocks, arg[..., None], dh[..., None], axis=-1)
        da[:, :, : half * POOL] = blocks.reshape(n, c, half * POOL)
        dz = da * (z > 0)
        d_conv_w[i] = np.einsum("nol,nclk->ock", dz, cols, optimize=True)
        d_conv_b[i] = dz.sum(axis=(0, 2))
        if i == 0:
            break
        dcols = np.einsum("nol,ock->nclk", dz, params.conv_w[i], optimize=True)
        dxp = np.zeros((n, dcols.shape[1], length + KERNEL_SIZE - 1))
        for k in range(KERNEL_SIZE):
            dxp[:, :, k : k + length] += dcols[..., k]
        dh = dxp[:, :, PAD_LEFT : PAD_LEFT + length]
    return LiuNetParams(params.length, params.classes, d_conv_w, d_conv_b, d_dense_w, d_dense_b)
