"""
HDC-MiniROCKET: positional encodings bound to bipolarized convolution outputs.

Each feature ``k`` owns a random phase ``phi_k``; its encoding at input
position ``t`` is ``cos(phi_k * s * t / (L - 1))``. The convolution output is
bipolarized against the bias, bound (multiplied) with the encoding and bundled
(summed) over time, then rescaled to [0, 1]. With ``s = 0`` the encoding is
constant 1 and the features equal plain PPV.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rocket import FittedTransform, _as_batch, _is_single, conv_positions, group_tables, pooled

SCALES = (1, 2, 5, 7, 10, 20, 50, 100)
DEFAULT_SCALE = 5.0


@dataclass(frozen=True)
class PositionalEncoding:
    phases: np.ndarray
    scale: float
    length: int

    def at(self, positions) -> np.ndarray:
        """Encoding values, shape (D, len(positions))."""
        positions = np.asarray(positions, dtype=np.float64)
        if self.scale == 0:
            return np.ones((len(self.phases), len(positions)))
        return np.cos(np.outer(self.phases, positions) * (self.scale / (self.length - 1)))

    def similarity(self, dt, ref: int = 0) -> float:
        """Mean over features of p_k(ref) * p_k(ref + dt)."""
        p = self.at([ref, ref + dt])
        return float(np.mean(p[:, 0] * p[:, 1]))


def draw_phases(D: int, seed: int) -> np.ndarray:
    """Uniform phases on (-pi, pi]."""
    u = np.random.default_rng([seed, 1]).uniform(0.0, 2.0 * np.pi, size=D)
    return np.pi - u


def make_encoding(D: int, length: int, scale: float, seed: int) -> PositionalEncoding:
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale > 0 and length < 2:
        raise ValueError("positional encoding with s > 0 needs length >= 2")
    return PositionalEncoding(draw_phases(D, seed), float(scale), int(length))


def expected_similarity(dt, scale: float, length: int):
    """sinc(s * dt / (L - 1)), the large-D limit of the encoding similarity."""
    return np.sinc(scale * np.asarray(dt, dtype=np.float64) / (length - 1))


def graded_ppv(conv_out, bias: float, p_row) -> float:
    """Bundled bipolar code rescaled to [0, 1]: (sum_t c(t) p(t) + T) / (2T)."""
    conv_out = np.asarray(conv_out, dtype=np.float64)
    p_row = np.asarray(p_row, dtype=np.float64)
    if conv_out.size == 0:
        raise ValueError("graded PPV of an empty convolution output")
    if p_row.shape != conv_out.shape:
        raise ValueError("encoding row must match the convolution output length")
    c = np.where(conv_out > bias, 1.0, -1.0)
    t = conv_out.size
    return (float(np.sum(c * p_row)) + t) / (2 * t)


def encoding_table(fitted: FittedTransform, scale: float) -> np.ndarray:
    """Encoding values per (group, kernel, slot, output index), zero beyond each T."""
    L = fitted.length
    dils, pads, fidx, nslots = group_tables(fitted.schedule)
    P = np.zeros(fidx.shape + (L,))
    for g, (d, padded) in enumerate(zip(dils, pads)):
        pos = conv_positions(L, int(d), bool(padded))
        ph = fitted.phases[fidx[g, :, : nslots[g]]]
        P[g, :, : nslots[g], : len(pos)] = np.cos(ph[..., None] * pos * (scale / (L - 1)))
    return P


def hdc_transform(x, fitted: FittedTransform, scale: float | None = None, workers: int = 1) -> np.ndarray:
    """HDC-MiniROCKET features at ``scale`` (defaults to ``fitted.scale``)."""
    s = fitted.scale if scale is None else float(scale)
    if s < 0:
        raise ValueError("scale must be non-negative")
    if s > 0 and fitted.phases is None:
        raise ValueError("fitted transform carries no encoding phases")
    if s > 0 and fitted.length < 2:
        raise ValueError("positional encoding with s > 0 needs length >= 2")
    P = encoding_table(fitted, s) if s > 0 else None
    out = pooled(_as_batch(x), fitted, P, workers=workers)
    return out[0] if _is_single(x) else out
