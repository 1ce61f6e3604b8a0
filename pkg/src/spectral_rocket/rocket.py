"""
MiniROCKET feature transform for single-channel spectra.

84 fixed kernels of length 9 (weights -1/+2), a dilation schedule derived from
the input length, biases fitted on one batch of training spectra, and
proportion-of-positive-values (PPV) pooling. Every input length maps to
84 * 119 = 9996 features.

Feature ``k`` is laid out as ``offset[j] + kernel * feature_count[j] + slot``
for dilation entry ``j``. Slot ``i`` of entry ``j`` uses zero padding when
``(i + j)`` is even, valid convolution otherwise (or always padding when the
dilated kernel does not fit the input).
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

KERNEL_LENGTH = 9
NUM_KERNELS = 84
FEATURES_PER_KERNEL = 119
FEATURE_DIM = NUM_KERNELS * FEATURES_PER_KERNEL
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

_MAGIC = b"MRKT"
_VERSION = 1


@lru_cache(maxsize=1)
def _positive_taps() -> np.ndarray:
    idx = np.array(list(combinations(range(KERNEL_LENGTH), 3)), dtype=np.intp)
    idx.flags.writeable = False
    return idx


def build_kernel_set() -> np.ndarray:
    """All 84 weight patterns as an (84, 9) int array, lexicographic in the +2 positions."""
    w = np.full((NUM_KERNELS, KERNEL_LENGTH), -1, dtype=np.int64)
    np.put_along_axis(w, _positive_taps(), 2, axis=1)
    return w


@dataclass(frozen=True)
class DilationSchedule:
    length: int
    dilations: tuple[int, ...]
    feature_counts: tuple[int, ...]
    padded_counts: tuple[int, ...]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(np.asarray(self.feature_counts) * NUM_KERNELS)[:-1]]).astype(int)

    def valid_fits(self, d: int) -> bool:
        return self.length >= (KERNEL_LENGTH - 1) * d + 1

    def slot_padded(self, entry: int) -> np.ndarray:
        fc = self.feature_counts[entry]
        if not self.valid_fits(self.dilations[entry]):
            return np.ones(fc, dtype=bool)
        return (np.arange(fc) + entry) % 2 == 0

    def groups(self):
        """Yield ``(dilation, padded, feature_index)`` with feature_index of shape (84, n_slots)."""
        offsets = self.offsets
        for j, (d, fc) in enumerate(zip(self.dilations, self.feature_counts)):
            mask = self.slot_padded(j)
            base = offsets[j] + np.arange(NUM_KERNELS)[:, None] * fc
            for padded in (True, False):
                slots = np.flatnonzero(mask == padded)
                if len(slots):
                    yield d, padded, base + slots[None, :]

    def describe(self):
        """Per-feature (dilation, kernel, padded) arrays, length 9996."""
        dil = np.empty(FEATURE_DIM, dtype=np.int64)
        ker = np.empty(FEATURE_DIM, dtype=np.int64)
        pad = np.empty(FEATURE_DIM, dtype=bool)
        for d, padded, fidx in self.groups():
            dil[fidx] = d
            ker[fidx] = np.arange(NUM_KERNELS)[:, None]
            pad[fidx] = padded
        return dil, ker, pad


def dilation_schedule(length: int) -> DilationSchedule:
    """Geometrically spaced dilations capped at ``max(L-1, 8) / 8``.

    119 exponents are spaced evenly on ``[0, log2(max(L-1, 8) / 8)]``; the
    distinct floored powers of two become the dilations and the 119 features
    per kernel are spread evenly over them (earlier dilations take the
    remainder).
    """
    if length < 1:
        raise ValueError("input length must be positive")
    span = max(length - 1, KERNEL_LENGTH - 1)
    cap = span // (KERNEL_LENGTH - 1)
    exponent = math.log2(span / (KERNEL_LENGTH - 1))
    steps = np.arange(FEATURES_PER_KERNEL) * (exponent / (FEATURES_PER_KERNEL - 1))
    raw = np.minimum(np.floor(2.0**steps + 1e-9).astype(np.int64), cap)
    dilations = np.unique(raw)
    n = len(dilations)
    counts = np.full(n, FEATURES_PER_KERNEL // n, dtype=np.int64)
    counts[: FEATURES_PER_KERNEL % n] += 1
    sched = DilationSchedule(length, tuple(int(d) for d in dilations), tuple(int(c) for c in counts), ())
    padded = tuple(int(sched.slot_padded(j).sum()) for j in range(n))
    return DilationSchedule(length, sched.dilations, sched.feature_counts, padded)


def dilated_convolve(x, kernel, d: int, padded: bool) -> np.ndarray:
    """Dilated 9-tap convolution (cross-correlation) of a single sequence.

    ``padded`` uses ``4 * d`` zeros on both sides so the output has length L;
    otherwise only fully overlapping positions are kept (length ``L - 8d``).
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(kernel, dtype=np.float64)
    if not padded and len(x) < (KERNEL_LENGTH - 1) * d + 1:
        raise ValueError(f"valid convolution needs length >= {8 * d + 1}, got {len(x)}")
    if padded:
        x = np.pad(x, 4 * d)
    t = len(x) - 8 * d
    out = np.zeros(t)
    for j in range(KERNEL_LENGTH):
        out += w[j] * x[j * d : j * d + t]
    return out


def _batched_conv(X: np.ndarray, d: int, padded: bool) -> np.ndarray:
    """Convolve every row of ``X`` (N, L) with all 84 kernels -> (N, 84, T).

    Uses conv = 3 * (sum of the three +2 taps) - (sum of all taps), with both
    sums accumulated in tap order so results are reproducible bit for bit.
    """
    if padded:
        X = np.pad(X, ((0, 0), (4 * d, 4 * d)))
    t = X.shape[1] - 8 * d
    taps = np.stack([X[:, j * d : j * d + t] for j in range(KERNEL_LENGTH)], axis=1)
    total = taps[:, 0].copy()
    for j in range(1, KERNEL_LENGTH):
        total += taps[:, j]
    idx = _positive_taps()
    pos = taps[:, idx[:, 0]] + taps[:, idx[:, 1]]
    pos += taps[:, idx[:, 2]]
    return 3.0 * pos - total[:, None, :]


def conv_positions(length: int, d: int, padded: bool) -> np.ndarray:
    """Input position under the centre tap for each convolution output index."""
    if padded:
        return np.arange(length)
    return np.arange(length - 8 * d) + 4 * d


def ppv(conv_out, bias: float) -> float:
    """Fraction of ``conv_out`` strictly greater than ``bias``."""
    conv_out = np.asarray(conv_out)
    if conv_out.size == 0:
        raise ValueError("PPV of an empty convolution output")
    return np.count_nonzero(conv_out > bias) / conv_out.size


def quantiles(n: int) -> np.ndarray:
    """Golden-ratio low-discrepancy sequence fract((i + 1) * (sqrt(5) - 1) / 2)."""
    return np.mod(np.arange(1, n + 1) * GOLDEN, 1.0)


def nearest_rank(sorted_vals: np.ndarray, q) -> np.ndarray:
    """Nearest-rank quantile along the last axis of pre-sorted values."""
    t = sorted_vals.shape[-1]
    rank = np.clip(np.ceil(np.asarray(q) * t).astype(np.int64), 1, t)
    return np.take_along_axis(sorted_vals, (rank - 1)[..., None], axis=-1)[..., 0]


@dataclass
class FittedTransform:
    """Frozen MiniROCKET/HDC-MiniROCKET state for one input length."""

    schedule: DilationSchedule
    biases: np.ndarray
    scale: float = 0.0
    phases: np.ndarray | None = None
    seed: int = 0
    kernels: np.ndarray = field(default_factory=build_kernel_set, repr=False)

    def __post_init__(self):
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.biases.shape != (FEATURE_DIM,):
            raise ValueError(f"expected {FEATURE_DIM} biases, got {self.biases.shape}")
        if self.scale < 0:
            raise ValueError("scale must be non-negative")
        if self.phases is not None:
            self.phases = np.asarray(self.phases, dtype=np.float64)

    @property
    def length(self) -> int:
        return self.schedule.length

    @property
    def feature_dim(self) -> int:
        return FEATURE_DIM

    def with_scale(self, scale: float) -> "FittedTransform":
        return FittedTransform(self.schedule, self.biases, scale, self.phases, self.seed)

    def to_bytes(self) -> bytes:
        """Little-endian layout::

            magic  4s  b"MRKT"
            version u32
            length u32, seed i64, scale f64, n_entries u32
            n_entries x (dilation u32, feature_count u32, padded_count u32)
            has_phases u8
            biases  9996 x f64
            phases  9996 x f64  (only when has_phases)
        """
        buf = io.BytesIO()
        s = self.schedule
        buf.write(struct.pack("<4sIIqdI", _MAGIC, _VERSION, s.length, self.seed, self.scale, len(s.dilations)))
        for entry in zip(s.dilations, s.feature_counts, s.padded_counts):
            buf.write(struct.pack("<III", *entry))
        buf.write(struct.pack("<B", self.phases is not None))
        buf.write(self.biases.astype("<f8").tobytes())
        if self.phases is not None:
            buf.write(self.phases.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FittedTransform":
        head = struct.calcsize("<4sIIqdI")
        magic, version, length, seed, scale, n = struct.unpack_from("<4sIIqdI", data, 0)
        if magic != _MAGIC:
            raise ValueError("not a fitted transform file")
        if version != _VERSION:
            raise ValueError(f"unsupported fitted transform version {version}")
        pos = head
        entries = [struct.unpack_from("<III", data, pos + 12 * i) for i in range(n)]
        pos += 12 * n
        (has_phases,) = struct.unpack_from("<B", data, pos)
        pos += 1
        nbytes = 8 * FEATURE_DIM
        if len(data) != pos + nbytes * (1 + has_phases):
            raise ValueError("fitted transform file has wrong size")
        biases = np.frombuffer(data, "<f8", FEATURE_DIM, pos).astype(np.float64)
        phases = np.frombuffer(data, "<f8", FEATURE_DIM, pos + nbytes).astype(np.float64) if has_phases else None
        sched = DilationSchedule(length, *(tuple(int(e[k]) for e in entries) for k in range(3)))
        if sched != dilation_schedule(length):
            raise ValueError("stored dilation schedule does not match this implementation")
        return cls(sched, biases, scale, phases, seed)


def fit_biases(first_batch, schedule: DilationSchedule, seed: int) -> np.ndarray:
    """One bias per feature from the convolution output of a seeded random spectrum.

    Feature ``k`` draws a spectrum from ``first_batch`` and takes the
    nearest-rank quantile ``fract((k + 1) * golden)`` of its convolution
    output for that feature's kernel, dilation and padding.
    """
    X = _as_batch(first_batch)
    if len(X) == 0:
        raise ValueError("bias fitting needs at least one spectrum")
    if X.shape[1] != schedule.length:
        raise ValueError(f"spectra have length {X.shape[1]}, schedule expects {schedule.length}")
    rng = np.random.default_rng([seed, 0])
    pick = rng.integers(0, len(X), size=FEATURE_DIM)
    q = quantiles(FEATURE_DIM)
    biases = np.empty(FEATURE_DIM)
    for d, padded, fidx in schedule.groups():
        used, inverse = np.unique(pick[fidx], return_inverse=True)
        conv = np.sort(_batched_conv(X[used], d, padded), axis=-1)
        sel = conv[inverse.reshape(fidx.shape), np.arange(NUM_KERNELS)[:, None]]
        biases[fidx] = nearest_rank(sel, q[fidx])
    return biases


def fit(first_batch, seed: int = 0, scale: float = 0.0) -> FittedTransform:
    """Fit the transform on one batch of spectra (N, L)."""
    from .hdc import make_encoding

    X = _as_batch(first_batch)
    schedule = dilation_schedule(X.shape[1])
    biases = fit_biases(X, schedule, seed)
    phases = make_encoding(FEATURE_DIM, X.shape[1], scale, seed).phases
    return FittedTransform(schedule, biases, scale, phases, seed)


def _as_batch(x) -> np.ndarray:
    if hasattr(x, "spectra"):
        x = x.spectra
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected spectra of shape (N, L), got {X.shape}")
    return X


def _is_single(x) -> bool:
    return not hasattr(x, "spectra") and np.ndim(x) == 1


def group_tables(schedule: DilationSchedule):
    """Dense per-group arrays (dilations, padded flags, feature indices, slot counts)."""
    groups = list(schedule.groups())
    smax = max(f.shape[1] for _, _, f in groups)
    dils = np.array([d for d, _, _ in groups], dtype=np.int64)
    pads = np.array([p for _, p, _ in groups], dtype=np.bool_)
    fidx = np.zeros((len(groups), NUM_KERNELS, smax), dtype=np.int64)
    nslots = np.zeros(len(groups), dtype=np.int64)
    for g, (_, _, f) in enumerate(groups):
        fidx[g, :, : f.shape[1]] = f
        nslots[g] = f.shape[1]
    return dils, pads, fidx, nslots


_NO_WEIGHTS = np.zeros((1, 1, 1, 1))


def pooled(X: np.ndarray, fitted: FittedTransform, P=None, workers: int = 1, chunk: int = 1024) -> np.ndarray:
    """Run the fused convolution/pooling kernel over rows of ``X``.

    ``P`` (groups, 84, slots, T) switches to position-weighted bundling.
    Rows are split into chunks handed to ``workers`` threads; every output
    row depends only on its input row, so results do not depend on
    ``workers``.
    """
    from ._kernels import pooled_features

    if X.shape[1] != fitted.length:
        raise ValueError(f"spectra have length {X.shape[1]}, transform fitted for {fitted.length}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    dils, pads, fidx, nslots = group_tables(fitted.schedule)
    taps = np.ascontiguousarray(_positive_taps(), dtype=np.int64)
    weighted = P is not None
    P = np.ascontiguousarray(P) if weighted else _NO_WEIGHTS
    out = np.empty((len(X), FEATURE_DIM))

    def run(lo):
        hi = min(lo + chunk, len(X))
        pooled_features(X[lo:hi], taps, dils, pads, fidx, nslots, fitted.biases, P, weighted, out[lo:hi])

    starts = range(0, len(X), chunk)
    if workers > 1 and len(X) > chunk:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return out


def transform(x, fitted: FittedTransform, workers: int = 1) -> np.ndarray:
    """MiniROCKET PPV features: (L,) -> (9996,), (N, L) -> (N, 9996)."""
    out = pooled(_as_batch(x), fitted, workers=workers)
    return out[0] if _is_single(x) else out
