"""Fused convolution + pooling loops (numba)."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def pooled_features(X, taps, dils, pads, fidx, nslots, biases, P, weighted, out):
    """Write one feature per (group, kernel, slot) into ``out`` (N, D).

    ``fidx[g, k, s]`` is the feature index of slot ``s`` of kernel ``k`` in
    group ``g``. Unweighted features are PPV; weighted ones bundle the
    bipolarized output against ``P[g, k, s, :T]`` and rescale to [0, 1].
    Convolution sums run in tap order to match the numpy path bit for bit.
    """
    n_samples, length = X.shape
    n_kernels = taps.shape[0]
    total = np.empty(length)
    conv = np.empty(length)
    for n in range(n_samples):
        x = X[n]
        for g in range(dils.shape[0]):
            d = dils[g]
            if pads[g]:
                t_out = length
                start = -4 * d
            else:
                t_out = length - 8 * d
                start = 0
            for t in range(t_out):
                acc = 0.0
                for j in range(9):
                    i = start + t + j * d
                    if 0 <= i < length:
                        acc += x[i]
                    else:
                        acc += 0.0
                total[t] = acc
            for k in range(n_kernels):
                ia = start + taps[k, 0] * d
                ib = start + taps[k, 1] * d
                ic = start + taps[k, 2] * d
                for t in range(t_out):
                    va = x[ia + t] if 0 <= ia + t < length else 0.0
                    vb = x[ib + t] if 0 <= ib + t < length else 0.0
                    vc = x[ic + t] if 0 <= ic + t < length else 0.0
                    pos = va + vb
                    pos += vc
                    conv[t] = 3.0 * pos - total[t]
                for s in range(nslots[g]):
                    f = fidx[g, k, s]
                    b = biases[f]
                    if weighted:
                        acc = 0.0
                        for t in range(t_out):
                            if conv[t] > b:
                                acc += P[g, k, s, t]
                            else:
                                acc -= P[g, k, s, t]
                        out[n, f] = (acc + t_out) / (2 * t_out)
                    else:
                        cnt = 0
                        for t in range(t_out):
                            if conv[t] > b:
                                cnt += 1
                        out[n, f] = cnt / t_out
