"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``DOZERFORMER_DISABLE_NUMBA=1`` before import to force the numpy path.
Both variants are always importable as ``NUMPY_KERNELS`` / ``NUMBA_KERNELS``
so the benchmark and the parity tests can compare them side by side.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_disabled() -> bool:
    return os.environ.get("DOZERFORMER_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def _np_masked_softmax(scores, mask):
    # scores: (R, q, k); mask: (q, k) bool
    neg = np.where(mask, scores, -np.inf)
    row_max = neg.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(neg - row_max), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _np_masked_softmax_backward(y, dy):
    return y * (dy - (y * dy).sum(axis=-1, keepdims=True))


def _np_moving_average(x, k):
    # x: (T, D); replicate padding keeps the length
    half = (k - 1) // 2
    padded = np.concatenate([np.repeat(x[:1], half, axis=0), x, np.repeat(x[-1:], half, axis=0)], axis=0)
    csum = np.concatenate([np.zeros((1, x.shape[1])), np.cumsum(padded, axis=0)], axis=0)
    return (csum[k:] - csum[:-k]) / k


def _np_local_self(n, half):
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :]) <= half


def _np_stride_self(n, interval):
    idx = np.arange(n)
    return (idx[:, None] - idx[None, :]) % interval == 0


def _np_local_cross(n_dec, n_enc, half):
    j = np.arange(n_enc)
    row = (n_enc - 1 - j) <= half
    return np.broadcast_to(row, (n_dec, n_enc)).copy()


def _np_stride_cross(n_dec, n_enc, offset, interval, anchor_end):
    i = np.arange(n_dec)[:, None]
    j = np.arange(n_enc)[None, :]
    if anchor_end:
        return np.broadcast_to((n_enc - 1 - j) % interval == 0, (n_dec, n_enc)).copy()
    return ((offset + i) - j) % interval == 0


def _np_vary_cross(n_dec, n_enc, label, v):
    i = np.arange(n_dec)[:, None]
    j = np.arange(n_enc)[None, :]
    span = np.minimum(v + i - label, n_enc)  # v + h - 1 with h = i - label + 1
    return (i >= label) & (j >= n_enc - span)


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    masked_softmax=_np_masked_softmax,
    masked_softmax_backward=_np_masked_softmax_backward,
    moving_average=_np_moving_average,
    local_self=_np_local_self,
    stride_self=_np_stride_self,
    local_cross=_np_local_cross,
    stride_cross=_np_stride_cross,
    vary_cross=_np_vary_cross,
)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

def _build_numba_kernels():
    njit = numba.njit(cache=True)

    @njit
    def masked_softmax(scores, mask):
        R, q, k = scores.shape
        out = np.zeros_like(scores)
        for r in range(R):
            for i in range(q):
                m = -np.inf
                for j in range(k):
                    if mask[i, j] and scores[r, i, j] > m:
                        m = scores[r, i, j]
                total = 0.0
                for j in range(k):
                    if mask[i, j]:
                        e = np.exp(scores[r, i, j] - m)
                        out[r, i, j] = e
                        total += e
                for j in range(k):
                    out[r, i, j] /= total
        return out

    @njit
    def masked_softmax_backward(y, dy):
        R, q, k = y.shape
        dx = np.empty_like(y)
        for r in range(R):
            for i in range(q):
                dot = 0.0
                for j in range(k):
                    dot += y[r, i, j] * dy[r, i, j]
                for j in range(k):
                    dx[r, i, j] = y[r, i, j] * (dy[r, i, j] - dot)
        return dx

    @njit
    def moving_average(x, k):
        T, D = x.shape
        half = (k - 1) // 2
        out = np.empty_like(x)
        for d in range(D):
            # running window sum over the replicate-padded column
            acc = 0.0
            for s in range(-half, half + 1):
                acc += x[min(max(s, 0), T - 1), d]
            out[0, d] = acc / k
            for t in range(1, T):
                acc += x[min(t + half, T - 1), d] - x[max(t - half - 1, 0), d]
                out[t, d] = acc / k
        return out

    @njit
    def local_self(n, half):
        m = np.zeros((n, n), dtype=np.bool_)
        for i in range(n):
            for j in range(max(0, i - half), min(n, i + half + 1)):
                m[i, j] = True
        return m

    @njit
    def stride_self(n, interval):
        m = np.zeros((n, n), dtype=np.bool_)
        for i in range(n):
            for j in range(i % interval, n, interval):
                m[i, j] = True
        return m

    @njit
    def local_cross(n_dec, n_enc, half):
        m = np.zeros((n_dec, n_enc), dtype=np.bool_)
        lo = max(0, n_enc - 1 - half)
        for i in range(n_dec):
            for j in range(lo, n_enc):
                m[i, j] = True
        return m

    @njit
    def stride_cross(n_dec, n_enc, offset, interval, anchor_end):
        m = np.zeros((n_dec, n_enc), dtype=np.bool_)
        for i in range(n_dec):
            pos = (n_enc - 1) if anchor_end else (offset + i)
            for j in range(pos % interval, n_enc, interval):
                m[i, j] = True
        return m

    @njit
    def vary_cross(n_dec, n_enc, label, v):
        m = np.zeros((n_dec, n_enc), dtype=np.bool_)
        for i in range(label, n_dec):
            span = min(v + i - label, n_enc)
            for j in range(n_enc - span, n_enc):
                m[i, j] = True
        return m

    def _contig(fn):
        def wrapped(*arrays):
            return fn(*[np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a for a in arrays])
        return wrapped

    return SimpleNamespace(
        name="numba",
        masked_softmax=_contig(masked_softmax),
        masked_softmax_backward=_contig(masked_softmax_backward),
        moving_average=lambda x, k: moving_average(np.ascontiguousarray(x, dtype=np.float64), int(k)),
        local_self=lambda n, half: local_self(int(n), int(half)),
        stride_self=lambda n, interval: stride_self(int(n), int(interval)),
        local_cross=lambda n_dec, n_enc, half: local_cross(int(n_dec), int(n_enc), int(half)),
        stride_cross=lambda n_dec, n_enc, offset, interval, anchor_end: stride_cross(
            int(n_dec), int(n_enc), int(offset), int(interval), bool(anchor_end)
        ),
        vary_cross=lambda n_dec, n_enc, label, v: vary_cross(int(n_dec), int(n_enc), int(label), int(v)),
    )


NUMBA_KERNELS = _build_numba_kernels() if numba is not None else None

USE_NUMBA = NUMBA_KERNELS is not None and not _env_disabled()
kernels = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS
