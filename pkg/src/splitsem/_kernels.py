"""Hot quantizer kernels: pure-numpy reference plus numba twins.

Both paths accumulate per element over level index i in the same order,
so results agree to the last ulp of the platform exp().  All kernels
take flat float64 arrays; shaping happens in the calling module.
"""

from __future__ import annotations

import numpy as np

from . import _backend

# ---------------------------------------------------------------------------
# pure-numpy reference path


def _sigmoid_np(t: np.ndarray) -> np.ndarray:
    # exp(-|t|) never overflows; the two branches share it.
    e = np.exp(-np.abs(t))
    return np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _soft_quantize_np(x: np.ndarray, levels: np.ndarray, temp: float) -> np.ndarray:
    out = np.full_like(x, levels[0])
    for i in range(1, levels.shape[0]):
        out += (levels[i] - levels[i - 1]) * _sigmoid_np(temp * (x - levels[i]))
    return out


def _ideal_quantize_np(x: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # step convention: the transition sits at levels[i] itself, mu(0) = 1
    idx = np.zeros(x.shape, dtype=np.int64)
    for i in range(1, levels.shape[0]):
        idx += (x >= levels[i]).astype(np.int64)
    return levels[idx]


def _quant_grads_np(x: np.ndarray, levels: np.ndarray, temp: float):
    n = levels.shape[0]
    d_x = np.zeros_like(x)
    d_theta = np.zeros((x.shape[0], n))
    sig_next = None
    for i in range(n - 1, 0, -1):
        gap = levels[i] - levels[i - 1]
        sig = _sigmoid_np(temp * (x - levels[i]))
        bell = sig * (1.0 - sig)
        d_x += temp * gap * bell
        d_theta[:, i] = sig - temp * gap * bell
        if sig_next is not None:
            d_theta[:, i] -= sig_next
        sig_next = sig
    d_theta[:, 0] = 1.0 - sig_next if sig_next is not None else 1.0
    return d_x, d_theta


def _encode_indices_np(x: np.ndarray, midpoints: np.ndarray) -> np.ndarray:
    # index = count of midpoints strictly below x; ties fall to the lower word
    return np.searchsorted(midpoints, x, side="left").astype(np.int64)


# Philox4x64-10 (Random123), vectorized over frames.  Word j of frame i is
# the j-th output of the keyed counter stream (counter = (0,0,0,i), key =
# (seed, 0)); the counter's low word pre-increments per 4-word block, which
# matches numpy's Philox bit generator exactly.
_PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
_PHILOX_M1 = np.uint64(0xCA5A826395121157)
_PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
_PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def _mulhilo_np(a: np.uint64, b: np.ndarray):
    lo = a * b
    al, ah = a & _MASK32, a >> _SHIFT32
    bl, bh = b & _MASK32, b >> _SHIFT32
    ll, lh, hl, hh = al * bl, al * bh, ah * bl, ah * bh
    mid = (ll >> _SHIFT32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _SHIFT32) + (hl >> _SHIFT32) + (mid >> _SHIFT32)
    return hi, lo


def _philox_words_np(seed: int, frames: np.ndarray, nwords: int) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.uint64)
    blocks = (nwords + 3) // 4
    x0 = np.tile(np.arange(1, blocks + 1, dtype=np.uint64), frames.size)
    x1 = np.zeros(frames.size * blocks, dtype=np.uint64)
    x2 = np.zeros(frames.size * blocks, dtype=np.uint64)
    x3 = np.repeat(frames, blocks)
    key0 = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    key1 = np.uint64(0)
    with np.errstate(over="ignore"):  # uint64 arithmetic wraps by design
        for _ in range(10):
            hi0, lo0 = _mulhilo_np(_PHILOX_M0, x0)
            hi1, lo1 = _mulhilo_np(_PHILOX_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ key0, lo1, hi0 ^ x3 ^ key1, lo0
            key0 = key0 + _PHILOX_W0
            key1 = key1 + _PHILOX_W1
    out = np.stack([x0, x1, x2, x3], axis=1).reshape(frames.size, blocks * 4)
    return out[:, :nwords]


# ---------------------------------------------------------------------------
# numba twins (compiled lazily on first use)

if _backend.numba_available():
    from numba import njit

    @njit(cache=True)
    def _sigmoid_scalar(t):
        e = np.exp(-abs(t))
        if t >= 0.0:
            return 1.0 / (1.0 + e)
        return e / (1.0 + e)

    @njit(cache=True)
    def _soft_quantize_nb(x, levels, temp):
        out = np.empty_like(x)
        n = levels.shape[0]
        for k in range(x.shape[0]):
            acc = levels[0]
            for i in range(1, n):
                acc += (levels[i] - levels[i - 1]) * _sigmoid_scalar(
                    temp * (x[k] - levels[i])
                )
            out[k] = acc
        return out

    @njit(cache=True)
    def _ideal_quantize_nb(x, levels):
        out = np.empty_like(x)
        n = levels.shape[0]
        for k in range(x.shape[0]):
            j = 0
            for i in range(1, n):
                if x[k] >= levels[i]:
                    j += 1
            out[k] = levels[j]
        return out

    @njit(cache=True)
    def _quant_grads_nb(x, levels, temp):
        n = levels.shape[0]
        d_x = np.zeros_like(x)
        d_theta = np.zeros((x.shape[0], n))
        for k in range(x.shape[0]):
            sig_next = 0.0
            for i in range(n - 1, 0, -1):
                gap = levels[i] - levels[i - 1]
                sig = _sigmoid_scalar(temp * (x[k] - levels[i]))
                bell = sig * (1.0 - sig)
                d_x[k] += temp * gap * bell
                d_theta[k, i] = sig - temp * gap * bell
                if i < n - 1:
                    d_theta[k, i] -= sig_next
                sig_next = sig
            d_theta[k, 0] = 1.0 - sig_next if n > 1 else 1.0
        return d_x, d_theta

    @njit(cache=True)
    def _encode_indices_nb(x, midpoints):
        out = np.empty(x.shape[0], dtype=np.int64)
        m = midpoints.shape[0]
        for k in range(x.shape[0]):
            lo = 0
            hi = m
            while lo < hi:
                mid = (lo + hi) // 2
                if midpoints[mid] < x[k]:
                    lo = mid + 1
                else:
                    hi = mid
            out[k] = lo
        return out

    @njit(cache=True)
    def _philox_block_nb(c0, c3, key0_init, key1_init):
        m0 = np.uint64(0xD2E7470EE14C6C93)
        m1 = np.uint64(0xCA5A826395121157)
        w0 = np.uint64(0x9E3779B97F4A7C15)
        w1 = np.uint64(0xBB67AE8584CAA73B)
        mask = np.uint64(0xFFFFFFFF)
        s32 = np.uint64(32)
        x0 = c0
        x1 = np.uint64(0)
        x2 = np.uint64(0)
        x3 = c3
        key0 = key0_init
        key1 = key1_init
        for _ in range(10):
            lo0 = m0 * x0
            al, ah = m0 & mask, m0 >> s32
            bl, bh = x0 & mask, x0 >> s32
            mid = ((al * bl) >> s32) + ((al * bh) & mask) + ((ah * bl) & mask)
            hi0 = ah * bh + ((al * bh) >> s32) + ((ah * bl) >> s32) + (mid >> s32)
            lo1 = m1 * x2
            bl, bh = x2 & mask, x2 >> s32
            al, ah = m1 & mask, m1 >> s32
            mid = ((al * bl) >> s32) + ((al * bh) & mask) + ((ah * bl) & mask)
            hi1 = ah * bh + ((al * bh) >> s32) + ((ah * bl) >> s32) + (mid >> s32)
            x0, x1, x2, x3 = hi1 ^ x1 ^ key0, lo1, hi0 ^ x3 ^ key1, lo0
            key0 = key0 + w0
            key1 = key1 + w1
        return x0, x1, x2, x3

    @njit(cache=True)
    def _philox_words_nb(seed, frames, nwords):
        blocks = (nwords + 3) // 4
        out = np.empty((frames.shape[0], blocks * 4), dtype=np.uint64)
        key0 = np.uint64(seed)
        key1 = np.uint64(0)
        for i in range(frames.shape[0]):
            for b in range(blocks):
                w0, w1, w2, w3 = _philox_block_nb(
                    np.uint64(b + 1), frames[i], key0, key1
                )
                out[i, 4 * b] = w0
                out[i, 4 * b + 1] = w1
                out[i, 4 * b + 2] = w2
                out[i, 4 * b + 3] = w3
        return out[:, :nwords]


def _impl(np_fn, nb_name):
    if _backend.active_backend() == "numba":
        return globals()[nb_name]
    return np_fn


def soft_quantize(x: np.ndarray, levels: np.ndarray, temp: float) -> np.ndarray:
    return _impl(_soft_quantize_np, "_soft_quantize_nb")(x, levels, temp)


def ideal_quantize(x: np.ndarray, levels: np.ndarray) -> np.ndarray:
    return _impl(_ideal_quantize_np, "_ideal_quantize_nb")(x, levels)


def quant_grads(x: np.ndarray, levels: np.ndarray, temp: float):
    return _impl(_quant_grads_np, "_quant_grads_nb")(x, levels, temp)


def encode_indices(x: np.ndarray, midpoints: np.ndarray) -> np.ndarray:
    return _impl(_encode_indices_np, "_encode_indices_nb")(x, midpoints)


def philox_words(seed: int, frames: np.ndarray, nwords: int) -> np.ndarray:
    """(len(frames), nwords) raw uint64 stream words, one row per frame."""
    frames = np.asarray(frames, dtype=np.uint64)
    if _backend.active_backend() == "numba":
        return _philox_words_nb(seed & 0xFFFFFFFFFFFFFFFF, frames, nwords)
    return _philox_words_np(seed, frames, nwords)
