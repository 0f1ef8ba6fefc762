"""Learned non-linear quantizer with a differentiable sigmoid relaxation.

Two distinct hard views exist side by side and are both exposed:

* ``quantize_ideal`` places decision boundaries at the levels
  themselves (step-sum form, transition at ``levels[i]`` counting
  ``x >= levels[i]``).
* the bit codec (``encode_bits``/``decode_bits``) partitions the line
  at level midpoints, which makes decoding nearest-level.

Transmission always uses the midpoint codec; the step-sum form is the
limit object of the soft relaxation.  ``quantize_soft`` replaces each
step with a sigmoid sharpened by the temperature ``temp``, and
``quant_grads`` gives its exact analytic derivatives, so training
never needs a straight-through estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import DegenerateInputError, NumericalError, ShapeError

MAX_BITS = 8


@dataclass
class QuantizerParams:
    """Learned level alphabet: 2**bits ascending levels plus sharpness."""

    levels: np.ndarray
    bits: int
    temp: float = 1.0

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        if not 1 <= self.bits <= MAX_BITS:
            raise ValueError(f"bits must be in 1..{MAX_BITS}, got {self.bits}")
        if self.levels.shape != (2**self.bits,):
            raise ShapeError(
                f"expected {2 ** self.bits} levels for q={self.bits}, "
                f"got shape {self.levels.shape}"
            )
        if not np.all(np.diff(self.levels) > 0):
            raise ValueError("levels must be strictly ascending")
        if not self.temp > 0:
            raise ValueError(f"temperature must be positive, got {self.temp}")

    def with_levels(self, levels: np.ndarray) -> "QuantizerParams":
        """Re-sorted copy; exact ties after a gradient step are nudged apart."""
        new = np.sort(np.asarray(levels, dtype=np.float64))
        span = max(new[-1] - new[0], 1.0)
        for i in range(1, new.shape[0]):
            if new[i] <= new[i - 1]:
                new[i] = new[i - 1] + 1e-9 * span
        return replace(self, levels=new)

    def with_temp(self, temp: float) -> "QuantizerParams":
        return replace(self, temp=float(temp), levels=self.levels)


def midpoints(qp: QuantizerParams) -> np.ndarray:
    """Decision boundaries of the bit codec: (levels[i] + levels[i+1]) / 2."""
    return 0.5 * (qp.levels[:-1] + qp.levels[1:])


def _check_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericalError("input contains non-finite values")
    return x


def quantize_ideal(x: np.ndarray, qp: QuantizerParams) -> np.ndarray:
    """Step-sum quantizer: element maps to levels[#{i>=1 : x >= levels[i]}]."""
    x = _check_finite(x)
    out = _kernels.ideal_quantize(x.ravel(), qp.levels)
    return out.reshape(x.shape)


def quantize_soft(x: np.ndarray, qp: QuantizerParams) -> np.ndarray:
    """Sigmoid relaxation: levels[0] + sum of gap * sigmoid(temp*(x - level))."""
    x = _check_finite(x)
    out = _kernels.soft_quantize(x.ravel(), qp.levels, float(qp.temp))
    return out.reshape(x.shape)


def quant_grads(
    x: np.ndarray, qp: QuantizerParams
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic derivatives of the soft quantizer.

    Returns ``(d_out_dx, d_out_dlevels)`` where ``d_out_dx`` matches the
    input shape and ``d_out_dlevels`` has one trailing axis of length
    ``2**bits``.  The level derivative distinguishes the first level
    (pure 1 - sigma_1 term), interior levels (bell term plus the
    sigma_i - sigma_{i+1} window), and the last level (no window
    closing term).
    """
    x = _check_finite(x)
    d_x, d_theta = _kernels.quant_grads(x.ravel(), qp.levels, float(qp.temp))
    return d_x.reshape(x.shape), d_theta.reshape(x.shape + (qp.levels.shape[0],))


def quantize_linear(x: np.ndarray, bits: int) -> np.ndarray:
    """Uniform-grid baseline: round onto 2**bits evenly spaced levels."""
    x = _check_finite(x)
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in 1..{MAX_BITS}, got {bits}")
    lo, hi = x.min(), x.max()
    if hi <= lo:
        raise DegenerateInputError("constant block: linear quantizer scale undefined")
    q_w = (2**bits - 1) / (hi - lo)
    return np.round(q_w * (x - lo)) / q_w + lo


def encode_bits(x: np.ndarray, qp: QuantizerParams) -> np.ndarray:
    """Map each element to the q-bit word of its midpoint-partition cell.

    Returns a (n, q) uint8 array, MSB first, in element-major order of
    the flattened input.  An element exactly on a midpoint falls to the
    lower word.
    """
    x = _check_finite(x)
    idx = _kernels.encode_indices(x.ravel(), midpoints(qp))
    shifts = np.arange(qp.bits - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8)


def decode_bits(words: np.ndarray, qp: QuantizerParams) -> np.ndarray:
    """Inverse of the codec: each q-bit word selects its level."""
    words = np.asarray(words)
    if words.ndim != 2 or words.shape[1] != qp.bits:
        raise ShapeError(
            f"expected (n, {qp.bits}) bit words, got shape {words.shape}"
        )
    if words.size and not np.isin(words, (0, 1)).all():
        raise ValueError("bit words must contain only 0 and 1")
    weights = 1 << np.arange(qp.bits - 1, -1, -1, dtype=np.int64)
    idx = words.astype(np.int64) @ weights
    return qp.levels[idx]


def words_to_str(words: np.ndarray) -> list[str]:
    """Render bit words as '0'/'1' strings (debug and test helper)."""
    return ["".join(str(int(b)) for b in w) for w in np.asarray(words)]


def temperature_for_epoch(epoch: int) -> float:
    """Sharpness schedule: ceil(epoch/10) up to epoch 100, then epoch."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if epoch <= 100:
        return float(math.ceil(epoch / 10))
    return float(epoch)


def init_levels(sample: np.ndarray, bits: int, temp: float = 1.0) -> QuantizerParams:
    """Seed levels at the 2**bits empirical quantiles (inverted CDF).

    Quantile probabilities are (i + 0.5) / 2**bits.  Tied quantiles are
    nudged apart by 1e-6 of the sample range so the alphabet stays
    strictly ascending.
    """
    sample = _check_finite(sample).ravel()
    lo, hi = sample.min(), sample.max()
    if hi <= lo:
        raise DegenerateInputError("constant sample: quantile levels undefined")
    n = 2**bits
    probs = (np.arange(n) + 0.5) / n
    levels = np.quantile(sample, probs, method="inverted_cdf").astype(np.float64)
    jitter = 1e-6 * (hi - lo)
    for i in range(1, n):
        if levels[i] <= levels[i - 1]:
            levels[i] = levels[i - 1] + jitter
    return QuantizerParams(levels=levels, bits=bits, temp=temp)


def fit_levels_mse(
    sample: np.ndarray,
    bits: int,
    epochs: int = 200,
    lr: float = 0.05,
) -> QuantizerParams:
    """Train levels to minimize soft-quantization MSE on a sample.

    Full-batch gradient descent on mean((Q_soft(x) - x)^2) with the
    sharpness following the epoch schedule; levels are re-sorted after
    every step.  Used to compare learned alphabets against the linear
    baseline on bell-shaped data.
    """
    sample = _check_finite(sample).ravel()
    qp = init_levels(sample, bits)
    n = sample.size
    for epoch in range(1, epochs + 1):
        qp = qp.with_temp(temperature_for_epoch(epoch))
        out = quantize_soft(sample, qp)
        _, d_theta = quant_grads(sample, qp)
        grad = (2.0 / n) * ((out - sample)[:, None] * d_theta).sum(axis=0)
        qp = qp.with_levels(qp.levels - lr * grad)
    return qp
