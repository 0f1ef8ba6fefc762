"""Loss functions: cross-entropy, tempered softmax, distillation mix.

The semantic loss blends the binary-form cross-entropy against the
ground truth with a temperature-scaled KL divergence against the clean
teacher's logits.  The KL term uses the standard positive T^2 * KL
convention so that minimizing the loss shrinks the teacher-student gap.

All operations accept a single logit vector or a (batch, classes)
matrix and reduce over the class axis; batched calls return a value
per row.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    lam: float = 0.5
    t_se: float = 4.0
    gamma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if not self.t_se > 0:
            raise ValueError(f"T_se must be positive, got {self.t_se}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def tempered_softmax(z: np.ndarray, t_se: float) -> np.ndarray:
    """softmax(z / T_se); higher temperature flattens the distribution."""
    if not t_se > 0:
        raise ValueError(f"T_se must be positive, got {t_se}")
    return softmax(np.asarray(z, dtype=np.float64) / t_se)


def ce_loss(c: np.ndarray, c_hat: np.ndarray) -> float | np.ndarray:
    """Binary-form cross-entropy summed over classes.

    -sum_j c_j log p_j + (1 - c_j) log(1 - p_j).  Probabilities exactly
    at 0 or 1 are clamped to the floor and flagged with a warning.
    """
    c = np.asarray(c, dtype=np.float64)
    p = np.asarray(c_hat, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        warnings.warn(
            "probabilities at {0,1} clamped before log", RuntimeWarning, stacklevel=2
        )
    p = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    val = -(c * np.log(p) + (1.0 - c) * np.log(1.0 - p)).sum(axis=-1)
    return float(val) if val.ndim == 0 else val


def kd_loss(z_ideal: np.ndarray, z_hat: np.ndarray, t_se: float) -> float | np.ndarray:
    """Distillation term: T_se^2 * KL(teacher || student) at temperature T_se."""
    p = tempered_softmax(z_ideal, t_se)
    q = np.maximum(tempered_softmax(z_hat, t_se), PROB_FLOOR)
    terms = np.where(p > 0.0, p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(q)), 0.0)
    val = t_se * t_se * terms.sum(axis=-1)
    return float(val) if val.ndim == 0 else val


def sll(
    c: np.ndarray,
    z_hat: np.ndarray,
    z_ideal: np.ndarray,
    weights: LossWeights,
) -> float | np.ndarray:
    """Semantic learning loss: lambda * CE + (1 - lambda) * distillation."""
    ce = ce_loss(c, softmax(z_hat)) if weights.lam > 0 else 0.0
    kd = kd_loss(z_ideal, z_hat, weights.t_se) if weights.lam < 1 else 0.0
    return weights.lam * ce + (1.0 - weights.lam) * kd


def _ce_grad(c: np.ndarray, z_hat: np.ndarray) -> np.ndarray:
    p_raw = softmax(z_hat)
    p = np.clip(p_raw, PROB_FLOOR, 1.0 - PROB_FLOOR)
    g_p = -c / p + (1.0 - c) / (1.0 - p)
    # softmax Jacobian-vector product
    return p_raw * (g_p - (g_p * p_raw).sum(axis=-1, keepdims=True))


def sll_grad(
    c: np.ndarray,
    z_hat: np.ndarray,
    z_ideal: np.ndarray,
    weights: LossWeights,
) -> np.ndarray:
    """d(sll)/d(z_hat); shape matches z_hat."""
    c = np.asarray(c, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    z_ideal = np.asarray(z_ideal, dtype=np.float64)
    grad = np.zeros_like(z_hat)
    if weights.lam > 0:
        grad += weights.lam * _ce_grad(c, z_hat)
    if weights.lam < 1:
        p = tempered_softmax(z_ideal, weights.t_se)
        q = tempered_softmax(z_hat, weights.t_se)
        grad += (1.0 - weights.lam) * weights.t_se * (q - p)
    return grad


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    eye = np.eye(classes)
    return eye[labels]
