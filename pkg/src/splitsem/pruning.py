"""Structured channel pruning through a learned scaling vector.

Each feature channel carries a scale; an l1 penalty during the sparsity
stage drives unneeded scales toward zero, and channels whose scale ends
below the threshold are clipped from the transmitted payload.  The
frozen boolean mask is shared configuration between device and edge
(it ships inside the model checkpoint, identified on the wire by a
16-bit digest).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class ScalingVector:
    delta: np.ndarray
    eta: float = 1e-2

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64)
        if self.delta.ndim != 1:
            raise ShapeError(f"delta must be 1-D, got shape {self.delta.shape}")
        if not self.eta > 0:
            raise ValueError(f"threshold eta must be positive, got {self.eta}")

    def copy(self) -> "ScalingVector":
        return ScalingVector(delta=self.delta.copy(), eta=self.eta)


@dataclass
class ChannelMask:
    keep: np.ndarray
    surviving: int = field(init=False)

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 1:
            raise ShapeError(f"mask must be 1-D, got shape {self.keep.shape}")
        self.surviving = int(self.keep.sum())


def ones_scaling(width: int, eta: float = 1e-2) -> ScalingVector:
    """Identity scaling: the pre-pruning network is preserved."""
    return ScalingVector(delta=np.ones(width), eta=eta)


def apply_scaling(x: np.ndarray, sv: ScalingVector) -> np.ndarray:
    """Scale channel k by delta[k]; works on (z,) vectors or (batch, z)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != sv.delta.shape[0]:
        raise ShapeError(
            f"channel count {x.shape[-1]} != scaling length {sv.delta.shape[0]}"
        )
    return x * sv.delta


def mask_from(sv: ScalingVector) -> ChannelMask:
    """Channels survive when their scale is at least the threshold."""
    return ChannelMask(keep=sv.delta >= sv.eta)


def l1_loss(sv: ScalingVector) -> float:
    return float(np.abs(sv.delta).sum())


def l1_subgradient(sv: ScalingVector) -> np.ndarray:
    """sign(delta), with the zero subgradient chosen at exactly zero."""
    return np.sign(sv.delta)


def mask_id(mask: ChannelMask | None) -> int:
    """16-bit mask digest carried in the frame header.

    FNV-1a over the mask bytes (one byte per channel, 0/1), folded to 16
    bits by xoring the four 16-bit slices of the 64-bit hash.  ``None``
    (pruning disabled, all channels transmitted) is id 0.
    """
    if mask is None:
        return 0
    h = 0xCBF29CE484222325
    for byte in mask.keep.astype(np.uint8).tobytes():
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return (h ^ (h >> 16) ^ (h >> 32) ^ (h >> 48)) & 0xFFFF
