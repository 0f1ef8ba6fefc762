"""Synthetic classification task: separated Gaussian clusters.

Class centers sit at ``rho`` times orthonormal directions (QR of a
seeded Gaussian matrix, signs fixed for determinism), with unit
isotropic noise around each center.  Class counts are exactly balanced
and the train/test partition is per class, so both sides stay balanced
and disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_container, save_container
from .errors import ConfigError


@dataclass
class SyntheticDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    centers: np.ndarray
    meta: dict


def gen_synthetic(
    n: int = 10000,
    dim: int = 64,
    classes: int = 10,
    rho: float = 3.5,
    seed: int = 1,
    train_fraction: float = 0.8,
) -> SyntheticDataset:
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if dim < classes:
        raise ConfigError(f"dim {dim} must be >= classes {classes}")
    if n % classes != 0:
        raise ConfigError(f"n={n} is not divisible by classes={classes}")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0,1), got {train_fraction}")
    per_class = n // classes
    n_train = int(round(per_class * train_fraction))
    if n_train < 1 or n_train >= per_class:
        raise ConfigError("train_fraction leaves an empty train or test side")

    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((dim, classes))
    q, r = np.linalg.qr(basis)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity
    centers = rho * q.T  # (classes, dim)

    xs_train, ys_train, xs_test, ys_test = [], [], [], []
    for j in range(classes):
        pts = centers[j] + rng.standard_normal((per_class, dim))
        xs_train.append(pts[:n_train])
        ys_train.append(np.full(n_train, j))
        xs_test.append(pts[n_train:])
        ys_test.append(np.full(per_class - n_train, j))
    return SyntheticDataset(
        x_train=np.concatenate(xs_train),
        y_train=np.concatenate(ys_train),
        x_test=np.concatenate(xs_test),
        y_test=np.concatenate(ys_test),
        centers=centers,
        meta={
            "n": n,
            "dim": dim,
            "classes": classes,
            "rho": rho,
            "seed": seed,
            "train_fraction": train_fraction,
        },
    )


def nearest_centroid_accuracy(ds: SyntheticDataset) -> float:
    """Reference linear classifier: nearest train-split class mean."""
    means = np.stack(
        [ds.x_train[ds.y_train == j].mean(axis=0) for j in range(ds.meta["classes"])]
    )
    d2 = ((ds.x_test[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == ds.y_test).mean())


def save_dataset(path, ds: SyntheticDataset) -> None:
    arrays = {
        "x_train": ds.x_train,
        "y_train": ds.y_train,
        "x_test": ds.x_test,
        "y_test": ds.y_test,
        "centers": ds.centers,
    }
    save_container(path, "dataset", arrays, {"data_meta": ds.meta})


def load_dataset(path) -> SyntheticDataset:
    arrays, manifest = load_container(path, expect_kind="dataset")
    return SyntheticDataset(
        x_train=arrays["x_train"],
        y_train=arrays["y_train"],
        x_test=arrays["x_test"],
        y_test=arrays["y_test"],
        centers=arrays["centers"],
        meta=manifest["data_meta"],
    )
