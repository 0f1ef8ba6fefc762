"""Split-point policy: maps (input, BER) to a distribution over splits.

The trunk (dense stem + three residual blocks) summarizes the input;
its features are concatenated with log10(BER) and pushed through a
dense softmax head over the admissible split points.  Labels for
training come from per-sample deploy evaluations: for every candidate
split the classification success rate over repeated channel draws is
measured, and the best split (ties to the shallowest, i.e. least
device compute) becomes the one-hot target.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffnet, splitmodel
from .checkpoint import load_container, save_container
from .diffnet import NetParams
from .errors import ConfigError


@dataclass
class SplitDecision:
    probs: np.ndarray
    onehot: np.ndarray
    s: int


@dataclass
class PolicyNet:
    trunk: NetParams
    head: NetParams
    s_max: int
    raw_ber: bool = False


@dataclass
class PolicySample:
    sample_id: int
    features: np.ndarray
    ber: float
    rates: np.ndarray
    label: np.ndarray  # one-hot over s_max


@dataclass
class PolicyDataset:
    samples: list[PolicySample] = field(default_factory=list)

    def stacked(self):
        x = np.stack([p.features for p in self.samples])
        bers = np.array([p.ber for p in self.samples])
        labels = np.stack([p.label for p in self.samples])
        return x, bers, labels

    def to_csv(self, path) -> None:
        s_max = self.samples[0].rates.shape[0] if self.samples else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["sample_id", "ber"]
                + [f"rate_s{s}" for s in range(1, s_max + 1)]
                + ["label"]
            )
            for p in self.samples:
                writer.writerow(
                    [p.sample_id, repr(p.ber)]
                    + [repr(float(r)) for r in p.rates]
                    + [int(np.argmax(p.label)) + 1]
                )


def build_policy(
    input_dim: int, s_max: int, width: int = 16, seed: int = 0, raw_ber: bool = False
) -> PolicyNet:
    trunk_spec = [
        diffnet.dense(input_dim, width),
        diffnet.relu(width),
        diffnet.residual_block(width),
        diffnet.residual_block(width),
        diffnet.residual_block(width),
    ]
    head_spec = [diffnet.dense(width + 1, s_max), diffnet.softmax_layer(s_max)]
    return PolicyNet(
        trunk=diffnet.init_params(trunk_spec, seed),
        head=diffnet.init_params(head_spec, seed + 1),
        s_max=s_max,
        raw_ber=raw_ber,
    )


def _ber_feature(pol: PolicyNet, ber: float | np.ndarray) -> np.ndarray:
    ber = np.asarray(ber, dtype=np.float64)
    if np.any(ber <= 0.0) or np.any(ber >= 0.5):
        raise ValueError(f"ber must be inside (0, 0.5), got {ber}")
    return ber if pol.raw_ber else np.log10(ber)


def policy_forward(
    pol: PolicyNet, x: np.ndarray, ber: float | np.ndarray
) -> np.ndarray:
    """Probability vector over split points (rows for batched input)."""
    probs, _ = policy_forward_with_tapes(pol, x, ber)
    return probs


def policy_forward_with_tapes(pol: PolicyNet, x, ber):
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    squeeze = np.asarray(x).ndim == 1
    bf = np.broadcast_to(
        np.atleast_1d(_ber_feature(pol, ber)), (xb.shape[0],)
    ).reshape(-1, 1)
    feats, tape_trunk = diffnet.forward(pol.trunk, xb)
    joined = np.concatenate([feats, bf], axis=1)
    probs, tape_head = diffnet.forward(pol.head, joined)
    tapes = {"trunk": tape_trunk, "head": tape_head, "width": feats.shape[1]}
    return (probs[0] if squeeze else probs), tapes


def policy_backward(pol: PolicyNet, tapes: dict, d_loss_dprobs: np.ndarray):
    """Gradients for head and trunk given d(loss)/d(probs)."""
    g = np.atleast_2d(np.asarray(d_loss_dprobs, dtype=np.float64))
    grads_head, g_joined = diffnet.backward(pol.head, tapes["head"], g)
    grads_trunk, _ = diffnet.backward(
        pol.trunk, tapes["trunk"], g_joined[:, : tapes["width"]]
    )
    return grads_trunk, grads_head


def decide(probs: np.ndarray) -> SplitDecision:
    """Argmax split with lowest-index tie-break."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("expected a 1-D probability vector")
    idx = int(np.argmax(probs))
    onehot = np.zeros_like(probs)
    onehot[idx] = 1.0
    return SplitDecision(probs=probs, onehot=onehot, s=idx + 1)


def enforce_budget(decision: SplitDecision, s_max: int) -> SplitDecision:
    """Decisions range over 1..s_max by construction; assert and pass through."""
    assert 1 <= decision.s <= s_max, "policy produced an out-of-budget split"
    return decision


def policy_loss(h: np.ndarray, h_hat: np.ndarray) -> float | np.ndarray:
    """Squared error between the one-hot target and the soft decision."""
    h = np.asarray(h, dtype=np.float64)
    h_hat = np.asarray(h_hat, dtype=np.float64)
    val = ((h - h_hat) ** 2).sum(axis=-1)
    return float(val) if val.ndim == 0 else val


def policy_loss_grad(h: np.ndarray, h_hat: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(h_hat, np.float64) - np.asarray(h, np.float64))


def build_policy_dataset(
    model: splitmodel.SplitModel,
    x: np.ndarray,
    labels: np.ndarray,
    bers,
    repeats: int = 32,
    seed: int = 0,
) -> PolicyDataset:
    """Label every (sample, ber) cell with its empirically best split.

    Each candidate split is deployed ``repeats`` times with distinct
    channel seeds; the label is the split with the highest correct-
    classification rate, ties resolved toward the smallest split.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels)
    bers = list(bers)
    if x.shape[0] == 0 or not bers:
        raise ConfigError("policy dataset needs at least one sample and one BER")
    missing = [s for s in range(1, model.s_max + 1) if s not in model.branches]
    if missing:
        raise ConfigError(f"splits {missing} are untrained; train all splits first")

    dataset = PolicyDataset()
    n = x.shape[0]
    for ber in bers:
        rates = np.zeros((n, model.s_max))
        for s in range(1, model.s_max + 1):
            for r in range(repeats):
                probs = splitmodel.deploy_batch(
                    model, x, s, ber, seed=seed + r, frame_base=0
                )
                rates[:, s - 1] += probs.argmax(axis=1) == labels
        rates /= repeats
        best = rates.argmax(axis=1)  # argmax takes the first max: smallest s
        for i in range(n):
            onehot = np.zeros(model.s_max)
            onehot[best[i]] = 1.0
            dataset.samples.append(
                PolicySample(
                    sample_id=i,
                    features=x[i],
                    ber=float(ber),
                    rates=rates[i].copy(),
                    label=onehot,
                )
            )
    return dataset


def log_uniform_bers(
    count: int, lo: float = 1e-5, hi: float = 1e-1, seed: int = 0
) -> list[float]:
    """BER draws log-uniform over [lo, hi] (the training range)."""
    rng = np.random.default_rng(seed)
    lo_l, hi_l = math.log10(lo), math.log10(hi)
    return [float(10.0 ** u) for u in rng.uniform(lo_l, hi_l, size=count)]


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_policy(path, pol: PolicyNet, meta: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    splitmodel._net_arrays("trunk", pol.trunk, arrays)
    splitmodel._net_arrays("head", pol.head, arrays)
    manifest = {
        "trunk_spec": splitmodel._spec_to_json(pol.trunk.spec),
        "head_spec": splitmodel._spec_to_json(pol.head.spec),
        "s_max": pol.s_max,
        "raw_ber": pol.raw_ber,
        "trunk_seed": pol.trunk.seed,
        "head_seed": pol.head.seed,
        "meta": meta or {},
    }
    save_container(path, "policy", arrays, manifest)


def load_policy(path) -> PolicyNet:
    arrays, manifest = load_container(path, expect_kind="policy")
    trunk_spec = splitmodel._spec_from_json(manifest["trunk_spec"])
    head_spec = splitmodel._spec_from_json(manifest["head_spec"])
    return PolicyNet(
        trunk=splitmodel._net_from_arrays(
            "trunk", trunk_spec, arrays, manifest["trunk_seed"]
        ),
        head=splitmodel._net_from_arrays(
            "head", head_spec, arrays, manifest["head_seed"]
        ),
        s_max=manifest["s_max"],
        raw_ber=manifest["raw_ber"],
    )
