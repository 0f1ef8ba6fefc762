"""Minimal dense differentiable substrate.

Supports the four layer kinds the desk-scale networks need: dense,
relu, residual dense blocks (two dense+relu stages bridged by an
identity skip), and a softmax head.  Forward passes record an
activation tape; ``backward`` replays it to produce parameter
gradients and the input gradient.  Everything is float64 numpy.

FLOPs accounting convention (used for the split-point budget search):

    dense(in, out)            2 * in * out
    relu(dim)                 dim
    residual block(z)         2 * (2 * z * z) + 2 * z + z   (two denses,
                              two relus, one skip addition)
    softmax(dim)              3 * dim
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

KINDS = ("dense", "relu", "residual-dense-block", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"layer dims must be >= 1, got {self}")
        if self.kind in ("relu", "softmax", "residual-dense-block"):
            if self.in_dim != self.out_dim:
                raise ShapeError(f"{self.kind} requires in_dim == out_dim, got {self}")


def dense(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("dense", in_dim, out_dim)


def relu(dim: int) -> LayerSpec:
    return LayerSpec("relu", dim, dim)


def residual_block(dim: int) -> LayerSpec:
    return LayerSpec("residual-dense-block", dim, dim)


def softmax_layer(dim: int) -> LayerSpec:
    return LayerSpec("softmax", dim, dim)


def validate_spec(spec: list[LayerSpec]) -> None:
    for prev, cur in zip(spec, spec[1:]):
        if prev.out_dim != cur.in_dim:
            raise ShapeError(
                f"layer chain mismatch: {prev.kind}({prev.in_dim}->{prev.out_dim}) "
                f"feeds {cur.kind}({cur.in_dim}->{cur.out_dim})"
            )


@dataclass
class NetParams:
    """Per-layer parameter arrays plus the seed they were drawn from."""

    spec: list[LayerSpec]
    layers: list[dict[str, np.ndarray]]
    seed: int

    def copy(self) -> "NetParams":
        return NetParams(
            spec=list(self.spec),
            layers=[{k: v.copy() for k, v in layer.items()} for layer in self.layers],
            seed=self.seed,
        )


# Gradients share the NetParams layout: a list of dicts, one per layer,
# shape-congruent with the owning parameter arrays.
Gradients = list


@dataclass
class Tape:
    """Activation record binding a forward pass to its parameters."""

    params: NetParams
    input_ndim: int
    records: list[dict[str, np.ndarray]] = field(default_factory=list)


def init_params(spec: list[LayerSpec], seed: int) -> NetParams:
    """Draw weights from N(0, 1/fan_in); biases start at zero."""
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    layers: list[dict[str, np.ndarray]] = []
    for ls in spec:
        if ls.kind == "dense":
            scale = 1.0 / np.sqrt(ls.in_dim)
            layers.append(
                {
                    "W": rng.standard_normal((ls.in_dim, ls.out_dim)) * scale,
                    "b": np.zeros(ls.out_dim),
                }
            )
        elif ls.kind == "residual-dense-block":
            z = ls.in_dim
            scale = 1.0 / np.sqrt(z)
            layers.append(
                {
                    "W1": rng.standard_normal((z, z)) * scale,
                    "b1": np.zeros(z),
                    "W2": rng.standard_normal((z, z)) * scale,
                    "b2": np.zeros(z),
                }
            )
        else:
            layers.append({})
    return NetParams(spec=list(spec), layers=layers, seed=seed)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ShapeError(f"expected 1-D or 2-D input, got shape {x.shape}")


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: NetParams, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network; the tape enables a matching ``backward``.

    Accepts a single vector or a (batch, in_dim) matrix.
    """
    h, squeeze = _as_batch(x)
    if params.spec and h.shape[1] != params.spec[0].in_dim:
        raise ShapeError(
            f"input dim {h.shape[1]} != first layer in_dim {params.spec[0].in_dim}"
        )
    tape = Tape(params=params, input_ndim=1 if squeeze else 2)
    for ls, layer in zip(params.spec, params.layers):
        if ls.kind == "dense":
            tape.records.append({"x": h})
            h = h @ layer["W"] + layer["b"]
        elif ls.kind == "relu":
            tape.records.append({"x": h})
            h = np.maximum(h, 0.0)
        elif ls.kind == "residual-dense-block":
            h1 = h @ layer["W1"] + layer["b1"]
            a1 = np.maximum(h1, 0.0)
            h2 = a1 @ layer["W2"] + layer["b2"]
            a2 = np.maximum(h2, 0.0)
            tape.records.append({"x": h, "h1": h1, "a1": a1, "h2": h2})
            h = h + a2
        else:  # softmax
            h = _softmax_rows(h)
            tape.records.append({"y": h})
    return (h[0] if squeeze else h), tape


def backward(
    params: NetParams, tape: Tape, d_loss_dy: np.ndarray
) -> tuple[Gradients, np.ndarray]:
    """Backpropagate an upstream gradient through a taped forward pass."""
    if tape.params is not params or len(tape.records) != len(params.spec):
        raise ShapeError("tape does not match these parameters")
    g, squeeze = _as_batch(d_loss_dy)
    grads: Gradients = [None] * len(params.spec)
    for i in range(len(params.spec) - 1, -1, -1):
        ls = params.spec[i]
        layer = params.layers[i]
        rec = tape.records[i]
        if ls.kind == "dense":
            x = rec["x"]
            grads[i] = {"W": x.T @ g, "b": g.sum(axis=0)}
            g = g @ layer["W"].T
        elif ls.kind == "relu":
            grads[i] = {}
            g = g * (rec["x"] > 0.0)
        elif ls.kind == "residual-dense-block":
            x, h1, a1, h2 = rec["x"], rec["h1"], rec["a1"], rec["h2"]
            g_h2 = g * (h2 > 0.0)
            g_a1 = g_h2 @ layer["W2"].T
            g_h1 = g_a1 * (h1 > 0.0)
            grads[i] = {
                "W1": x.T @ g_h1,
                "b1": g_h1.sum(axis=0),
                "W2": a1.T @ g_h2,
                "b2": g_h2.sum(axis=0),
            }
            g = g_h1 @ layer["W1"].T + g  # skip path
        else:  # softmax
            y = rec["y"]
            grads[i] = {}
            g = y * (g - (g * y).sum(axis=1, keepdims=True))
    return grads, (g[0] if squeeze else g)


def zeros_like_grads(params: NetParams) -> Gradients:
    return [{k: np.zeros_like(v) for k, v in layer.items()} for layer in params.layers]


def sgd_step(params: NetParams, grads: Gradients, lr: float) -> NetParams:
    """Return new parameters decreased by lr * grad."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    layers = []
    for layer, glayer in zip(params.layers, grads):
        updated = {}
        for key, value in layer.items():
            gval = glayer[key]
            if not np.all(np.isfinite(gval)):
                raise NumericalError(f"non-finite gradient for {key}")
            updated[key] = value - lr * gval
        layers.append(updated)
    return NetParams(spec=list(params.spec), layers=layers, seed=params.seed)


def flops_estimate(spec: list[LayerSpec]) -> int:
    total = 0
    for ls in spec:
        if ls.kind == "dense":
            total += 2 * ls.in_dim * ls.out_dim
        elif ls.kind == "relu":
            total += ls.in_dim
        elif ls.kind == "residual-dense-block":
            z = ls.in_dim
            total += 2 * (2 * z * z) + 2 * z + z
        else:  # softmax
            total += 3 * ls.in_dim
    return total
