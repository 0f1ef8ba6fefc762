"""The split network: encoder prefix, per-split TRB, channel, decoder suffix.

The reference stack is a dense stem (dense + relu), ``blocks`` residual
blocks, and a dense logit head.  Candidate split point ``s`` cuts after
block ``s``; its transmission block (TRB) scales channels, quantizes,
and rides the bit channel.  Every candidate split owns a full copy of
the network (trained from the shared teacher initialization) plus its
own quantizer levels, scaling vector, and frozen channel mask.

Deploy mode transmits the quantizer output: the feature is hardened to
exact levels first and the midpoint codec then recovers each level's
index for framing (an exact inverse on level values).  Training mode
keeps the path differentiable: the soft quantizer output rides the
same codec and is perturbed by the constant offset

    delta = decode(bsc(encode(s_soft))) - decode(encode(s_soft))

so bit-flip statistics are exact while gradients flow through the
sigmoid relaxation, and the train-deploy gap is exactly the soft-hard
quantizer gap, which vanishes as the sharpness grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import channel as ch
from . import diffnet, pruning, quantizer
from .checkpoint import load_container, save_container
from .diffnet import LayerSpec, NetParams
from .errors import BandwidthExceededError, FrameFormatError, MissingArtifactError

STEM_LAYERS = 2  # input dense + relu ahead of the first block


@dataclass
class SplitBranch:
    """Per-split trained state: network copy, levels, scaling, mask."""

    net: NetParams
    qp: quantizer.QuantizerParams
    sv: pruning.ScalingVector
    mask: pruning.ChannelMask | None = None


@dataclass
class SplitModel:
    spec: list[LayerSpec]
    teacher: NetParams
    input_dim: int
    classes: int
    width: int
    blocks: int
    bits: int
    flops_budget: int
    s_max: int
    b_max: int | None = None
    branches: dict[int, SplitBranch] = field(default_factory=dict)


@dataclass
class LinkTrace:
    """Per-pass record of what crossed the link."""

    split: int
    pre_quant: np.ndarray
    frame_sent: list[ch.BitFrame] | None
    frame_received: list[ch.BitFrame] | None
    reconstructed: np.ndarray | None
    logits: np.ndarray
    internals: dict | None = None


@dataclass
class TrainGrads:
    net: diffnet.Gradients
    theta: np.ndarray
    delta: np.ndarray


def reference_spec(
    input_dim: int, width: int, blocks: int, classes: int
) -> list[LayerSpec]:
    spec = [diffnet.dense(input_dim, width), diffnet.relu(width)]
    spec += [diffnet.residual_block(width) for _ in range(blocks)]
    spec.append(diffnet.dense(width, classes))
    return spec


def cut_index(s: int) -> int:
    """Layer index where split s divides the stack (prefix = spec[:cut])."""
    return STEM_LAYERS + s


def trb_flops(width: int, bits: int) -> int:
    """Device-side TRB cost: channel scaling plus the sigmoid-sum quantizer."""
    return width + 4 * width * (2**bits - 1)


def encoder_flops(model: SplitModel, s: int) -> int:
    return diffnet.flops_estimate(model.spec[: cut_index(s)]) + trb_flops(
        model.width, model.bits
    )


def compute_s_max(model: SplitModel, device_flops_budget: int) -> int:
    """Largest split whose device-side cost fits the FLOPs budget."""
    if encoder_flops(model, 1) > device_flops_budget:
        raise ValueError(
            f"budget {device_flops_budget} is below the minimum encoder cost "
            f"{encoder_flops(model, 1)}"
        )
    s_max = 1
    for s in range(2, model.blocks + 1):
        if encoder_flops(model, s) <= device_flops_budget:
            s_max = s
    return s_max


def default_budget(input_dim: int, width: int, blocks: int, classes: int, bits: int,
                   admit_blocks: int = 4) -> int:
    """Budget that admits exactly ``admit_blocks`` device-side blocks."""
    spec = reference_spec(input_dim, width, blocks, classes)
    s = min(admit_blocks, blocks)
    return diffnet.flops_estimate(spec[: cut_index(s)]) + trb_flops(width, bits)


def build_split_model(
    input_dim: int,
    classes: int,
    width: int = 32,
    blocks: int = 8,
    bits: int = 2,
    flops_budget: int | None = None,
    b_max: int | None = None,
    seed: int = 0,
) -> SplitModel:
    spec = reference_spec(input_dim, width, blocks, classes)
    if flops_budget is None:
        flops_budget = default_budget(input_dim, width, blocks, classes, bits)
    model = SplitModel(
        spec=spec,
        teacher=diffnet.init_params(spec, seed),
        input_dim=input_dim,
        classes=classes,
        width=width,
        blocks=blocks,
        bits=bits,
        flops_budget=flops_budget,
        s_max=1,
        b_max=b_max,
    )
    model.s_max = compute_s_max(model, flops_budget)
    return model


def _branch(model: SplitModel, s: int) -> SplitBranch:
    if not 1 <= s <= model.s_max:
        raise ValueError(f"split {s} outside 1..{model.s_max}")
    if s not in model.branches:
        raise MissingArtifactError(f"split {s} has not been trained/initialized")
    return model.branches[s]


def init_branch(model: SplitModel, s: int, sample_inputs: np.ndarray) -> SplitBranch:
    """Create a branch from the teacher: identity scaling, quantile levels."""
    if not 1 <= s <= model.s_max:
        raise ValueError(f"split {s} outside 1..{model.s_max}")
    net = model.teacher.copy()
    feats, _ = diffnet.forward(_prefix(net, s), np.atleast_2d(sample_inputs))
    qp = quantizer.init_levels(feats, model.bits)
    branch = SplitBranch(net=net, qp=qp, sv=pruning.ones_scaling(model.width))
    model.branches[s] = branch
    return branch


def _prefix(net: NetParams, s: int) -> NetParams:
    cut = cut_index(s)
    return NetParams(spec=net.spec[:cut], layers=net.layers[:cut], seed=net.seed)


def _suffix(net: NetParams, s: int) -> NetParams:
    cut = cut_index(s)
    return NetParams(spec=net.spec[cut:], layers=net.layers[cut:], seed=net.seed)


def surviving_channels(model: SplitModel, s: int) -> int:
    branch = _branch(model, s)
    return branch.mask.surviving if branch.mask is not None else model.width


def bandwidth_bits(model: SplitModel, s: int) -> int:
    """Payload bits per transmitted feature: surviving channels * q."""
    return surviving_channels(model, s) * model.bits


def trb_apply(
    model: SplitModel, x_k: np.ndarray, k: int, h_k: int, mode: str = "train"
) -> np.ndarray:
    """Transmission residual block at split k.

    Inactive (h_k = 0) passes the feature through bit-exactly.  Active,
    it scales, then soft-quantizes (train) or runs the hard codec on
    surviving channels with zeros elsewhere (deploy).
    """
    if h_k == 0:
        return np.asarray(x_k, dtype=np.float64)
    branch = _branch(model, k)
    a = pruning.apply_scaling(x_k, branch.sv)
    if mode == "train":
        return quantizer.quantize_soft(a, branch.qp)
    if mode != "deploy":
        raise ValueError(f"unknown TRB mode {mode!r}")
    keep = branch.mask.keep if branch.mask is not None else np.ones(a.shape[-1], bool)
    out = np.zeros_like(np.atleast_2d(a))
    s_e = quantizer.quantize_ideal(np.atleast_2d(a)[:, keep], branch.qp)
    rec = quantizer.decode_bits(
        quantizer.encode_bits(s_e, branch.qp), branch.qp
    ).reshape(s_e.shape)
    out[:, keep] = rec
    return out[0] if np.asarray(x_k).ndim == 1 else out


def _check_bandwidth(model: SplitModel, z_prime: int) -> None:
    if model.b_max is not None and z_prime * model.bits > model.b_max:
        raise BandwidthExceededError(
            f"{z_prime * model.bits} payload bits exceed B_max={model.b_max}"
        )


def _transmit_levels(
    s_e: np.ndarray,
    qp: quantizer.QuantizerParams,
    ber: float,
    seed: int,
    frame_indices: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized codec plus BSC over a (batch, z') quantized block.

    ``s_e`` is the quantizer output (exact levels in deploy mode, soft
    values during training); the midpoint partition recovers its level
    index, exactly on level values.  Bit-identical to the per-frame
    encode -> pack -> bsc_transmit -> unpack -> decode path: the bit
    layout and per-frame Philox stream are the same.  Returns
    (sent_levels, received_levels).
    """
    q = qp.bits
    idx = _kernels.encode_indices(s_e.ravel(), quantizer.midpoints(qp))
    idx = idx.reshape(s_e.shape)
    sent = qp.levels[idx]
    if ber <= 0.0 or s_e.size == 0:
        return sent, sent.copy()
    shifts = np.arange(q - 1, -1, -1, dtype=np.int64)
    bits = ((idx[..., None] >> shifts) & 1).astype(np.uint8)
    bits = bits.reshape(s_e.shape[0], s_e.shape[1] * q)
    flips = ch.flip_mask(ber, seed, frame_indices, bits.shape[1])
    rbits = (bits ^ flips).reshape(s_e.shape[0], s_e.shape[1], q).astype(np.int64)
    weights = 1 << np.arange(q - 1, -1, -1, dtype=np.int64)
    recv = qp.levels[rbits @ weights]
    return sent, recv


def forward_train(
    model: SplitModel,
    x: np.ndarray,
    s: int,
    ber: float,
    seed: int = 0,
    frame_base: int = 0,
    collect_frames: bool = False,
) -> tuple[np.ndarray, LinkTrace]:
    """Differentiable end-to-end pass at split s.

    Returns logits and a trace whose ``internals`` carry everything
    ``backward_train`` needs.  The channel enters as a constant additive
    perturbation on the soft-quantized feature.  ``collect_frames``
    additionally materializes the per-sample frames on the trace via
    the real framing path (slower; the vectorized path is bit-equal).
    """
    branch = _branch(model, s)
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    squeeze = np.asarray(x).ndim == 1
    _check_bandwidth(model, model.width)

    prefix = _prefix(branch.net, s)
    suffix = _suffix(branch.net, s)
    feats, tape_pre = diffnet.forward(prefix, xb)
    a = pruning.apply_scaling(feats, branch.sv)
    soft = quantizer.quantize_soft(a, branch.qp)

    frames_sent: list[ch.BitFrame] | None = None
    frames_recv: list[ch.BitFrame] | None = None
    reconstructed = None
    delta = np.zeros_like(a)
    if ber > 0.0:
        frame_indices = frame_base + np.arange(a.shape[0])
        sent, recv = _transmit_levels(soft, branch.qp, ber, seed, frame_indices)
        delta = recv - sent
        reconstructed = recv
        if collect_frames:
            spec_ch = ch.ChannelSpec(ber=ber, seed=seed)
            frames_sent, frames_recv = [], []
            for i in range(a.shape[0]):
                words = quantizer.encode_bits(soft[i], branch.qp)
                frame = ch.pack(words, split=s, mask_id=0, b_max=model.b_max)
                frames_sent.append(frame)
                frames_recv.append(
                    ch.bsc_transmit(frame, spec_ch, frame_index=frame_base + i)
                )

    y = soft + delta
    z_hat, tape_suf = diffnet.forward(suffix, y)

    trace = LinkTrace(
        split=s,
        pre_quant=a[0] if squeeze else a,
        frame_sent=frames_sent,
        frame_received=frames_recv,
        reconstructed=reconstructed,
        logits=z_hat[0] if squeeze else z_hat,
        internals={
            "prefix": prefix,
            "suffix": suffix,
            "tape_pre": tape_pre,
            "tape_suf": tape_suf,
            "feats": feats,
            "a": a,
            "squeeze": squeeze,
        },
    )
    return trace.logits, trace


def backward_train(
    model: SplitModel, s: int, trace: LinkTrace, d_loss_dz: np.ndarray
) -> TrainGrads:
    """Backpropagate through suffix, TRB (exact quantizer grads), prefix."""
    if trace.internals is None or trace.split != s:
        raise ValueError("trace does not carry training internals for this split")
    branch = _branch(model, s)
    ints = trace.internals
    g = np.atleast_2d(np.asarray(d_loss_dz, dtype=np.float64))

    grads_suf, g_y = diffnet.backward(ints["suffix"], ints["tape_suf"], g)
    d_x, d_theta = quantizer.quant_grads(ints["a"], branch.qp)
    g_a = g_y * d_x
    g_theta = (g_y[..., None] * d_theta).sum(axis=(0, 1))
    g_delta = (g_a * ints["feats"]).sum(axis=0)
    g_feats = g_a * branch.sv.delta
    grads_pre, _ = diffnet.backward(ints["prefix"], ints["tape_pre"], g_feats)
    return TrainGrads(net=grads_pre + grads_suf, theta=g_theta, delta=g_delta)


def forward_deploy(
    model: SplitModel,
    x: np.ndarray,
    s: int,
    ber: float,
    seed: int = 0,
    frame_index: int = 0,
) -> tuple[np.ndarray, LinkTrace]:
    """Deployment pass for a single input: hard codec, framed BSC transit."""
    branch = _branch(model, s)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward_deploy takes a single input vector")
    keep = (
        branch.mask.keep
        if branch.mask is not None
        else np.ones(model.width, dtype=bool)
    )
    _check_bandwidth(model, int(keep.sum()))

    feats, _ = diffnet.forward(_prefix(branch.net, s), x)
    a = pruning.apply_scaling(feats, branch.sv)
    s_e = quantizer.quantize_ideal(a[keep], branch.qp)
    words = quantizer.encode_bits(s_e, branch.qp)
    frame = ch.pack(
        words, split=s, mask_id=pruning.mask_id(branch.mask), b_max=model.b_max
    )
    recv = ch.bsc_transmit(frame, ch.ChannelSpec(ber=ber, seed=seed), frame_index)
    if recv.mask_id != pruning.mask_id(branch.mask):
        raise FrameFormatError("frame mask id does not match the deployed mask")
    rec = quantizer.decode_bits(ch.unpack(recv), branch.qp)
    full = np.zeros(model.width)
    full[keep] = rec
    z_hat, _ = diffnet.forward(_suffix(branch.net, s), full)
    c_hat = np.exp(z_hat - z_hat.max())
    c_hat /= c_hat.sum()
    trace = LinkTrace(
        split=s,
        pre_quant=a,
        frame_sent=[frame],
        frame_received=[recv],
        reconstructed=rec,
        logits=z_hat,
    )
    return c_hat, trace


def deploy_batch(
    model: SplitModel,
    x: np.ndarray,
    s: int,
    ber: float,
    seed: int = 0,
    frame_base: int = 0,
    frame_indices: np.ndarray | None = None,
) -> np.ndarray:
    """Batched deploy pass; returns (batch, classes) class probabilities.

    Network segments run batched; each sample still rides its own frame
    with frame_index = frame_base + row (or an explicit per-row index),
    so results are bit-identical to per-sample forward_deploy.
    """
    branch = _branch(model, s)
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    keep = (
        branch.mask.keep
        if branch.mask is not None
        else np.ones(model.width, dtype=bool)
    )
    _check_bandwidth(model, int(keep.sum()))
    ch.ChannelSpec(ber=ber, seed=seed)  # validates the BER range
    if frame_indices is None:
        frame_indices = frame_base + np.arange(xb.shape[0])

    feats, _ = diffnet.forward(_prefix(branch.net, s), xb)
    a = pruning.apply_scaling(feats, branch.sv)
    s_e = quantizer.quantize_ideal(a[:, keep], branch.qp)
    _, recv = _transmit_levels(
        s_e, branch.qp, ber, seed, np.asarray(frame_indices)
    )
    full = np.zeros((xb.shape[0], model.width))
    full[:, keep] = recv
    z_hat, _ = diffnet.forward(_suffix(branch.net, s), full)
    shifted = z_hat - z_hat.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def teacher_forward(model: SplitModel, x: np.ndarray) -> np.ndarray:
    """Clean full-network logits (no TRB, no channel)."""
    z, _ = diffnet.forward(model.teacher, np.asarray(x, dtype=np.float64))
    return z


def deploy_accuracy(
    model: SplitModel,
    x: np.ndarray,
    labels: np.ndarray,
    s: int,
    ber: float,
    seed: int = 0,
) -> float:
    probs = deploy_batch(model, x, s, ber, seed=seed)
    return float((probs.argmax(axis=1) == np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# checkpoint serialization


def _spec_to_json(spec: list[LayerSpec]) -> list[list]:
    return [[ls.kind, ls.in_dim, ls.out_dim] for ls in spec]


def _spec_from_json(data: list[list]) -> list[LayerSpec]:
    return [LayerSpec(kind, int(i), int(o)) for kind, i, o in data]


def _net_arrays(prefix: str, net: NetParams, out: dict) -> None:
    for i, layer in enumerate(net.layers):
        for key, val in layer.items():
            out[f"{prefix}/{i}/{key}"] = val


def _net_from_arrays(prefix: str, spec: list[LayerSpec], arrays: dict, seed: int):
    layers = []
    for i, ls in enumerate(spec):
        keys = (
            ["W", "b"]
            if ls.kind == "dense"
            else ["W1", "b1", "W2", "b2"]
            if ls.kind == "residual-dense-block"
            else []
        )
        layers.append({k: np.asarray(arrays[f"{prefix}/{i}/{k}"]) for k in keys})
    return NetParams(spec=spec, layers=layers, seed=seed)


def save_split_model(path, model: SplitModel, meta: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    _net_arrays("teacher", model.teacher, arrays)
    branch_meta = {}
    for s, br in sorted(model.branches.items()):
        _net_arrays(f"split{s}/net", br.net, arrays)
        arrays[f"split{s}/levels"] = br.qp.levels
        arrays[f"split{s}/delta"] = br.sv.delta
        if br.mask is not None:
            arrays[f"split{s}/mask"] = br.mask.keep.astype(np.uint8)
        branch_meta[str(s)] = {
            "temp": br.qp.temp,
            "eta": br.sv.eta,
            "has_mask": br.mask is not None,
        }
    manifest = {
        "spec": _spec_to_json(model.spec),
        "input_dim": model.input_dim,
        "classes": model.classes,
        "width": model.width,
        "blocks": model.blocks,
        "bits": model.bits,
        "flops_budget": model.flops_budget,
        "s_max": model.s_max,
        "b_max": model.b_max,
        "teacher_seed": model.teacher.seed,
        "branch_meta": branch_meta,
        "meta": meta or {},
    }
    save_container(path, "splitmodel", arrays, manifest)


def load_split_model(path) -> SplitModel:
    arrays, manifest = load_container(path, expect_kind="splitmodel")
    spec = _spec_from_json(manifest["spec"])
    model = SplitModel(
        spec=spec,
        teacher=_net_from_arrays("teacher", spec, arrays, manifest["teacher_seed"]),
        input_dim=manifest["input_dim"],
        classes=manifest["classes"],
        width=manifest["width"],
        blocks=manifest["blocks"],
        bits=manifest["bits"],
        flops_budget=manifest["flops_budget"],
        s_max=manifest["s_max"],
        b_max=manifest["b_max"],
    )
    for s_str, bm in manifest["branch_meta"].items():
        s = int(s_str)
        mask = None
        if bm["has_mask"]:
            mask = pruning.ChannelMask(keep=arrays[f"split{s}/mask"].astype(bool))
        model.branches[s] = SplitBranch(
            net=_net_from_arrays(f"split{s}/net", spec, arrays, model.teacher.seed),
            qp=quantizer.QuantizerParams(
                levels=arrays[f"split{s}/levels"], bits=model.bits, temp=bm["temp"]
            ),
            sv=pruning.ScalingVector(delta=arrays[f"split{s}/delta"], eta=bm["eta"]),
            mask=mask,
        )
    return model
