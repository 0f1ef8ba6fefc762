"""Experiment harness: sweeps, the ablation matrix, CSV and SVG output.

Sweep rows carry (config id, split or "policy", ber, snr_db, accuracy,
payload bits, seed).  For fixed-split rows the payload is exactly
``bandwidth_bits``; for policy rows it is the mean over per-sample
decisions.  A ber of 0 denotes the clean channel and maps to an
infinite SNR column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import channel as chmod
from . import diffnet, pruning
from . import policy as polmod
from . import splitmodel, trainer
from .data import SyntheticDataset
from .errors import AllChannelsPrunedError, ConfigError, MissingArtifactError


@dataclass
class SweepRow:
    config_id: str
    split: str
    ber: float
    snr_db: float
    accuracy: float
    payload_bits: float
    seed: int


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)


SWEEP_HEADER = ["config_id", "split", "ber", "snr_db", "accuracy",
                "payload_bits", "seed"]


def _snr_col(ber: float) -> float:
    return float("inf") if ber == 0.0 else chmod.ber_to_snr_db(ber)


def run_sweep(
    model: splitmodel.SplitModel,
    pol: polmod.PolicyNet | None,
    data: SyntheticDataset,
    bers,
    seeds,
) -> SweepResult:
    """Deploy-mode accuracy per fixed split and per policy decision."""
    bers = list(bers)
    seeds = list(seeds)
    if not bers or not seeds:
        raise ConfigError("sweep needs non-empty BER and seed lists")
    trained = sorted(model.branches)
    if not trained:
        raise MissingArtifactError("no trained splits to sweep")
    result = SweepResult()
    x, y = data.x_test, data.y_test
    for s in trained:
        bits = splitmodel.bandwidth_bits(model, s)
        for ber in bers:
            for seed in seeds:
                acc = splitmodel.deploy_accuracy(model, x, y, s, ber, seed=seed)
                result.rows.append(
                    SweepRow(
                        config_id=f"split{s}",
                        split=str(s),
                        ber=float(ber),
                        snr_db=_snr_col(ber),
                        accuracy=acc,
                        payload_bits=float(bits),
                        seed=int(seed),
                    )
                )
    if pol is not None:
        for ber in bers:
            choices = np.array(
                [
                    polmod.enforce_budget(polmod.decide(p), pol.s_max).s
                    for p in np.atleast_2d(polmod.policy_forward(pol, x, ber))
                ]
            )
            bits = float(
                np.mean([splitmodel.bandwidth_bits(model, s) for s in choices])
            )
            for seed in seeds:
                correct = np.zeros(x.shape[0], dtype=bool)
                for s in np.unique(choices):
                    sel = choices == s
                    probs = splitmodel.deploy_batch(
                        model, x[sel], int(s), ber, seed=seed,
                        frame_indices=np.flatnonzero(sel),
                    )
                    correct[sel] = probs.argmax(axis=1) == y[sel]
                result.rows.append(
                    SweepRow(
                        config_id="policy",
                        split="policy",
                        ber=float(ber),
                        snr_db=_snr_col(ber),
                        accuracy=float(correct.mean()),
                        payload_bits=bits,
                        seed=int(seed),
                    )
                )
    return result


ABLATION_CASES = {
    1: dict(label="ce-clean", lam=1.0, noise=False, quant=False, prune=False),
    2: dict(label="ce-noise", lam=1.0, noise=True, quant=False, prune=False),
    3: dict(label="sll-noise", lam=None, noise=True, quant=False, prune=False),
    4: dict(label="ce-quant", lam=1.0, noise=True, quant=True, prune=False),
    5: dict(label="ce-quant-prune", lam=1.0, noise=True, quant=True, prune=True),
    6: dict(label="sll-quant", lam=None, noise=True, quant=True, prune=False),
    7: dict(label="sll-quant-prune", lam=None, noise=True, quant=True, prune=True),
}

ABLATION_HEADER = ["case", "label", "loss", "noise", "quant", "prune",
                   "accuracy", "z_prime"]


def _eval_analog(model, branch, s, x, y, *, noise, ber, seed) -> float:
    """Deploy-side evaluation of the unquantized (analog) variants."""
    feats, _ = diffnet.forward(splitmodel._prefix(branch.net, s), x)
    a = pruning.apply_scaling(feats, branch.sv)
    if noise and ber > 0.0:
        snr = 10.0 ** (chmod.ber_to_snr_db(ber) / 10.0)
        sigma = np.sqrt(np.mean(a * a) / snr)
        rng = np.random.default_rng(seed)
        a = a + sigma * rng.standard_normal(a.shape)
    z, _ = diffnet.forward(splitmodel._suffix(branch.net, s), a)
    return float((z.argmax(axis=1) == y).mean())


def run_ablation(
    data: SyntheticDataset,
    cfg: trainer.TrainConfig,
    model_kwargs: dict,
    split: int = 3,
    ber_test: float = 1e-2,
) -> list[dict]:
    """Train and evaluate the seven module-combination cases.

    Unquantized "noise" cases ride feature-level AWGN at the QPSK-
    equivalent SNR of the test BER; digital cases run the real codec
    and BSC.  Pruned cases run the sparsity stage and report surviving
    channels.
    """
    rows = []
    for case in sorted(ABLATION_CASES):
        spec_case = ABLATION_CASES[case]
        lam = cfg.lam if spec_case["lam"] is None else spec_case["lam"]
        model = splitmodel.build_split_model(seed=cfg.seed, **model_kwargs)
        model.teacher, _ = trainer.train_ideal(data, model.spec, cfg)
        channel_mode = (
            "bsc" if spec_case["quant"] and spec_case["noise"]
            else "awgn" if spec_case["noise"]
            else "none"
        )
        trainer._train_branch(
            model, data, cfg, split,
            lam=lam, gamma=0.0,
            epochs=cfg.effective_epochs("stage1"), stage="stage1",
            use_quant=spec_case["quant"], channel_mode=channel_mode,
            ber=ber_test if spec_case["noise"] else 0.0,
        )
        if spec_case["prune"]:
            trainer._train_branch(
                model, data, cfg, split,
                lam=lam, gamma=cfg.gamma,
                epochs=cfg.effective_epochs("stage2"), stage="stage2",
                use_quant=spec_case["quant"], channel_mode=channel_mode,
                ber=ber_test,
            )
            mask = pruning.mask_from(model.branches[split].sv)
            if mask.surviving == 0:
                raise AllChannelsPrunedError(
                    f"ablation case {case} pruned every channel"
                )
            model.branches[split].mask = mask
        branch = model.branches[split]
        if spec_case["quant"]:
            acc = splitmodel.deploy_accuracy(
                model, data.x_test, data.y_test, split,
                ber_test if spec_case["noise"] else 0.0,
                seed=cfg.channel_seed,
            )
        else:
            acc = _eval_analog(
                model, branch, split, data.x_test, data.y_test,
                noise=spec_case["noise"], ber=ber_test, seed=cfg.channel_seed,
            )
        z_prime = splitmodel.surviving_channels(model, split)
        rows.append(
            {
                "case": case,
                "label": spec_case["label"],
                "loss": "ce" if lam == 1.0 else "sll",
                "noise": int(spec_case["noise"]),
                "quant": int(spec_case["quant"]),
                "prune": int(spec_case["prune"]),
                "accuracy": acc,
                "z_prime": z_prime,
            }
        )
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(rows, path, header: list[str]) -> None:
    """RFC-4180-style CSV; floats rendered by repr for byte stability."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                writer.writerow([_fmt(row[k]) for k in header])
            else:
                writer.writerow([_fmt(getattr(row, k)) for k in header])


def emit_sweep_csv(result: SweepResult, path) -> None:
    emit_csv(result.rows, path, SWEEP_HEADER)


def read_sweep_csv(path) -> SweepResult:
    result = SweepResult()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            result.rows.append(
                SweepRow(
                    config_id=rec["config_id"],
                    split=rec["split"],
                    ber=float(rec["ber"]),
                    snr_db=float(rec["snr_db"]),
                    accuracy=float(rec["accuracy"]),
                    payload_bits=float(rec["payload_bits"]),
                    seed=int(rec["seed"]),
                )
            )
    return result


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f"]

_VIEW_W, _VIEW_H = 640, 480
_MARGIN = 60


def emit_svg_plot(result: SweepResult, path) -> None:
    """Accuracy vs log10(ber) polylines, one per config, self-contained.

    Rows are averaged over seeds per (config, ber); clean-channel rows
    (ber = 0) have no finite abscissa and are skipped.
    """
    rows = [r for r in result.rows if r.ber > 0.0]
    if not rows:
        raise ConfigError("nothing to plot: no rows with ber > 0")
    configs = sorted({r.config_id for r in rows})
    xs = sorted({np.log10(r.ber) for r in rows})
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1.0

    def sx(v):
        return _MARGIN + (v - x_lo) / span * (_VIEW_W - 2 * _MARGIN)

    def sy(acc):
        return _VIEW_H - _MARGIN - acc * (_VIEW_H - 2 * _MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_VIEW_W} {_VIEW_H}">',
        f'<rect width="{_VIEW_W}" height="{_VIEW_H}" fill="white"/>',
        f'<line x1="{_MARGIN}" y1="{_VIEW_H - _MARGIN}" x2="{_VIEW_W - _MARGIN}" '
        f'y2="{_VIEW_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_VIEW_H - _MARGIN}" stroke="black"/>',
        f'<text x="{_VIEW_W // 2}" y="{_VIEW_H - 15}" text-anchor="middle" '
        f'font-size="14">log10(ber)</text>',
        f'<text x="18" y="{_VIEW_H // 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {_VIEW_H // 2})">accuracy</text>',
    ]
    for v in xs:
        parts.append(
            f'<text x="{sx(v):.1f}" y="{_VIEW_H - _MARGIN + 18}" '
            f'text-anchor="middle" font-size="11">{v:.0f}</text>'
        )
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{_MARGIN - 6}" y="{sy(tick):.1f}" text-anchor="end" '
            f'font-size="11">{tick:.2f}</text>'
        )
    for i, cid in enumerate(configs):
        pts = {}
        for r in rows:
            if r.config_id == cid:
                pts.setdefault(np.log10(r.ber), []).append(r.accuracy)
        coords = " ".join(
            f"{sx(v):.2f},{sy(float(np.mean(pts[v]))):.2f}" for v in sorted(pts)
        )
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" '
            f'points="{coords}"/>'
        )
        parts.append(
            f'<text x="{_VIEW_W - _MARGIN + 4}" y="{_MARGIN + 16 * i}" '
            f'font-size="11" fill="{color}">{cid}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
