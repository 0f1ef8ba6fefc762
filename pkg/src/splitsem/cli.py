"""Command-line interface.

Subcommands: gen-data, train-teacher, train, train-policy, sweep,
ablate, plot, inspect-checkpoint.  Configuration lives in a flat JSON
key-value file; ``--set key=value`` flags override file entries.  Exit
codes: 0 ok, 2 config error, 3 missing artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

import numpy as np

from . import data as datamod
from . import harness, policy as polmod, splitmodel, trainer
from .checkpoint import load_container
from .errors import (
    ConfigError,
    MissingArtifactError,
    NumericalError,
    SplitsemError,
)

DEFAULT_CONFIG = {
    # synthetic task
    "data_n": 10000,
    "data_dim": 64,
    "data_classes": 10,
    "data_rho": 3.5,
    "data_seed": 1,
    "data_train_fraction": 0.8,
    # model geometry
    "model_width": 32,
    "model_blocks": 8,
    "model_bits": 2,
    "model_flops_budget": 0,  # 0 = default budget (admits 4 blocks)
    "model_b_max": 0,  # 0 = constraint disabled
    # training (see trainer.TrainConfig for semantics)
    "epochs_teacher": 60,
    "epochs_stage1": 60,
    "epochs_stage2": 60,
    "epochs_policy": 60,
    "lr": 0.1,
    "decay_epochs": [30, 45],
    "batch_size": 64,
    "lam": 0.5,
    "t_se": 4.0,
    "gamma": 1e-3,
    "eta": 1e-2,
    "ber_train": 1e-2,
    "seed": 0,
    "channel_seed": 0,
    "teacher_gate": 0.9,
    "momentum": 0.0,
    "paper_schedule": False,
    "policy_lr": 0.05,
    "policy_samples": 256,
    "policy_ber_draws": 6,
    "policy_repeats": 32,
    "policy_width": 16,
    "policy_raw_ber": False,
    # sweep
    "sweep_bers": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
    "sweep_seeds": [0, 1, 2, 3, 4],
    "ablation_split": 3,
    "ablation_ber": 1e-2,
}


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise MissingArtifactError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = value
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"--set value for {key!r} is not valid JSON: {raw!r}")
    return cfg


def train_config(cfg: dict) -> trainer.TrainConfig:
    names = {f.name for f in fields(trainer.TrainConfig)}
    return trainer.TrainConfig.from_dict({k: v for k, v in cfg.items() if k in names})


def model_kwargs(cfg: dict) -> dict:
    return {
        "input_dim": cfg["data_dim"],
        "classes": cfg["data_classes"],
        "width": cfg["model_width"],
        "blocks": cfg["model_blocks"],
        "bits": cfg["model_bits"],
        "flops_budget": cfg["model_flops_budget"] or None,
        "b_max": cfg["model_b_max"] or None,
    }


def _cmd_gen_data(args, cfg):
    ds = datamod.gen_synthetic(
        n=cfg["data_n"],
        dim=cfg["data_dim"],
        classes=cfg["data_classes"],
        rho=cfg["data_rho"],
        seed=cfg["data_seed"],
        train_fraction=cfg["data_train_fraction"],
    )
    datamod.save_dataset(args.out, ds)
    ref = datamod.nearest_centroid_accuracy(ds)
    print(f"wrote {args.out}: {ds.x_train.shape[0]} train / "
          f"{ds.x_test.shape[0]} test, reference accuracy {ref:.4f}")
    return 0


def _cmd_train_teacher(args, cfg):
    ds = datamod.load_dataset(args.data)
    tc = train_config(cfg)
    model = splitmodel.build_split_model(seed=tc.seed, **model_kwargs(cfg))
    model.teacher, report = trainer.train_ideal(ds, model.spec, tc)
    splitmodel.save_split_model(args.out, model, meta={"stages": ["teacher"]})
    if args.report:
        report.to_csv(args.report)
    print(f"teacher accuracy {report.final['accuracy']:.4f}; wrote {args.out}")
    return 0


def _parse_splits(raw: str, s_max: int) -> list[int]:
    if raw == "all":
        return list(range(1, s_max + 1))
    try:
        splits = [int(tok) for tok in raw.split(",") if tok]
    except ValueError:
        raise ConfigError(f"--splits expects integers or 'all', got {raw!r}")
    bad = [s for s in splits if not 1 <= s <= s_max]
    if bad:
        raise ConfigError(f"splits {bad} outside 1..{s_max}")
    return splits


def _cmd_train(args, cfg):
    ds = datamod.load_dataset(args.data)
    tc = train_config(cfg)
    model = splitmodel.load_split_model(args.model)
    splits = _parse_splits(args.splits, model.s_max)
    stages = args.stages.split(",")
    for st in stages:
        if st not in ("1", "2"):
            raise ConfigError(f"--stages accepts 1 and/or 2, got {st!r}")
    for s in splits:
        if "1" in stages:
            rep = trainer.stage1_joint(model, ds, tc, s)
            print(f"stage1 split {s}: loss {rep.final['loss']:.4f} "
                  f"acc {rep.final['accuracy']:.4f}")
            if args.report:
                rep.to_csv(f"{args.report}.stage1-s{s}.csv")
        if "2" in stages:
            rep = trainer.stage2_sparse(model, ds, tc, s)
            print(f"stage2 split {s}: z'={rep.final['z_prime']} "
                  f"acc {rep.final['accuracy']:.4f}")
            if args.report:
                rep.to_csv(f"{args.report}.stage2-s{s}.csv")
    splitmodel.save_split_model(args.out, model, meta={"stages": args.stages})
    print(f"wrote {args.out}")
    return 0


def _cmd_train_policy(args, cfg):
    ds = datamod.load_dataset(args.data)
    tc = train_config(cfg)
    model = splitmodel.load_split_model(args.model)
    pol, report, pdata = trainer.stage3_policy(model, ds, tc)
    polmod.save_policy(args.out, pol, meta={"model": str(args.model)})
    if args.dataset_csv:
        pdata.to_csv(args.dataset_csv)
    if args.report:
        report.to_csv(args.report)
    print(f"policy labelling accuracy {report.final['accuracy']:.4f}; "
          f"wrote {args.out}")
    return 0


def _cmd_sweep(args, cfg):
    ds = datamod.load_dataset(args.data)
    model = splitmodel.load_split_model(args.model)
    pol = polmod.load_policy(args.policy) if args.policy else None
    result = harness.run_sweep(
        model, pol, ds, cfg["sweep_bers"], cfg["sweep_seeds"]
    )
    harness.emit_sweep_csv(result, args.out)
    print(f"wrote {args.out} ({len(result.rows)} rows)")
    return 0


def _cmd_ablate(args, cfg):
    ds = datamod.load_dataset(args.data)
    tc = train_config(cfg)
    rows = harness.run_ablation(
        ds, tc, model_kwargs(cfg),
        split=cfg["ablation_split"], ber_test=cfg["ablation_ber"],
    )
    harness.emit_csv(rows, args.out, harness.ABLATION_HEADER)
    for row in rows:
        print(f"case {row['case']} ({row['label']}): "
              f"acc {row['accuracy']:.4f} z'={row['z_prime']}")
    print(f"wrote {args.out}")
    return 0


def _cmd_plot(args, cfg):
    result = harness.read_sweep_csv(args.infile)
    harness.emit_svg_plot(result, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_inspect(args, cfg):
    arrays, manifest = load_container(args.infile)
    skip = {"arrays", "format", "version"}
    print(f"kind: {manifest['kind']}  (container v{manifest['version']})")
    for key in sorted(manifest):
        if key not in skip and key != "kind":
            print(f"{key}: {json.dumps(manifest[key], sort_keys=True)}")
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        print(f"array {name}: shape {arr.shape} dtype {arr.dtype}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitsem",
        description="joint device-edge digital semantic communication, desk scale",
    )
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key (value parsed as JSON)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-teacher", help="stage 0: clean teacher")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("train", help="stages 1-2 for chosen splits")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint with a trained teacher")
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default="all", help="comma list or 'all'")
    p.add_argument("--stages", default="1,2", help="subset of '1,2'")
    p.add_argument("--report", help="prefix for per-stage report CSVs")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-policy", help="stage 3: split-point policy")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-csv", help="audit CSV of the policy dataset")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train_policy)

    p = sub.add_parser("sweep", help="accuracy vs BER for splits and policy")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--policy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ablate", help="train and score the 7-case ablation matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("plot", help="render a sweep CSV as SVG")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("inspect-checkpoint", help="describe a checkpoint")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except SplitsemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
