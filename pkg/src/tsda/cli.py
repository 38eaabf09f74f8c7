"""Command-line entry point.

Subcommands: generate, train, eval, ablate, sweep, intervene, plot.
Exit codes: 0 ok, 1 usage/config, 2 numerical abort, 3 I/O.
Every command is deterministic given its resolved config; outputs carry no
timestamps.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import plots
from .config import load_config_file, resolve_config, write_resolved
from .data import (
    ConfigError,
    DatasetFormatError,
    GENERATOR_VERSION,
    GeneratorConfig,
    load_split_dir,
    generate,
    save_jsonl,
)
from .model import TSDAModel
from .trainer import (
    NumericalAbort,
    ablate,
    evaluate,
    intervention_report,
    sensitivity_sweep,
    train,
    write_train_log,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = []
            for c in columns:
                v = row[c]
                out.append(f"{v:.12g}" if isinstance(v, float) else v)
            writer.writerow(out)


def _generator_config(cfg: dict) -> GeneratorConfig:
    d = cfg["data"]
    return GeneratorConfig(
        T_L=d["T_L"], T_V=d["T_V"], T_A=d["T_A"], d_in=d["d_in"],
        n_train=d["n_train"], n_val=d["n_val"], n_test=d["n_test"],
        noise_sigma=d["noise_sigma"], w_t=d["w_t"], w_s=d["w_s"],
    )


def _load_cfg(args) -> dict:
    cfg = load_config_file(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["data"]["seed"] = args.seed
    return cfg


def _load_data(args):
    if not os.path.isdir(args.data):
        raise FileNotFoundError(f"dataset directory not found: {args.data}")
    return load_split_dir(args.data)


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    gen_cfg = _generator_config(cfg)
    split = generate(gen_cfg, cfg["data"]["seed"])
    for name, samples in split.splits().items():
        save_jsonl(samples, os.path.join(args.out, f"{name}.jsonl"))
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "seed": cfg["data"]["seed"],
        "n_train": len(split.train),
        "n_val": len(split.val),
        "n_test": len(split.test),
    }
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _say(args, f"wrote {sum(len(s) for s in split.splits().values())} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    dataset = _load_data(args)
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    result = train(cfg, dataset)
    write_train_log(result.log_rows, os.path.join(args.out, "train_log.csv"))
    result.model.save_checkpoint(os.path.join(args.out, "checkpoint.json"))
    report = evaluate(result.model, dataset.val)
    _say(args, json.dumps({"best_epoch": result.best_epoch, **asdict(report)}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = TSDAModel.load_checkpoint(args.checkpoint)
    dataset = _load_data(args)
    samples = dataset.splits()[args.split]
    report = evaluate(model, samples)
    print(json.dumps(asdict(report), sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    dataset = _load_data(args)
    switches = [s for s in args.switches.split(",") if s]
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    rows = ablate(cfg, dataset, switches)
    path = os.path.join(args.out, "ablation.csv")
    _write_csv(path, ["variant", "val_mae", "val_acc7"], rows)
    _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    dataset = _load_data(args)
    try:
        values = [float(v) for v in args.values.split(",") if v]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {args.values!r}")
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    rows, warnings = sensitivity_sweep(cfg, dataset, args.param, values)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    path = os.path.join(args.out, f"sweep_{args.param}.csv")
    _write_csv(path, ["value", "mae", "acc7"], rows)
    _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_intervene(args) -> int:
    model = TSDAModel.load_checkpoint(args.checkpoint)
    dataset = _load_data(args)
    seed = args.seed if args.seed is not None else model.cfg["train"]["seed"]
    rows = intervention_report(model, dataset.test, seed=seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "intervention.csv")
    _write_csv(path, ["condition", "mae", "mean_gate"], rows)
    _say(args, f"wrote {path}")
    return EXIT_OK


def _read_log(path: str):
    epochs = []
    series = {k: [] for k in ("task", "pur", "decorr", "orth", "cal")}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "epoch" not in header:
            raise DatasetFormatError(f"{path}: line 1: missing train-log header")
        idx = {name: header.index(name) for name in ("epoch", *series)}
        for lineno, row in enumerate(reader, start=2):
            try:
                epochs.append(int(row[idx["epoch"]]))
                for name in series:
                    series[name].append(float(row[idx[name]]))
            except (ValueError, IndexError):
                raise DatasetFormatError(f"{path}: line {lineno}: malformed row")
    if not epochs:
        raise DatasetFormatError(f"{path}: line 2: log contains no rows")
    return epochs, series


def cmd_plot(args) -> int:
    if args.log is None and args.checkpoint is None:
        raise ConfigError("plot requires --log and/or --checkpoint with --data")
    os.makedirs(args.out, exist_ok=True)
    if args.log is not None:
        epochs, series = _read_log(args.log)
        render_path = os.path.join(args.out, "regularization_curves.svg")
        plots.render_curves(epochs, series, render_path)
        rows = [
            {"epoch": e, **{k: series[k][i] for k in series}}
            for i, e in enumerate(epochs)
        ]
        _write_csv(os.path.join(args.out, "regularization_curves.csv"),
                   ["epoch", "task", "pur", "decorr", "orth", "cal"], rows)
        _say(args, f"wrote {render_path}")
    if args.checkpoint is not None:
        if args.data is None:
            raise ConfigError("plot --checkpoint also requires --data")
        model = TSDAModel.load_checkpoint(args.checkpoint)
        dataset = _load_data(args)
        from .tensor import no_grad

        embeddings, labels = [], []
        with no_grad():
            for s in dataset.test:
                embeddings.append(model.forward_sample(s).z_hat.data.copy())
                labels.append(s.label)
        scores = plots.pca_scores(np.array(embeddings), k=2)
        scatter_path = os.path.join(args.out, "embedding_pca.svg")
        plots.render_scatter(scores, labels, scatter_path)
        rows = [
            {"pc1": float(scores[i, 0]), "pc2": float(scores[i, 1]), "label": labels[i]}
            for i in range(len(labels))
        ]
        _write_csv(os.path.join(args.out, "embedding_pca.csv"), ["pc1", "pc2", "label"], rows)
        _say(args, f"wrote {scatter_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON run config")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override config seeds")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="tsda")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common]).set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--switches", required=True, help="comma-separated switch names")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated weights")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("intervene", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_intervene)

    p = sub.add_parser("plot", parents=[common])
    p.add_argument("--log", default=None, help="train_log.csv path")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, DatasetFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
