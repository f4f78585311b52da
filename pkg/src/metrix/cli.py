"""Experiment front end.

Subcommands: ``gen-data`` (synthetic dataset files), ``train`` (one run
directory with metrics.csv, run.json, checkpoints and a figure), ``ablate``
(one run per swept value plus a summary CSV and figure), ``positivity``
(empirical and theoretical positivity curves at initialization).

Exit codes: 0 success, 2 configuration error, 3 numeric failure. The
METRIX_SEED environment variable overrides the trainer seed from the config.
All outputs and config-relative paths resolve against --out.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evaluation, figures, losses, mixing, training
from .config import ConfigError, load_config
from .datasets import generate_gaussian, save_dataset
from .training import NumericError, Trainer

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(value):
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _load(args):
    return load_config(args.config, seed_override=os.environ.get("METRIX_SEED"))


def cmd_gen_data(args):
    dataset = generate_gaussian(args.classes, args.per_class, args.dim,
                                args.center_scale, args.sigma, args.seed)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, args.name)
    save_dataset(dataset, data_path, data_path + ".split")
    print(f"wrote {data_path} ({len(dataset.examples)} examples, "
          f"{len(dataset.train_classes)} train / {len(dataset.test_classes)} "
          "test classes)")
    return EXIT_OK


def _run_one(exp, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    dataset = exp.build_dataset(out_dir)
    state = training.train(dataset, exp.train, out_dir=out_dir)
    run_doc = {
        "config": exp.resolved,
        "analysis_constants": {
            "uniformity_t": evaluation.UNIFORMITY_T,
            "alignment_exponent": 2,
        },
        "final": state.final,
    }
    with open(os.path.join(out_dir, "run.json"), "w", newline="\n") as fh:
        json.dump(run_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    figures.plot_metrics(state.log, os.path.join(out_dir, "metrics.png"))
    return dataset, state


def cmd_train(args):
    exp = _load(args)
    _, state = _run_one(exp, args.out)
    print(f"run complete: recall@1={state.final['recall@1']:.4f} "
          f"(outputs in {args.out})")
    return EXIT_OK


def _override(exp_train, axis, value):
    if axis == "w":
        return dataclasses.replace(exp_train, w=float(value))
    if axis == "k":
        return dataclasses.replace(exp_train, k_hard=int(value))
    if axis == "pairs":
        return dataclasses.replace(exp_train,
                                   pair_kinds=mixing.parse_pair_kinds(value))
    if axis == "mixtype":
        return dataclasses.replace(exp_train,
                                   mix_types=mixing.parse_mix_types(value))
    raise ConfigError(f"unknown ablation axis {axis!r}")


def _axis_value(axis, value):
    if axis == "w":
        return float(value)
    if axis == "k":
        return int(value)
    return str(value)


def cmd_ablate(args):
    exp = _load(args)
    os.makedirs(args.out, exist_ok=True)
    dataset = exp.build_dataset(args.out)
    ks = (1, 2, 4, 8)

    def final_recalls(train_cfg, run_dir):
        os.makedirs(run_dir, exist_ok=True)
        state = training.train(dataset, train_cfg, out_dir=run_dir)
        return evaluation.recall_at_k(state.params, dataset.test_split(), ks)

    baseline_cfg = dataclasses.replace(exp.train, w=0.0)
    rows = []
    baseline = final_recalls(baseline_cfg, os.path.join(args.out, "baseline"))
    rows.append(["baseline"] + [baseline[k] for k in ks])
    swept = []
    for value in args.values:
        try:
            cfg = _override(exp.train, args.axis, value)
        except ValueError as exc:
            raise ConfigError(f"--values: {exc}") from None
        run_dir = os.path.join(args.out, f"{args.axis}_{value}")
        recalls = final_recalls(cfg, run_dir)
        rows.append([_axis_value(args.axis, value)] + [recalls[k] for k in ks])
        swept.append((_axis_value(args.axis, value), recalls[1]))

    csv_path = os.path.join(args.out, f"ablation_{args.axis}.csv")
    _write_csv(csv_path, ("value", "recall@1", "recall@2", "recall@4", "recall@8"),
               rows)
    figures.plot_ablation(args.axis, [v for v, _ in swept],
                          [r for _, r in swept], baseline[1],
                          os.path.join(args.out, f"ablation_{args.axis}.png"))
    print(f"wrote {csv_path} ({len(rows)} rows incl. baseline)")
    return EXIT_OK


def _parse_grid(text):
    try:
        start, stop, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise ConfigError(f"--grid must be start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"--grid {text!r} is not an increasing range")
    count = int(round((stop - start) / step))
    grid = [round(start + i * step, 12) for i in range(count + 1)]
    return [g for g in grid if g <= stop + 1e-12]


def cmd_positivity(args):
    exp = _load(args)
    if exp.train.loss_name not in ("ms", "pa"):
        raise ConfigError("loss.name: the positivity study needs the "
                          "multi-similarity form (ms or pa), got "
                          f"{exp.train.loss_name!r}")
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    os.makedirs(args.out, exist_ok=True)
    dataset = exp.build_dataset(args.out)
    trainer = Trainer(dataset, exp.train)  # epoch-0 parameters
    plugin = losses.make_plugin(exp.train.loss_name, **exp.train.loss_hyperparams)
    grid = _parse_grid(args.grid)
    curve = evaluation.positivity_curve(trainer.params, dataset, plugin, grid,
                                        args.n, exp.train.seed,
                                        mix_type=args.mix_type)
    rows = [(lam, emp, theo, curve.n)
            for lam, emp, theo in zip(curve.lambdas, curve.empirical,
                                      curve.theoretical)]
    csv_path = os.path.join(args.out, "positivity.csv")
    _write_csv(csv_path, ("lambda", "empirical", "theoretical", "n"), rows)
    figures.plot_positivity(curve, os.path.join(args.out, "positivity.png"))
    print(f"wrote {csv_path} ({len(rows)} grid points, n={curve.n})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="metrix",
        description="metric-learning runs with label-interpolated mixing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--classes", type=int, default=32)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--center-scale", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="dataset.txt")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="sweep one axis, one run per value")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=("k", "pairs", "mixtype", "w"))
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--out", default="ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("positivity",
                       help="positivity of mixed embeddings vs interpolation factor")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", default="0.0:1.0:0.1")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--mix-type", default="embed",
                   choices=("input", "feature", "embed"))
    p.add_argument("--out", default="positivity")
    p.set_defaults(func=cmd_positivity)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
