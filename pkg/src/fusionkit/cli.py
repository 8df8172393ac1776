"""Command-line interface.

Subcommands::

    fusionkit gen-data  --spec spec.json --out data-dir/
    fusionkit train     --config cfg.json --out run-dir/
    fusionkit eval      --checkpoint run-dir/checkpoint --data data-dir/
    fusionkit gradcheck --op mlb [--seed N] [--input-dims M N] [--output-dim O]
    fusionkit compare   --config cfg.json --out table.csv

``FUSIONKIT_SEED`` overrides every seed found in loaded configs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .fusion import fusion_kinds, make_fusion
from .qa.compare import load_config, resolve_dataset, run_comparison
from .qa.data import SyntheticTaskSpec, generate_dataset, load_dataset, save_dataset
from .qa.models import build_model
from .training import (
    NanLossError,
    Optimizer,
    evaluate,
    grad_check,
    load_checkpoint,
    load_params_into,
    save_checkpoint,
    train_epoch,
)


def _cmd_gen_data(args):
    spec_obj = load_config(args.spec)
    spec = SyntheticTaskSpec.from_dict(spec_obj)
    bundle = generate_dataset(spec)
    save_dataset(bundle, args.out)
    oracles = bundle.manifest["oracle_accuracy"]["val"]
    print(f"wrote {args.out}: {spec.n_train} train / {spec.n_val} val examples")
    print(f"val oracle accuracy: bilinear {oracles['bilinear']:.3f}, "
          f"text-only {oracles['text_only']:.3f}")
    return 0


def _cmd_train(args):
    config = load_config(args.config)
    out_dir = Path(args.out)
    bundle = resolve_dataset(config)
    spec = bundle.manifest["spec"]
    model_cfg = dict(config.get("model", {}))
    model_cfg.setdefault("seed", config.get("seed", 0))
    model_cfg.update({
        "seq_len": spec["seq_len"],
        "context_dim": spec["context_dim"],
        "text_dim": spec["text_dim"],
        "query_dim": spec["query_dim"],
    })
    model = build_model(model_cfg)

    train_cfg = dict(config.get("train", {}))
    epochs = int(train_cfg.get("epochs", 10))
    batch_size = int(train_cfg.get("batch_size", 16))
    optimizer = Optimizer(
        kind=train_cfg.get("optimizer", "adam"),
        lr=float(train_cfg.get("lr", 1e-3)),
    )
    rng = np.random.default_rng(config.get("seed", 0))
    history = []
    for epoch in range(1, epochs + 1):
        try:
            report = train_epoch(model, bundle.train, optimizer, batch_size, rng)
        except NanLossError as err:
            print(f"aborted at epoch {epoch}: {err}", file=sys.stderr)
            return 1
        val = evaluate(model, bundle.val)
        history.append((epoch, report.loss, val.accuracy))
        print(f"epoch {epoch:3d}  train loss {report.loss:.4f}  "
              f"val acc {val.accuracy:.3f}")

    save_checkpoint(out_dir / "checkpoint", model.params(),
                    model.config.to_dict())
    reporting.write_csv(
        out_dir / "metrics.csv",
        ("epoch", "train_loss", "val_acc"),
        history,
    )
    reporting.training_figure(out_dir / "training.png", history)
    print(f"wrote {out_dir}/checkpoint, metrics.csv, training.png")
    return 0


def _cmd_eval(args):
    config, values = load_checkpoint(args.checkpoint)
    model = build_model(config)
    load_params_into(model.params(), values)
    bundle = load_dataset(args.data)
    examples = bundle.val if args.split == "val" else bundle.train
    report = evaluate(model, examples)
    print(f"split={args.split} accuracy={report.accuracy:.6f} "
          f"loss={report.loss:.6f}")
    return 0


def _cmd_gradcheck(args):
    m, n = args.input_dims
    op = make_fusion(args.op, (m, n), args.output_dim, seed=args.seed)
    report = grad_check(op, seed=args.seed)
    for line in report.lines():
        print(line)
    print("OK" if report.ok else "FAILED")
    return 0 if report.ok else 1


def _cmd_compare(args):
    config = load_config(args.config)
    outcome = run_comparison(config, out_csv=args.out)
    for row in outcome.table_rows():
        print(", ".join(reporting.format_cell(v) for v in row))
    written = [str(p) for p in outcome.table_paths + outcome.figure_paths]
    print("wrote " + ", ".join(written))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fusionkit",
        description="Bilinear fusion operators and the synthetic QA harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic QA dataset")
    p.add_argument("--spec", required=True, help="task spec JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one model config")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check a fusion op")
    p.add_argument("--op", required=True, choices=fusion_kinds())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-dims", type=int, nargs=2, default=(16, 16),
                   metavar=("M", "N"))
    p.add_argument("--output-dim", type=int, default=8)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("compare", help="train and tabulate fusion variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output CSV (writes .md too)")
    p.set_defaults(func=_cmd_compare)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
