"""Variant-comparison runs: train each fusion variant on one dataset under a
matched parameter budget and tabulate accuracy offsets against the
concatenation baseline.

A comparison config is a JSON object::

    {
      "seed": 7,
      "dataset": {"spec": {...}} | {"path": "data-dir"},
      "train": {"epochs": 12, "batch_size": 16, "lr": 0.003,
                "optimizer": "adam"},
      "model": {... shared StreamModelConfig fields ...},
      "match_budget": true,
      "variants": [
        {"name": "concat", "variant": "concat"},
        {"name": "mlb", "variant": "blp", "fusion": "mlb",
         "fusion_options": {"activation": "none"}},
        {"name": "dual_mcb", "model": "dual", "fusion": "mcb"}
      ]
    }

The ``FUSIONKIT_SEED`` environment variable, when set, overrides every
``seed`` key in a config loaded through :func:`load_config`.

Variants that diverge (non-finite loss) are reported as ``No Convergence``
rows and the run continues.  When a plain concatenation variant is present
it is trained first and all offsets are relative to its final validation
accuracy; with ``match_budget`` every other variant's head width is solved
so its trainable parameter count lands within 10% of the baseline's
(reported per row either way).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import reporting
from ..training import NanLossError, Optimizer, evaluate, train_epoch
from .data import SyntheticTaskSpec, generate_dataset, load_dataset
from .models import DualStreamConfig, StreamModelConfig, build_model

SEED_ENV_VAR = "FUSIONKIT_SEED"
BUDGET_TOLERANCE = 0.10


def apply_seed_override(obj, seed):
    """Replace every ``"seed"`` key in a nested config structure."""
    if isinstance(obj, dict):
        return {
            k: (seed if k == "seed" else apply_seed_override(v, seed))
            for k, v in obj.items()
        }
    if isinstance(obj, list):
        return [apply_seed_override(v, seed) for v in obj]
    return obj


def load_config(path):
    """Read a JSON config, honoring the ``FUSIONKIT_SEED`` override."""
    config = json.loads(Path(path).read_text())
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        config = apply_seed_override(config, int(env))
        config.setdefault("seed", int(env))
    return config


def resolve_dataset(config):
    """Dataset bundle from an inline spec or an on-disk directory."""
    dataset = config.get("dataset", {})
    if "path" in dataset:
        return load_dataset(dataset["path"])
    spec_obj = dict(dataset.get("spec", {}))
    spec_obj.setdefault("seed", config.get("seed", 0))
    return generate_dataset(SyntheticTaskSpec.from_dict(spec_obj))


@dataclass
class VariantResult:
    name: str
    params: int
    epoch: int
    train_loss: float | None
    val_acc: float | None
    converged: bool
    history: list = field(default_factory=list)


@dataclass
class ComparisonResult:
    rows: list[VariantResult]
    base_name: str | None
    table_paths: list = field(default_factory=list)
    figure_paths: list = field(default_factory=list)

    def table_rows(self):
        base = next(
            (r.val_acc for r in self.rows
             if r.name == self.base_name and r.converged),
            None,
        )
        out = []
        for r in self.rows:
            if not r.converged:
                out.append((r.name, r.params, r.epoch, None,
                            reporting.NO_CONVERGENCE, None))
                continue
            offset = None if base is None else r.val_acc - base
            out.append((r.name, r.params, r.epoch, r.train_loss, r.val_acc,
                        offset))
        return out


def _model_config(variant, shared, dims, seed):
    fields = dict(shared)
    fields.update({k: v for k, v in variant.items() if k not in ("name", "model")})
    fields.update(dims)
    fields["seed"] = seed
    if variant.get("model", "stream") == "dual":
        allowed = DualStreamConfig.__dataclass_fields__
        return DualStreamConfig(**{k: v for k, v in fields.items()
                                   if k in allowed})
    allowed = StreamModelConfig.__dataclass_fields__
    return StreamModelConfig(**{k: v for k, v in fields.items() if k in allowed})


def _match_hidden(make_config, target):
    """Solve the head width so the trainable count lands near ``target``.

    The count is affine in the hidden width, so two probes determine it.
    """
    def count(h):
        return build_model(make_config(h)).param_count(trainable_only=True)

    c1, c2 = count(8), count(9)
    slope = c2 - c1
    if slope <= 0:
        return 8
    best = max(1, round((target - (c1 - 8 * slope)) / slope))
    return best


def _is_base(variant):
    return (
        variant.get("variant", "concat") == "concat"
        and variant.get("model", "stream") == "stream"
        and not variant.get("no_question", False)
    )


def run_comparison(config, out_csv=None, figures=True):
    """Train every variant in the config and tabulate the comparison."""
    seed = int(config.get("seed", 0))
    bundle = resolve_dataset(config)
    spec = bundle.manifest["spec"]
    dims = {
        "seq_len": spec["seq_len"],
        "context_dim": spec["context_dim"],
        "text_dim": spec["text_dim"],
        "query_dim": spec["query_dim"],
    }
    shared = dict(config.get("model", {}))
    train_cfg = dict(config.get("train", {}))
    epochs = int(train_cfg.get("epochs", 10))
    batch_size = int(train_cfg.get("batch_size", 16))
    lr = float(train_cfg.get("lr", 1e-3))
    opt_kind = train_cfg.get("optimizer", "adam")
    match_budget = bool(config.get("match_budget", True))

    variants = list(config.get("variants", []))
    order = sorted(range(len(variants)),
                   key=lambda i: (0 if _is_base(variants[i]) else 1, i))
    base_name = None
    target = None
    results = {}
    for rank, idx in enumerate(order):
        variant = variants[idx]
        name = variant.get("name", f"variant{idx}")

        def make_config(hidden, variant=variant):
            fields = dict(shared)
            fields["hidden_dim"] = hidden
            cfg = _model_config(variant, fields, dims, seed)
            return cfg

        model_cfg = _model_config(variant, shared, dims, seed)
        if match_budget and target is not None and not _is_base(variant):
            hidden = _match_hidden(make_config, target)
            model_cfg = make_config(hidden)
        model = build_model(model_cfg)
        n_params = model.param_count(trainable_only=True)
        if rank == 0 and _is_base(variant):
            base_name = name
            target = n_params

        if getattr(model_cfg, "variant", None) == "dcca" \
                and model_cfg.dcca_mode == "pretrain":
            model.pretrain_coordination(bundle.train[: min(64, len(bundle.train))])

        optimizer = Optimizer(kind=opt_kind, lr=lr)
        rng = np.random.default_rng([seed, idx])
        history = []
        converged = True
        report = None
        for epoch in range(1, epochs + 1):
            try:
                report = train_epoch(model, bundle.train, optimizer,
                                     batch_size, rng)
            except NanLossError:
                converged = False
                break
            val = evaluate(model, bundle.val)
            history.append((epoch, report.loss, val.accuracy))
        if converged and history:
            last = history[-1]
            results[idx] = VariantResult(
                name=name, params=n_params, epoch=last[0],
                train_loss=last[1], val_acc=last[2], converged=True,
                history=history,
            )
        else:
            results[idx] = VariantResult(
                name=name, params=n_params, epoch=len(history),
                train_loss=None, val_acc=None, converged=False,
                history=history,
            )

    rows = [results[idx] for idx in order]
    outcome = ComparisonResult(rows=rows, base_name=base_name)
    if out_csv is not None:
        out_csv = Path(out_csv)
        table = outcome.table_rows()
        outcome.table_paths.append(reporting.write_csv(
            out_csv, reporting.COMPARISON_COLUMNS, table
        ))
        outcome.table_paths.append(reporting.write_markdown(
            out_csv.with_suffix(".md"), reporting.COMPARISON_COLUMNS, table
        ))
        if figures:
            histories = {r.name: r.history for r in rows}
            outcome.figure_paths = reporting.comparison_figures(
                out_csv.with_suffix(""), table, histories
            )
    return outcome
