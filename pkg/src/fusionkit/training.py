"""Optimizers, the epoch loop, gradient verification, and checkpoints.

The checkpoint format is a directory with ``manifest.json`` (the model
config, seeds, and per-block byte offsets) plus ``params.bin``, a flat
little-endian float64 blob holding every parameter block back to back.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

CHECKPOINT_FORMAT = "fusionkit-checkpoint-v1"


class NanLossError(RuntimeError):
    """Raised when a training loss goes non-finite; names the first bad op."""

    def __init__(self, op_kind):
        self.op_kind = op_kind or "unknown"
        super().__init__(
            f"non-finite loss; first non-finite node kind: {self.op_kind}"
        )


class Optimizer:
    """SGD or Adam over named parameter blocks.

    Blocks whose gradient is missing or identically zero are skipped
    entirely: their values and moment estimates do not change.
    """

    def __init__(self, kind="adam", lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._state = {}

    def step(self, params):
        self.step_count += 1
        for name, p in params.items():
            g = p.grad
            if g is None or not np.any(g):
                continue
            if self.kind == "sgd":
                p.value = p.value - self.lr * g
                continue
            state = self._state.setdefault(
                name,
                {"m": np.zeros_like(p.value), "v": np.zeros_like(p.value), "t": 0},
            )
            state["t"] += 1
            state["m"] = self.beta1 * state["m"] + (1 - self.beta1) * g
            state["v"] = self.beta2 * state["v"] + (1 - self.beta2) * g * g
            mhat = state["m"] / (1 - self.beta1 ** state["t"])
            vhat = state["v"] / (1 - self.beta2 ** state["t"])
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class EpochReport:
    """Mean loss and accuracy for one pass over a dataset."""

    loss: float
    accuracy: float


def train_epoch(model, dataset, optimizer, batch_size, rng, train_mode=True):
    """One pass over ``dataset`` in seeded shuffled order.

    With ``train_mode`` the model runs with training behavior (dropout on)
    and parameters are updated per batch; otherwise the pass only measures.
    Raises :class:`NanLossError` naming the first non-finite node kind if
    the loss diverges.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    order = rng.permutation(len(dataset))
    params = model.params()
    loss_total = 0.0
    correct = 0
    for start in range(0, len(order), batch_size):
        batch = [dataset[i] for i in order[start:start + batch_size]]
        ctx = ad.record() if train_mode else contextlib.nullcontext()
        with ctx:
            total = None
            for example in batch:
                votes = model.forward(example, train_mode=train_mode)
                values = ad.value_of(votes)
                if int(np.argmax(values)) == example.label:
                    correct += 1
                item = ad.softmax_cross_entropy(votes, example.label)
                total = item if total is None else ad.add(total, item)
            loss = ad.mul(total, 1.0 / len(batch))
            aux_fn = getattr(model, "batch_aux_loss", None)
            if aux_fn is not None:
                aux = aux_fn(batch, train_mode)
                if aux is not None:
                    loss = ad.add(loss, aux)
        loss_value = float(ad.value_of(loss))
        if not np.isfinite(loss_value):
            kind = ad.find_nan_source(loss) if isinstance(loss, ad.Var) else None
            raise NanLossError(kind)
        loss_total += loss_value * len(batch)
        if train_mode:
            ad.zero_grad(params)
            ad.backward(loss)
            optimizer.step(params)
    return EpochReport(
        loss=loss_total / len(order), accuracy=correct / len(order)
    )


def evaluate(model, dataset):
    """Accuracy and mean loss of the model on a dataset (no recording)."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    correct = 0
    loss_total = 0.0
    for example in dataset:
        votes = np.asarray(ad.value_of(model.forward(example, train_mode=False)))
        if int(np.argmax(votes)) == example.label:
            correct += 1
        loss_total += float(ad.value_of(
            ad.softmax_cross_entropy(votes, example.label)
        ))
    return EpochReport(
        loss=loss_total / len(dataset), accuracy=correct / len(dataset)
    )


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckBlock:
    name: str
    size: int
    checked: int
    max_rel_err: float
    ok: bool


@dataclass
class GradCheckReport:
    blocks: list[GradCheckBlock] = field(default_factory=list)

    @property
    def ok(self):
        return all(b.ok for b in self.blocks)

    @property
    def max_rel_err(self):
        return max((b.max_rel_err for b in self.blocks), default=0.0)

    def lines(self):
        out = []
        for b in self.blocks:
            status = "pass" if b.ok else "FAIL"
            out.append(
                f"{status}  {b.name:<20} checked {b.checked}/{b.size} "
                f"coords, max rel err {b.max_rel_err:.3e}"
            )
        return out


def _rel_err(a, b):
    return abs(a - b) / max(abs(a) + abs(b), 1e-6)


def grad_check(op, seed=0, max_coords=200, step=1e-5, tol=1e-4):
    """Compare analytic gradients of a fusion op against central differences.

    The probe loss is a fixed random linear functional of the fused output.
    At most ``max_coords`` coordinates are sampled across all blocks,
    including two pseudo-blocks for the inputs themselves (so frozen
    operators like MCB are checked as fixed linear maps).  Blocks whose
    worst relative error exceeds ``tol`` are flagged in the report.
    """
    rng = np.random.default_rng(seed)
    m, n = op.input_dims
    x = rng.normal(size=m)
    y = rng.normal(size=n)
    weights = rng.normal(size=op.output_dim)

    x_leaf = ad.Param(x, "input:x")
    y_leaf = ad.Param(y, "input:y")
    blocks = {"input:x": x_leaf, "input:y": y_leaf}
    blocks.update(op.params())

    with ad.record():
        fused = op.fuse(x_leaf, y_leaf, train_mode=False)
        loss = ad.reduce_sum(ad.mul(fused, weights))
    grads = ad.backward(loss, blocks)

    def probe():
        return float(weights @ np.asarray(op.fuse(x_leaf.value, y_leaf.value)))

    total = sum(p.value.size for p in blocks.values())
    report = GradCheckReport()
    for name, p in blocks.items():
        size = p.value.size
        quota = max(1, round(max_coords * size / total))
        picks = rng.choice(size, size=min(size, quota), replace=False)
        worst = 0.0
        for idx in picks:
            where = np.unravel_index(idx, p.value.shape)
            keep = p.value[where]
            p.value[where] = keep + step
            up = probe()
            p.value[where] = keep - step
            down = probe()
            p.value[where] = keep
            numeric = (up - down) / (2 * step)
            worst = max(worst, _rel_err(grads[name].reshape(-1)[idx], numeric))
        report.blocks.append(GradCheckBlock(
            name=name, size=size, checked=len(picks),
            max_rel_err=worst, ok=worst <= tol,
        ))
    return report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, config):
    """Write ``manifest.json`` + ``params.bin`` for named parameter blocks."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    blocks = []
    for name, p in params.items():
        raw = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        blocks.append({
            "name": name,
            "offset": len(blob),
            "shape": list(p.value.shape),
        })
        blob += raw
    (path / "params.bin").write_bytes(bytes(blob))
    manifest = {"format": CHECKPOINT_FORMAT, "config": config, "blocks": blocks}
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(path):
    """Read a checkpoint directory; returns ``(config, {name: ndarray})``."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {path}")
    blob = (path / "params.bin").read_bytes()
    out = {}
    for block in manifest["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            blob, dtype="<f8", count=count, offset=block["offset"]
        )
        out[block["name"]] = arr.reshape(shape).astype(np.float64)
    return manifest["config"], out


def load_params_into(params, values):
    """Copy checkpoint arrays into live parameter blocks, shape-checked."""
    for name, p in params.items():
        if name not in values:
            raise KeyError(f"checkpoint is missing parameter block {name!r}")
        arr = values[name]
        if arr.shape != p.value.shape:
            raise ValueError(
                f"block {name!r} has shape {arr.shape}, expected {p.value.shape}"
            )
        p.value = np.array(arr)
