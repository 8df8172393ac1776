"""Synthetic planted-interaction QA data with a unimodal-bias knob.

Each example pairs a toy "video" sequence (context), a toy "subtitle"
sequence (text), a question vector, and five candidate answer vectors.
Answer scores mix two planted signals:

* a cross-modal bilinear score between the time-pooled context and the
  answer through a hidden map (a fixed-point-free permutation when the
  dims agree, so no purely element-wise feature can capture it), and
* a text-only score: the plain dot product between the time-pooled text
  sequence and the answer, which element-wise features capture directly.

``bias`` interpolates between them: at 0 the label is decidable only from
the cross-modal term, at 1 from the text modality alone.  The generator
measures both oracle classifiers on the data it emits and records their
accuracies in the manifest, so the construction is self-verifying.

Datasets serialize to a directory with ``manifest.json`` plus
``features.bin``, a little-endian float64 blob indexed by the manifest.
Generation and serialization are seed-deterministic byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

DATASET_FORMAT = "fusionkit-qa-v1"
N_ANSWERS = 5


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Deterministic recipe for one synthetic QA dataset.

    Sequences are a per-example core vector plus per-timestep jitter, so the
    time-pooled context concentrates on the core that the planted score
    actually uses while individual steps still vary.
    """

    seed: int = 0
    n_train: int = 500
    n_val: int = 250
    seq_len: int = 8
    context_dim: int = 16
    text_dim: int = 16
    query_dim: int = 16
    bias: float = 0.0
    noise: float = 0.05
    temporal_jitter: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.bias <= 1.0:
            raise ValueError(f"bias must be in [0, 1], got {self.bias}")
        if min(self.n_train, self.n_val) < 1:
            raise ValueError("n_train and n_val must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


@dataclass
class QAExample:
    """One instance: context/text sequences, question, 5 answers, label."""

    context_seq: np.ndarray
    text_seq: np.ndarray | None
    question: np.ndarray
    answers: np.ndarray
    label: int

    def __post_init__(self):
        if self.answers.shape[0] != N_ANSWERS:
            raise ValueError(
                f"exactly {N_ANSWERS} candidate answers required, "
                f"got {self.answers.shape[0]}"
            )
        if not 0 <= self.label < N_ANSWERS:
            raise ValueError(f"label {self.label} out of range [0, {N_ANSWERS})")


@dataclass
class DatasetBundle:
    train: list[QAExample]
    val: list[QAExample]
    manifest: dict = field(default_factory=dict)


def _derangement(rng, dim):
    # Permutation with no fixed points, so the planted map has zero diagonal.
    while True:
        perm = rng.permutation(dim)
        if not np.any(perm == np.arange(dim)):
            return perm


def planted_maps(spec):
    """The hidden cross-modal map for a spec.

    With equal dims this is a fixed-point-free permutation, so the planted
    interaction has no mass on matching coordinate pairs and element-wise
    products of raw features cannot represent it.
    """
    rng = np.random.default_rng([spec.seed, 17])
    if spec.context_dim == spec.query_dim:
        cross = np.zeros((spec.context_dim, spec.query_dim))
        cross[np.arange(spec.context_dim), _derangement(rng, spec.context_dim)] = 1.0
    else:
        cross = rng.normal(size=(spec.context_dim, spec.query_dim))
        cross /= np.sqrt(spec.query_dim)
    return cross


def _signals(example, cross, context_dim, text_dim):
    pooled_ctx = example.context_seq.mean(axis=0)
    pooled_txt = example.text_seq.mean(axis=0)
    cross_scores = (pooled_ctx @ cross) @ example.answers.T / np.sqrt(context_dim)
    text_scores = pooled_txt @ example.answers.T / np.sqrt(text_dim)
    return cross_scores, text_scores


def _oracle_accuracy(examples, cross, context_dim, text_dim):
    hits_cross = 0
    hits_text = 0
    for ex in examples:
        cs, ts = _signals(ex, cross, context_dim, text_dim)
        hits_cross += int(np.argmax(cs)) == ex.label
        hits_text += int(np.argmax(ts)) == ex.label
    n = len(examples)
    return hits_cross / n, hits_text / n


def _core_plus_jitter(rng, seq_len, dim, jitter):
    core = rng.normal(size=dim)
    return core[None, :] + jitter * rng.normal(size=(seq_len, dim))


def generate_dataset(spec):
    """Generate train/val splits plus a manifest with oracle accuracies."""
    cross = planted_maps(spec)
    rng = np.random.default_rng([spec.seed, 23])
    splits = {}
    for split, count in (("train", spec.n_train), ("val", spec.n_val)):
        examples = []
        for _ in range(count):
            ex = QAExample(
                context_seq=_core_plus_jitter(
                    rng, spec.seq_len, spec.context_dim, spec.temporal_jitter
                ),
                text_seq=_core_plus_jitter(
                    rng, spec.seq_len, spec.text_dim, spec.temporal_jitter
                ),
                question=rng.normal(size=spec.query_dim),
                answers=rng.normal(size=(N_ANSWERS, spec.query_dim)),
                label=0,
            )
            cs, ts = _signals(ex, cross, spec.context_dim, spec.text_dim)
            scores = (
                (1.0 - spec.bias) * cs
                + spec.bias * ts
                + spec.noise * rng.normal(size=N_ANSWERS)
            )
            ex.label = int(np.argmax(scores))
            examples.append(ex)
        splits[split] = examples

    oracles = {}
    for split, examples in splits.items():
        acc_cross, acc_text = _oracle_accuracy(
            examples, cross, spec.context_dim, spec.text_dim
        )
        oracles[split] = {"bilinear": acc_cross, "text_only": acc_text}
    manifest = {
        "format": DATASET_FORMAT,
        "spec": spec.to_dict(),
        "counts": {"train": spec.n_train, "val": spec.n_val},
        "oracle_accuracy": oracles,
        "planted": {"cross_map": cross.tolist()},
    }
    return DatasetBundle(train=splits["train"], val=splits["val"],
                         manifest=manifest)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _stack(examples, attr):
    return np.stack([getattr(ex, attr) for ex in examples])


def save_dataset(bundle, out_dir):
    """Write ``manifest.json`` + ``features.bin``; byte-stable per spec."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    arrays = []
    for split, examples in (("train", bundle.train), ("val", bundle.val)):
        for attr in ("context_seq", "text_seq", "question", "answers"):
            data = _stack(examples, attr)
            arrays.append({
                "split": split,
                "name": attr,
                "offset": len(blob),
                "shape": list(data.shape),
            })
            blob += np.ascontiguousarray(data, dtype="<f8").tobytes()
    manifest = dict(bundle.manifest)
    manifest["arrays"] = arrays
    manifest["labels"] = {
        "train": [ex.label for ex in bundle.train],
        "val": [ex.label for ex in bundle.val],
    }
    (out_dir / "features.bin").write_bytes(bytes(blob))
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_dataset(in_dir):
    """Inverse of :func:`save_dataset`."""
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"not a {DATASET_FORMAT} dataset: {in_dir}")
    blob = (in_dir / "features.bin").read_bytes()
    tables = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=entry["offset"]).reshape(shape)
        tables[(entry["split"], entry["name"])] = arr.astype(np.float64)
    splits = {}
    for split in ("train", "val"):
        labels = manifest["labels"][split]
        examples = [
            QAExample(
                context_seq=tables[(split, "context_seq")][i],
                text_seq=tables[(split, "text_seq")][i],
                question=tables[(split, "question")][i],
                answers=tables[(split, "answers")][i],
                label=int(labels[i]),
            )
            for i in range(len(labels))
        ]
        splits[split] = examples
    return DatasetBundle(train=splits["train"], val=splits["val"],
                         manifest=manifest)
