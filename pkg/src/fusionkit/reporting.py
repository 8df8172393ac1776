"""Delimited-table and figure output for training and comparison runs.

CSV output is byte-deterministic for a given set of rows: fixed column
order, fixed float formatting, ``\\n`` line endings.  Figures are rendered
with the Agg backend straight to files next to the tables.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

COMPARISON_COLUMNS = (
    "variant", "params", "epoch", "train_loss", "val_acc", "offset_vs_concat"
)
NO_CONVERGENCE = "No Convergence"


def format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_markdown(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(format_cell(v) for v in row) + " |")
    path.write_text("\n".join(lines) + "\n")
    return path


def comparison_figures(stem, rows, histories):
    """Accuracy bar chart plus per-epoch validation curves.

    ``rows`` are comparison-table rows; ``histories`` maps variant name to a
    list of ``(epoch, train_loss, val_acc)`` triples.  Returns the figure
    paths.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = []

    names = [r[0] for r in rows]
    accs = [r[4] if isinstance(r[4], float) else 0.0 for r in rows]
    labels = [
        f"{r[4]:.3f}" if isinstance(r[4], float) else NO_CONVERGENCE
        for r in rows
    ]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(names) + 1.5), 3.2))
    bars = ax.bar(names, accs, color="#4878d0")
    for bar, text in zip(bars, labels):
        ax.annotate(text, (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0, 1.05)
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    acc_path = stem.with_name(stem.name + "_accuracy.png")
    fig.savefig(acc_path, dpi=120)
    plt.close(fig)
    paths.append(acc_path)

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for name, history in histories.items():
        if not history:
            continue
        epochs = [h[0] for h in history]
        vals = [h[2] for h in history]
        ax.plot(epochs, vals, marker="o", markersize=3, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    curve_path = stem.with_name(stem.name + "_curves.png")
    fig.savefig(curve_path, dpi=120)
    plt.close(fig)
    paths.append(curve_path)
    return paths


def training_figure(path, history):
    """Loss and accuracy curves for a single training run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [h[0] for h in history]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(epochs, [h[1] for h in history], label="train loss", color="#d65f5f")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [h[2] for h in history], label="val accuracy",
             color="#4878d0")
    ax2.set_ylabel("val accuracy")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
