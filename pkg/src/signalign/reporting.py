"""Delimited outputs and figures for training runs.

CSV writers use fixed headers and fixed float formatting so identical
runs produce identical bytes.  Figures render through the Agg backend
(no display needed) next to the delimited files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .training import AblationRow, EpochMetrics, TrainResult

__all__ = [
    "METRICS_HEADER",
    "ABLATION_HEADER",
    "write_metrics_csv",
    "read_metrics_csv",
    "write_ablation_csv",
    "read_ablation_csv",
    "write_scores_csv",
    "read_scores_csv",
    "plot_training_curves",
    "plot_ablation",
    "render_training_report",
]

METRICS_HEADER = (
    "epoch",
    "lr",
    "cls_loss",
    "con_loss",
    "total_loss",
    "train_top1",
    "test_top1",
    "test_top5",
)

ABLATION_HEADER = (
    "name",
    "use_global_texts",
    "use_synonym_texts",
    "use_part_texts",
    "cls_loss",
    "con_loss",
    "total_loss",
    "test_top1",
    "test_top5",
)


def _fmt(value: float) -> str:
    return f"{value:.8f}"


def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected 'true' or 'false', got {text!r}")


def write_metrics_csv(metrics: Sequence[EpochMetrics], path) -> None:
    """One row per epoch under a fixed header; bytes depend only on values."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in metrics:
            writer.writerow(
                [
                    m.epoch,
                    _fmt(m.lr),
                    _fmt(m.cls_loss),
                    _fmt(m.con_loss),
                    _fmt(m.total_loss),
                    _fmt(m.train_top1),
                    _fmt(m.test_top1),
                    _fmt(m.test_top5),
                ]
            )


def read_metrics_csv(path) -> list[EpochMetrics]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header: {header}")
        out = []
        for row in reader:
            epoch, *vals = row
            lr, cls_l, con_l, total_l, tr1, te1, te5 = (float(v) for v in vals)
            out.append(
                EpochMetrics(
                    epoch=int(epoch),
                    lr=lr,
                    cls_loss=cls_l,
                    con_loss=con_l,
                    total_loss=total_l,
                    train_top1=tr1,
                    test_top1=te1,
                    test_top5=te5,
                )
            )
    return out


def write_ablation_csv(rows: Sequence[AblationRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.name,
                    _fmt_bool(r.use_global_texts),
                    _fmt_bool(r.use_synonym_texts),
                    _fmt_bool(r.use_part_texts),
                    _fmt(r.cls_loss),
                    _fmt(r.con_loss),
                    _fmt(r.total_loss),
                    _fmt(r.test_top1),
                    _fmt(r.test_top5),
                ]
            )


def read_ablation_csv(path) -> list[AblationRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != ABLATION_HEADER:
            raise ValueError(f"unexpected ablation header: {header}")
        out = []
        for row in reader:
            name, g, s, p, *vals = row
            cls_l, con_l, total_l, te1, te5 = (float(v) for v in vals)
            out.append(
                AblationRow(
                    name=name,
                    use_global_texts=_parse_bool(g),
                    use_synonym_texts=_parse_bool(s),
                    use_part_texts=_parse_bool(p),
                    cls_loss=cls_l,
                    con_loss=con_l,
                    total_loss=total_l,
                    test_top1=te1,
                    test_top5=te5,
                )
            )
    return out


def write_scores_csv(scores: np.ndarray, labels: np.ndarray, path) -> None:
    """Per-sample class scores plus the true label, at round-trip precision."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise ValueError("scores must be [n, classes] aligned with labels")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"score_{c}" for c in range(scores.shape[1])])
        for lab, row in zip(labels, scores):
            writer.writerow([int(lab)] + [f"{v:.17g}" for v in row])


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label":
            raise ValueError(f"unexpected scores header: {header}")
        labels, rows = [], []
        for row in reader:
            labels.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ValueError("scores file holds no rows")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


def plot_training_curves(metrics: Sequence[EpochMetrics], path) -> None:
    """Loss and accuracy curves over epochs, one panel each."""
    epochs = [m.epoch for m in metrics]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, [m.cls_loss for m in metrics], label="classification")
    ax_loss.plot(epochs, [m.con_loss for m in metrics], label="alignment")
    ax_loss.plot(epochs, [m.total_loss for m in metrics], label="total")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_title("Training losses")
    ax_loss.legend()
    ax_loss.grid(True, alpha=0.3)
    ax_acc.plot(epochs, [m.train_top1 for m in metrics], label="train top-1")
    ax_acc.plot(epochs, [m.test_top1 for m in metrics], label="test top-1")
    ax_acc.plot(epochs, [m.test_top5 for m in metrics], label="test top-5")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.set_title("Accuracy")
    ax_acc.legend()
    ax_acc.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(rows: Sequence[AblationRow], path) -> None:
    """Bar chart of final test top-1 per supervision variant."""
    names = [r.name for r in rows]
    top1 = [r.test_top1 for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    bars = ax.bar(names, top1, color="tab:blue")
    ax.bar_label(bars, fmt="%.3f")
    ax.set_ylabel("test top-1")
    ax.set_ylim(0.0, 1.1)
    ax.set_title("Text supervision ablation")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_report(result: TrainResult, out_dir) -> dict[str, Path]:
    """Write the delimited outputs and figures for one training run.

    Returns the paths that were written: metrics CSV, curves PNG, and the
    final test score matrix CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics_csv": out / "metrics.csv",
        "curves_png": out / "training_curves.png",
        "scores_csv": out / "test_scores.csv",
    }
    write_metrics_csv(result.metrics, paths["metrics_csv"])
    plot_training_curves(result.metrics, paths["curves_png"])
    write_scores_csv(result.test_scores, result.test_labels, paths["scores_csv"])
    return paths
