"""Accuracy charts rendered from run metrics.

Outputs are deterministic: identical inputs produce byte-identical image
files (the Agg backend embeds no timestamps).
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .config import load_config
from .train import read_metrics_csv


def _run_label(run_dir: str) -> str:
    return os.path.basename(os.path.normpath(run_dir))


def _test_rows(run_dir: str) -> list[dict]:
    rows = read_metrics_csv(os.path.join(run_dir, "metrics.csv"))
    return [r for r in rows if r["split"] == "test"]


def plot_accuracy_vs_epoch(run_dirs: list[str], out_path: str) -> str:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_dir in sorted(run_dirs):
        rows = _test_rows(run_dir)
        epochs = [int(r["epoch"]) for r in rows]
        accs = [float(r["accuracy"]) for r in rows]
        ax.plot(epochs, accs, label=_run_label(run_dir))
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_accuracy_vs_steps(run_dirs: list[str], out_path: str) -> str:
    """Peak accuracy against the configured step count, one marker per run."""
    points = []
    for run_dir in sorted(run_dirs):
        cfg = load_config(os.path.join(run_dir, "config.snapshot.cfg"))
        rows = _test_rows(run_dir)
        peak = max(float(r["accuracy"]) for r in rows)
        points.append((cfg.model.steps, peak, _run_label(run_dir)))
    fig, ax = plt.subplots(figsize=(6, 4))
    for steps, peak, label in points:
        ax.plot([steps], [peak], marker="o", label=label)
    ax.set_xlabel("time steps")
    ax.set_ylabel("peak test accuracy")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
