"""SVG figures for single runs and sweeps."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .runner import MetricsLog, SweepRun  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def _loss_accuracy(log: MetricsLog, path: Path) -> Path:
    acc = log.has("train_acc_mean", "epochs")
    fig, axes = plt.subplots(1, 2 if acc else 1, figsize=(10 if acc else 5, 4), squeeze=False)
    ep = log.column("epoch", "epochs")
    ax = axes[0, 0]
    ax.plot(ep, log.column("train_loss_mean", "epochs"), "-", color="C0", label="train")
    if log.has("val_loss_mean", "epochs"):
        ax.plot(ep, log.column("val_loss_mean", "epochs"), "--", color="C0", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss over agents")
    ax.legend()
    if acc:
        ax = axes[0, 1]
        ax.plot(ep, log.column("train_acc_mean", "epochs"), "-", color="C1", label="train")
        if log.has("val_acc_mean", "epochs"):
            ax.plot(ep, log.column("val_acc_mean", "epochs"), "--", color="C1", label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean accuracy over agents")
        ax.legend()
    return _save(fig, path)


def _consensus(log: MetricsLog, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(log.column("k"), log.column("max_residual"))
    ax.set_yscale("log")
    ax.set_xlabel("step k")
    ax.set_ylabel("max_j ||x_j - s||")
    return _save(fig, path)


def _lyapunov(log: MetricsLog, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    k = log.column("k")
    if log.has("V_gap"):
        y, name = log.column("V_gap"), "V - V*"
    else:
        v = log.column("V")
        y, name = v - np.nanmin(v), "V - min V"
    ax.plot(k, np.where(y > 0, y, np.nan))
    ax.set_yscale("log")
    ax.set_xlabel("step k")
    ax.set_ylabel(name)
    return _save(fig, path)


def emit_plots(source, path) -> list[Path]:
    """Write figures for a :class:`MetricsLog` (3 files) or a sweep (1 overlay)."""
    out = Path(path)
    if isinstance(source, MetricsLog):
        if not source.steps:
            raise ValueError("empty metrics log; nothing to plot")
        out.mkdir(parents=True, exist_ok=True)
        return [_loss_accuracy(source, out / "loss_accuracy.svg"), _consensus(source, out / "consensus.svg"),
                _lyapunov(source, out / "lyapunov.svg")]
    runs = [r for r in source if (r.log if isinstance(r, SweepRun) else r) is not None]
    logs = [r.log if isinstance(r, SweepRun) else r for r in runs]
    logs = [lg for lg in logs if lg.steps]
    if not logs:
        raise ValueError("no successful runs to plot")
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for lg in logs:
        if lg.has("train_acc_mean", "epochs"):
            ax.plot(lg.column("epoch", "epochs"), lg.column("train_acc_mean", "epochs"), label=lg.label)
            ax.set_ylabel("mean train accuracy")
        else:
            ax.plot(lg.column("epoch", "epochs"), lg.column("train_loss_mean", "epochs"), label=lg.label)
            ax.set_ylabel("mean train loss")
    ax.set_xlabel("epoch")
    ax.legend()
    return [_save(fig, out / "sweep_overlay.svg")]
