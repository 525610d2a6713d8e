"""PNG charts for fusion sweeps and training histories."""
from pathlib import Path
from typing import Sequence, Union

from matplotlib.figure import Figure

from .models import FusionReport

# Color palette for charts
COLORS = [
    '#4e79a7', '#f28e2c', '#e15759', '#76b7b2', '#59a14f',
    '#edc949', '#af7aa1', '#ff9da7', '#9c755f', '#bab0ab'
]


def _empty(ax) -> None:
    ax.text(0.5, 0.5, "No data", ha='center', va='center', fontsize=12, color='#999')
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.axis('off')


def plot_fusion_report(report: FusionReport, path: Union[str, Path], title: str = "",
                       weight_label: str = "weight of first prediction") -> Path:
    """R² against fusion weight, one line per dimension, best weights marked."""
    figure = Figure(figsize=(5, 3.5), dpi=100)
    ax = figure.add_subplot(111)
    if not report.rows:
        _empty(ax)
    else:
        weights = [r.weight for r in report.rows]
        for dim, color, best in (("valence", COLORS[0], report.best_valence_weight),
                                 ("arousal", COLORS[1], report.best_arousal_weight)):
            values = [getattr(r, f"r2_{dim}") for r in report.rows]
            ax.plot(weights, values, marker='o', markersize=4, color=color, label=dim)
            ax.axvline(best, color=color, linestyle='--', linewidth=0.8)
        ax.set_xlabel(weight_label, fontsize=9)
        ax.set_ylabel(f"R² ({report.evaluation_split})", fontsize=9)
        ax.set_xlim(0, 1)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    if title:
        ax.set_title(title, fontsize=11, fontweight='bold', pad=10)
    figure.tight_layout()
    figure.savefig(path)
    return Path(path)


def plot_history(history: Sequence[tuple[int, float, float]], path: Union[str, Path], title: str = "",
                 best_epoch: int = 0) -> Path:
    """Train and validation loss per epoch."""
    figure = Figure(figsize=(5, 3.5), dpi=100)
    ax = figure.add_subplot(111)
    if not history:
        _empty(ax)
    else:
        epochs = [h[0] for h in history]
        ax.plot(epochs, [h[1] for h in history], color=COLORS[0], label="train")
        ax.plot(epochs, [h[2] for h in history], color=COLORS[2], label="valid")
        if best_epoch:
            ax.axvline(best_epoch, color='#999', linestyle='--', linewidth=0.8)
        ax.set_xlabel("epoch", fontsize=9)
        ax.set_ylabel("loss", fontsize=9)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    if title:
        ax.set_title(title, fontsize=11, fontweight='bold', pad=10)
    figure.tight_layout()
    figure.savefig(path)
    return Path(path)
