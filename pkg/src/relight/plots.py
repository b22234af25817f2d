"""Static plot emission from training logs and metric reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricReport
from .training import LOG_COLUMNS, read_loss_log

_PNG_METADATA = {"Software": None}


def plot_loss_curves(log_path, out_path) -> Path:
    """Line plot of every populated loss column of a training log."""
    rows = read_loss_log(log_path)
    fig, ax = plt.subplots(figsize=(7, 4))
    for column in LOG_COLUMNS[1:]:
        points = [(r["iter"], r[column]) for r in rows if r[column] is not None]
        if points:
            ax.plot(*zip(*points), label=column, linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(Path(log_path).stem)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, metadata=_PNG_METADATA)
    plt.close(fig)
    return out_path


def plot_metric_bars(report: MetricReport, out_path) -> Path:
    """Model-vs-baseline bars for mean PSNR and mean SSIM."""
    fig, (ax_psnr, ax_ssim) = plt.subplots(1, 2, figsize=(8, 4))
    labels = [report.label, "input-copy"]

    def _finite(v):
        return v if math.isfinite(v) else 0.0

    ax_psnr.bar(labels, [_finite(report.model.mean_psnr_db),
                         _finite(report.baseline.mean_psnr_db)])
    ax_psnr.set_ylabel("mean PSNR (dB)")
    ax_ssim.bar(labels, [report.model.mean_ssim, report.baseline.mean_ssim])
    ax_ssim.set_ylabel("mean SSIM")
    ax_ssim.set_ylim(0, 1)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, metadata=_PNG_METADATA)
    plt.close(fig)
    return out_path
