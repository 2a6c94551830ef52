"""CSV artifact writers and matplotlib figure rendering for reports.

CSV files are the canonical, bitwise-reproducible outputs; figures are
rendered next to them for quick inspection (Agg backend, files only).
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _fmt(v):
    return "%.17g" % float(v)


def write_loss_csv(path, trace):
    """trace: sequence of (iteration, loss)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,loss\n")
        for it, loss in trace:
            fh.write("%d,%s\n" % (it, _fmt(loss)))


def write_iou_csv(path, names_and_ious):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("image,iou\n")
        for name, v in names_and_ious:
            fh.write("%s,%s\n" % (name, _fmt(v)))


def write_metrics_csv(path, metrics):
    """metrics: ordered list of (name, value)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric,value\n")
        for name, v in metrics:
            fh.write("%s,%s\n" % (name, _fmt(v)))


def write_confusion_csvs(counts_path, norm_path, cm):
    k = len(cm.labels)
    header = "true\\pred," + ",".join("c%d" % c for c in cm.labels)
    with open(counts_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for t in range(k):
            fh.write("c%d," % t + ",".join(str(int(v)) for v in cm.counts[t]) + "\n")
    norm = cm.row_normalized()
    with open(norm_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for t in range(k):
            fh.write("c%d," % t + ",".join(_fmt(v) for v in norm[t]) + "\n")


def render_loss_curve(png_path, trace, smooth_window=50):
    its = [t[0] for t in trace]
    losses = [t[1] for t in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(its, losses, lw=0.8, alpha=0.5, label="loss")
    if len(losses) >= smooth_window:
        kernel = np.ones(smooth_window) / smooth_window
        sm = np.convolve(losses, kernel, mode="valid")
        ax.plot(its[smooth_window - 1:], sm, lw=1.5,
                label="smoothed (w=%d)" % smooth_window)
    ax.set_xlabel("iteration")
    ax.set_ylabel("training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_confusion(png_path, cm):
    norm = cm.row_normalized()
    k = len(cm.labels)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    for t in range(k):
        for p in range(k):
            ax.text(p, t, str(int(cm.counts[t, p])), ha="center", va="center",
                    fontsize=8, color="black" if norm[t, p] < 0.6 else "white")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    fig.colorbar(im, ax=ax, label="row fraction")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_iou_hist(png_path, ious):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(ious, bins=20, range=(0.0, 1.0), color="tab:blue", edgecolor="black")
    ax.set_xlabel("per-image IoU")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def smoothed(values, window):
    """Moving average used for the loss-shape check."""
    if window < 1 or len(values) < window:
        return list(values)
    kernel = np.ones(window) / window
    return list(np.convolve(values, kernel, mode="valid"))
