"""Figure output: matplotlib SVG renderings and raw PGM matrix dumps.

SVGs are written with a fixed hash salt and no date stamp so identical
inputs give identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from invariant_cae.errors import ValidationError  # noqa: E402

_RC = {"svg.hashsalt": "invariant-cae", "svg.fonttype": "none"}


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_pgm(matrix, path):
    """8-bit binary PGM, min mapped to black and max to white."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValidationError("PGM output needs a non-empty 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ValidationError("PGM output needs finite values")
    lo, hi = m.min(), m.max()
    scaled = np.zeros(m.shape) if hi == lo else (m - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = data.split(maxsplit=4)
    if len(fields) < 5 or fields[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    body = data[len(data) - w * h :]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def plot_loss(history, path, title="training loss"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(1, len(history) + 1), history, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log" if np.all(np.asarray(history) > 0) else "linear")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_matrix(matrix, path, title="", sections=()):
    """Heatmap with optional section boxes given as ``(a0, a1, b0, b1)``."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(matrix, cmap="gray_r", origin="upper", interpolation="nearest")
    for a0, a1, b0, b1 in sections:
        ax.plot([b0, b1], [a0, a1], color="tab:red", lw=1.0)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_path(pairs, path, truth=None, title="warping path"):
    pairs = np.asarray(pairs)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(pairs[:, 1], pairs[:, 0], lw=1.0, label="path")
    if truth is not None:
        truth = np.asarray(truth)
        ax.plot(truth[:, 1], truth[:, 0], ".", ms=3, color="tab:orange", label="ground truth")
        ax.legend(loc="lower right")
    ax.set_xlabel("score frame")
    ax.set_ylabel("performance frame")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_scatter(points, groups, path, title="", label="label"):
    """Scatter coloured by group: a legend for up to ten groups, a cyclic colour bar beyond."""
    points = np.asarray(points)
    groups = np.asarray(groups)
    fig, ax = plt.subplots(figsize=(5, 5))
    names = np.unique(groups)
    if names.size <= 10:
        cmap = plt.get_cmap("tab10")
        for k, g in enumerate(names):
            sel = groups == g
            ax.scatter(points[sel, 0], points[sel, 1], s=4, color=cmap(k), label=f"{label} {g}")
        ax.legend(fontsize=6, markerscale=2, loc="best")
    else:
        dots = ax.scatter(points[:, 0], points[:, 1], s=4, c=groups, cmap="hsv")
        fig.colorbar(dots, ax=ax, label=label)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
