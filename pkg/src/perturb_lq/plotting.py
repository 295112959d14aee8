"""Deterministic SVG line plots."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import InvalidConfig  # noqa: E402

HASHSALT = "perturb-lq"


def emit_plot(series, path, title="", xlabel="iteration", ylabel="", logy=False, hlines=None):
    """Write one SVG with a line per series.

    ``series`` maps label -> y values, or label -> (x, y). Each line carries
    ``gid="series-<i>"`` so the file can be checked structurally. ``hlines``
    maps label -> constant level drawn dashed.
    """
    if not series:
        raise InvalidConfig("nothing to plot")
    plt.rcParams["svg.hashsalt"] = HASHSALT
    plt.rcParams["svg.fonttype"] = "path"
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, (label, data) in enumerate(series.items()):
        if isinstance(data, tuple):
            x, y = np.asarray(data[0], float), np.asarray(data[1], float)
        else:
            y = np.asarray(data, float)
            x = np.arange(y.size)
        if y.size == 0:
            plt.close(fig)
            raise InvalidConfig(f"series {label!r} is empty")
        (line,) = ax.plot(x, y, label=str(label), lw=1.4)
        line.set_gid(f"series-{i}")
    for j, (label, level) in enumerate((hlines or {}).items()):
        h = ax.axhline(level, ls="--", lw=1.0, color=f"C{len(series) + j}", label=str(label))
        h.set_gid(f"hline-{j}")
    if logy:
        ax.set_yscale("log", nonpositive="mask")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
