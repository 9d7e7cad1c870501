"""Matplotlib rendering of trace CSVs for the report path."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ParameterError  # noqa: E402


def read_trace_csv(path):
    """Header list and column dict of a delimited trace file."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ParameterError(f"{path}: column count mismatch with header")
    return header, {name: data[:, i] for i, name in enumerate(header)}


def render_trace_figure(csv_path, columns, title, out_png, logx=True):
    """Line plot of the named columns against the first column."""
    header, cols = read_trace_csv(csv_path)
    xname = header[0]
    for c in columns:
        if c not in header:
            raise ParameterError(f"unknown column {c!r}; trace has {header}")
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    x = cols[xname]
    for c in columns:
        if c == xname:
            continue
        ax.plot(x, cols[c], label=c, linewidth=1.4)
    if logx and np.all(x > 0):
        ax.set_xscale("log")
    ax.set_xlabel(xname)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png
