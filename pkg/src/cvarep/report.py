"""Delimited output and figure rendering.

All numeric CSV output uses the shortest decimal that round-trips the 64-bit
float, so files are byte-stable for a fixed seed and diff cleanly.  The
report path also renders a matplotlib PNG next to each CSV so a run leaves a
human-readable artifact alongside the machine-readable one.
"""

from __future__ import annotations

import os
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def format_float(x) -> str:
    """Shortest round-trip decimal for a 64-bit float."""
    return repr(float(x))


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(v) for v in row) + "\n")


def png_path_for(csv_path) -> str:
    root, _ = os.path.splitext(os.fspath(csv_path))
    return root + ".png"


def render_figure1_png(lambdas, analytic, pde, path) -> None:
    """Relative CVA underestimate of the risk-free closeout vs hazard rate."""
    fig, axis = plt.subplots(figsize=(6.4, 4.2))
    axis.plot(lambdas, analytic, "-", color="tab:blue", label="analytic")
    if pde is not None:
        axis.plot(lambdas, pde, "--", color="tab:orange", label="finite difference")
    axis.set_xlabel(r"hazard rate $\lambda$")
    axis.set_ylabel(r"relative error $1 - \Pi_0/\Pi$")
    axis.set_title("CVA underestimate of the risk-free closeout")
    axis.legend()
    axis.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_table_png(dims, values, stds, path, ylabel="value") -> None:
    """Bar chart of per-dimension values with std whiskers."""
    fig, axis = plt.subplots(figsize=(6.4, 4.2))
    pos = np.arange(len(dims))
    axis.bar(pos, values, yerr=stds, capsize=4, color="tab:blue", alpha=0.8)
    axis.set_xticks(pos)
    axis.set_xticklabels([str(d) for d in dims])
    axis.set_xlabel("dimension")
    axis.set_ylabel(ylabel)
    axis.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_log_png(iters, losses, vs, path) -> None:
    """Loss (log scale) and value trajectory of one training run."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 4.0))
    ax1.semilogy(iters, losses, color="tab:red")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("loss")
    ax1.grid(True, alpha=0.3)
    ax2.plot(iters, vs, color="tab:blue")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("initial value v")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
