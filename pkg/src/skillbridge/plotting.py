"""Static SVG figures: trajectory overlays and loss curves."""

from __future__ import annotations

import io
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fileio import atomic_write  # noqa: E402

# fixed ids and no timestamp keep the SVG bytes reproducible
_SVG_RC = {"svg.hashsalt": "skillbridge", "svg.fonttype": "none"}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_trajectories(channels: Sequence[str], runs: Sequence[dict], path, title: str | None = None) -> None:
    """One panel per channel; ground truth dashed, generated solid.

    Each run holds ``t``, ``generated`` (T, C) and optionally ``truth`` (T, C),
    as returned by :func:`skillbridge.datafile.read_trajectories_csv`.
    """
    if not runs:
        raise ValueError("nothing to plot")
    n = len(channels)
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.2 * n), sharex=True, squeeze=False)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for j, (ax, ch) in enumerate(zip(axes[:, 0], channels)):
        for k, run in enumerate(runs):
            c = colors[k % len(colors)]
            truth = run.get("truth")
            if truth is not None and not np.all(np.isnan(truth[:, j])):
                line, = ax.plot(run["t"], truth[:, j], ls="--", color=c, lw=1.2)
                line.set_gid(f"truth-{ch}-{k}")
            line, = ax.plot(run["t"], run["generated"][:, j], ls="-", color=c, lw=1.5,
                            label=f"{run['task_id']} {run['source']}->{run['target']}")
            line.set_gid(f"generated-{ch}-{k}")
        ax.set_ylabel(ch)
    axes[-1, 0].set_xlabel("t")
    axes[0, 0].legend(fontsize="small", loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_loss(curve: Sequence[tuple[int, float]], path, title: str | None = None) -> None:
    if not curve:
        raise ValueError("empty loss log")
    it, loss = zip(*curve)
    fig, ax = plt.subplots(figsize=(6, 3))
    line, = ax.plot(it, loss, ls="-", lw=1.2)
    line.set_gid("loss")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
