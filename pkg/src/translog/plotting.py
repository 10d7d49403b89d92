"""Report figures. Uses the Agg backend so nothing needs a display."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ARM_STYLE = {
    "scratch": dict(color="tab:gray", marker="o", label="from scratch"),
    "finetune": dict(color="tab:blue", marker="s", label="fine-tune"),
    "adapter": dict(color="tab:red", marker="^", label="adapter"),
    "pretrain": dict(color="tab:green", marker="d", label="pretrain (source)"),
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the PNG bytes stable across runs
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def convergence_plot(curves: Mapping[str, Sequence[tuple[int, float]]], path: str | Path,
                     target: float | None = 0.9) -> Path:
    """Dev F1 against optimizer step, one line per arm."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for arm, pts in curves.items():
        if not pts:
            continue
        steps, f1 = zip(*pts)
        style = ARM_STYLE.get(arm, dict(label=arm))
        ax.plot(steps, f1, markersize=3, linewidth=1.2, **style)
    if target is not None:
        ax.axhline(target, color="k", linestyle=":", linewidth=0.8)
    ax.set_xlabel("training step")
    ax.set_ylabel("dev F1")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def lowresource_plot(rows: Sequence[dict], path: str | Path) -> Path:
    """Mean test F1 with one-std error bars against training-set size."""
    fig, ax = plt.subplots(figsize=(6, 4))
    arms = sorted({r["arm"] for r in rows}, key=lambda a: list(ARM_STYLE).index(a)
                  if a in ARM_STYLE else 99)
    for arm in arms:
        pts = sorted((r["size"], r["mean_f1"], r["std_f1"]) for r in rows if r["arm"] == arm)
        sizes, means, stds = zip(*pts)
        style = ARM_STYLE.get(arm, dict(label=arm))
        ax.errorbar(sizes, means, yerr=stds, capsize=3, linewidth=1.2, **style)
    ax.set_xscale("log")
    ax.set_xlabel("target training sessions")
    ax.set_ylabel("test F1")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    return _save(fig, path)
