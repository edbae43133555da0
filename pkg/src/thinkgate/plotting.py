"""Figure rendering for the report path.

Two figure families, written as PNG files alongside the delimited sweep
output: the accuracy-versus-token trade-off curve per dataset (one line
per scorer, threshold grid as the parameter, random-selector curve and
the two fixed-mode points for reference), and a reliability diagram per
calibrated scorer.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import SweepPoint
from .scorers import ScorerKind

# Keep PNG output reproducible across runs.
_SAVEFIG_KW = {"dpi": 150, "metadata": {"Software": "thinkgate"}}

_SCORER_STYLE = {
    "flashthink": ("tab:gray", "v"),
    "promptconf": ("tab:orange", "s"),
    "dynasor": ("tab:green", "^"),
    "prejudge": ("tab:brown", "x"),
    "probeconf": ("tab:red", "o"),
    "deer": ("tab:blue", "D"),
    "entropy": ("tab:purple", "P"),
}


def plot_tradeoff(
    dataset: str,
    sweeps: Mapping[ScorerKind, Sequence[SweepPoint]],
    random_curve: Sequence[SweepPoint],
    thinking: SweepPoint,
    nothinking: SweepPoint,
    out_path: str | Path,
) -> Path:
    """Accuracy vs mean generated tokens across the threshold grid."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for kind in sorted(sweeps, key=lambda k: k.value):
        points = sweeps[kind]
        color, marker = _SCORER_STYLE.get(kind.value, ("black", "."))
        ax.plot(
            [p.mean_tokens for p in points],
            [p.accuracy for p in points],
            color=color,
            marker=marker,
            markersize=4,
            linewidth=1.2,
            label=kind.value,
        )
    if random_curve:
        ax.plot(
            [p.mean_tokens for p in random_curve],
            [p.accuracy for p in random_curve],
            color="silver",
            linestyle="--",
            linewidth=1.2,
            label="random",
        )
    ax.scatter(
        [thinking.mean_tokens], [thinking.accuracy], color="black", marker="*", s=90,
        zorder=5, label="thinking",
    )
    ax.scatter(
        [nothinking.mean_tokens], [nothinking.accuracy], color="black", marker="*", s=90,
        zorder=5, facecolors="none", label="nothinking",
    )
    ax.set_xlabel("mean generated tokens")
    ax.set_ylabel("accuracy")
    ax.set_title(f"{dataset}: accuracy vs token cost")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, **_SAVEFIG_KW)
    plt.close(fig)
    return out_path


def plot_reliability(
    dataset: str,
    scorer: ScorerKind,
    confidences: Sequence[float],
    labels: Sequence[bool],
    n_bins: int,
    out_path: str | Path,
) -> Path:
    """Reliability diagram: per-bin accuracy against mean confidence."""
    c = np.asarray(confidences, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    idx = np.clip(np.ceil(c * n_bins).astype(int) - 1, 0, n_bins - 1)

    centers, accs, confs, weights = [], [], [], []
    for b in range(n_bins):
        mask = idx == b
        if not mask.any():
            continue
        centers.append((b + 0.5) / n_bins)
        accs.append(float(y[mask].mean()))
        confs.append(float(c[mask].mean()))
        weights.append(int(mask.sum()))

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], color="gray", linestyle=":", linewidth=1)
    ax.bar(
        centers,
        accs,
        width=1 / n_bins * 0.9,
        color="tab:blue",
        alpha=0.7,
        label="observed accuracy",
    )
    ax.plot(confs, accs, color="tab:red", marker="o", markersize=4, linewidth=1,
            label="mean confidence")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("short-mode accuracy")
    ax.set_title(f"{dataset}: {scorer.value} reliability")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, **_SAVEFIG_KW)
    plt.close(fig)
    return out_path


def render_figures(config, evals) -> list[Path]:
    """Render every figure for a finished evaluation; returns written paths."""
    from .metrics import CalibrationReport
    from .scorers import BINARY_SCORERS, LOWER_EXITS, orientation_for

    written: list[Path] = []
    out = Path(config.out_dir) / "figures"
    for ev in evals:
        written.append(
            plot_tradeoff(
                ev.dataset,
                ev.sweeps,
                ev.random_curve,
                ev.thinking,
                ev.nothinking,
                out / f"{ev.dataset}__tradeoff.png",
            )
        )
        for kind, report in sorted(ev.calibration.items(), key=lambda kv: kv[0].value):
            if not isinstance(report, CalibrationReport):
                continue
            if kind in BINARY_SCORERS or orientation_for(kind) == LOWER_EXITS:
                continue
            scored = [inst for inst in ev.instances if kind in inst.scores]
            written.append(
                plot_reliability(
                    ev.dataset,
                    kind,
                    [inst.scores[kind].value for inst in scored],
                    [inst.nothinking.correct for inst in scored],
                    report.n_bins,
                    out / f"{ev.dataset}__{kind.value}__reliability.png",
                )
            )
    return written
