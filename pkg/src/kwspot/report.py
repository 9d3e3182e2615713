"""Figure rendering for CLI reports (written next to the delimited outputs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EventAnnotation, MetricsReport  # noqa: E402


def save_metrics_figure(report: MetricsReport, per_keyword: dict[str, tuple[int, int, int]],
                        path: str | Path) -> None:
    """Pooled P/R/F bars plus per-keyword tp/fp/fn counts."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(["precision", "recall", "f_score"],
            [report.precision, report.recall, report.f_score], color="#4878d0")
    ax1.set_ylim(0, 1.05)
    ax1.set_title(f"micro-averaged (tp={report.tp}, fp={report.fp}, fn={report.fn})")
    for spine in ("top", "right"):
        ax1.spines[spine].set_visible(False)

    keywords = sorted(per_keyword)
    xs = range(len(keywords))
    width = 0.27
    for off, (label, color) in enumerate([("tp", "#4878d0"), ("fp", "#d65f5f"),
                                          ("fn", "#ee854a")]):
        ax2.bar([x + (off - 1) * width for x in xs],
                [per_keyword[kw][off] for kw in keywords], width, label=label,
                color=color)
    ax2.set_xticks(list(xs))
    ax2.set_xticklabels(keywords, rotation=45, ha="right", fontsize=8)
    ax2.legend(frameon=False)
    ax2.set_title("per-keyword event counts")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_threshold_sweep_figure(grid: list[float], f_scores: list[float],
                                chosen: float, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    finite = [(t, f) for t, f in zip(grid, f_scores) if abs(t) != float("inf")]
    if finite:
        ax.step([t for t, _ in finite], [f for _, f in finite], where="post")
    if abs(chosen) != float("inf"):
        ax.axvline(chosen, color="#d65f5f", linestyle="--",
                   label=f"chosen = {chosen:.4f}")
        ax.legend(frameon=False)
    ax.set_xlabel("score threshold")
    ax.set_ylabel("validation F")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_detection_timeline(detections: list[EventAnnotation],
                            references: list[EventAnnotation],
                            duration_s: float, path: str | Path) -> None:
    """One lane per keyword; references above the axis, detections below."""
    keywords = sorted({e.keyword for e in detections} | {e.keyword for e in references})
    fig, ax = plt.subplots(figsize=(10, 1 + 0.6 * max(len(keywords), 1)))
    lanes = {kw: i for i, kw in enumerate(keywords)}
    for ev in references:
        y = lanes[ev.keyword]
        ax.plot([ev.onset_s, ev.offset_s], [y + 0.18] * 2, lw=6, color="#4878d0",
                solid_capstyle="butt")
    for ev in detections:
        y = lanes[ev.keyword]
        ax.plot([ev.onset_s, ev.offset_s], [y - 0.18] * 2, lw=6, color="#d65f5f",
                solid_capstyle="butt")
    ax.set_yticks(list(lanes.values()))
    ax.set_yticklabels(keywords)
    ax.set_xlim(0, max(duration_s, 1e-3))
    ax.set_xlabel("time / s (reference above, detection below)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_figure(audio_s: float, wall_by_workers: dict[int, float],
                      path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    workers = sorted(wall_by_workers)
    ax.bar([str(w) for w in workers], [wall_by_workers[w] for w in workers],
           color="#4878d0", label="wall-clock")
    ax.axhline(audio_s, color="#d65f5f", linestyle="--", label="audio duration")
    ax.set_xlabel("workers")
    ax.set_ylabel("seconds")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
