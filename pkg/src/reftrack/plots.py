"""Figure and CSV rendering for the stats and eval reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .dataset_io import DatasetStats
from .refeval import METRIC_NAMES, MetricsReport


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _bar_from_counter(counter, title, xlabel, path, labels=None):
    keys = sorted(counter)
    values = [counter[k] for k in keys]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xticks = [labels[k] if labels else str(k) for k in keys]
    ax.bar(range(len(keys)), values, color="#4878a8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(xticks, rotation=45 if labels else 0, ha="right" if labels else "center")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    _save(fig, path)


def render_stats_report(stats: DatasetStats, out_dir) -> list[Path]:
    """Histograms plus a stats.csv next to them; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "stats.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", "value"])
        w.writerow(["frames", stats.frames])
        w.writerow(["prompts", stats.prompt_count])
        w.writerow(["boxes", stats.box_count])
        w.writerow(["instances_per_prompt_mean", stats.instances_per_prompt_mean])
        w.writerow(["temporal_ratio_mean", stats.temporal_ratio_mean])
        for k in sorted(stats.instances_per_prompt_hist):
            w.writerow([f"prompts_with_{k}_instances",
                        stats.instances_per_prompt_hist[k]])
        for k in sorted(stats.duration_hist):
            w.writerow([f"instances_lasting_{k}_frames", stats.duration_hist[k]])
        for word, n in stats.word_freq.most_common():
            w.writerow([f"word_{word}", n])
    written.append(csv_path)

    p = out / "instances_per_prompt.png"
    _bar_from_counter(stats.instances_per_prompt_hist,
                      "Referred instances per prompt", "instances", p)
    written.append(p)

    p = out / "temporal_ratio.png"
    deciles = {k: f"{k / 10:.1f}-{(k + 1) / 10:.1f}" for k in range(10)}
    _bar_from_counter(stats.temporal_ratio_hist,
                      "Referred-frame fraction per prompt", "fraction of video",
                      p, labels=deciles)
    written.append(p)

    p = out / "instance_durations.png"
    _bar_from_counter(stats.duration_hist,
                      "Referred-instance durations", "frames", p)
    written.append(p)

    p = out / "word_frequency.png"
    top = stats.word_freq.most_common(20)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(top)), [n for _, n in top], color="#704878")
    ax.set_xticks(range(len(top)))
    ax.set_xticklabels([w for w, _ in top], rotation=45, ha="right")
    ax.set_title("Prompt word frequency (top 20)")
    ax.set_ylabel("occurrences")
    _save(fig, p)
    written.append(p)
    return written


def render_eval_report(report: MetricsReport, out_dir) -> list[Path]:
    """Per-prompt metric CSV, a HOTA bar chart, and metric-vs-alpha curves."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video", "prompt"] + [m.lower() for m in METRIC_NAMES])
        for (vname, pid) in sorted(report.per_prompt):
            pm = report.per_prompt[(vname, pid)]
            w.writerow([vname, pid] + [f"{v:.6f}" for v in pm.as_row()])
        w.writerow(["average", ""]
                   + [f"{report.averaged[m]:.6f}" for m in METRIC_NAMES])
    written.append(csv_path)

    keys = sorted(report.per_prompt)
    p = out / "hota_per_prompt.png"
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(keys)), 3.5))
    ax.bar(range(len(keys)), [report.per_prompt[k].hota for k in keys],
           color="#3f7f5f")
    ax.axhline(report.averaged["HOTA"], color="#b04a4a", linestyle="--",
               label=f"mean {report.averaged['HOTA']:.3f}")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels([f"{v}/{pid}" for v, pid in keys], rotation=60,
                       ha="right", fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_title("HOTA per prompt")
    ax.legend()
    _save(fig, p)
    written.append(p)

    if keys:
        import numpy as np
        from .refeval import ALPHAS
        p = out / "metric_curves.png"
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for name in ("HOTA", "DetA", "AssA"):
            curves = [report.per_prompt[k].per_alpha[name] for k in keys
                      if name in report.per_prompt[k].per_alpha]
            if curves:
                ax.plot(ALPHAS, np.mean(curves, axis=0), marker=".", label=name)
        ax.set_xlabel("localization threshold")
        ax.set_ylabel("score")
        ax.set_ylim(0, 1)
        ax.set_title("Mean metric vs. overlap threshold")
        ax.legend()
        _save(fig, p)
        written.append(p)
    return written


def stats_table(stats: DatasetStats) -> str:
    """Plain-text summary used by the stats subcommand."""
    lines = [
        f"frames                     {stats.frames}",
        f"prompts                    {stats.prompt_count}",
        f"boxes                      {stats.box_count}",
        f"instances per prompt       {stats.instances_per_prompt_mean:.2f}",
        f"temporal ratio             {stats.temporal_ratio_mean:.2f}",
    ]
    top = ", ".join(f"{w}({n})" for w, n in stats.word_freq.most_common(8))
    lines.append(f"top words                  {top}")
    return "\n".join(lines)
