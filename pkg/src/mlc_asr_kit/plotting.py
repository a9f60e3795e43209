"""
Figures for score and duration reports.

Figures are written straight to files with the non-interactive Agg backend.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from mlc_asr_kit.corpus import DurationReport  # noqa: E402
from mlc_asr_kit.metrics import ScoreReport  # noqa: E402
from mlc_asr_kit.textnorm import Metric, metric_for  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "axes.grid.axis": "y",
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

WER_COLOR = "#4c72b0"
CER_COLOR = "#dd8452"


def _save(fig, path: str | os.PathLike) -> None:
    # Drop the date/version stamp so reruns give identical files.
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)


def plot_score_report(report: ScoreReport, path: str | os.PathLike, title: str | None = None) -> None:
    """Bar chart of per-language error rates with both MER levels drawn in."""
    langs = report.languages()
    rates = [100 * (report.per_language[lang].error_rate or 0.0) for lang in langs]
    colors = [CER_COLOR if metric_for(lang) is Metric.CER else WER_COLOR for lang in langs]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(langs) + 1.5), 3.2))
        ax.bar(range(len(langs)), rates, color=colors)
        for metric, color in ((Metric.WER, WER_COLOR), (Metric.CER, CER_COLOR)):
            if color in colors:
                ax.bar([0], [0], color=color, label=metric.value.upper())
        ax.set_xticks(range(len(langs)), [lang.value for lang in langs], rotation=60, ha="right")
        for value, style, label in (
            (report.mer_pooled, "-", "MER pooled"),
            (report.mer_macro, "--", "MER macro"),
        ):
            if value is not None:
                ax.axhline(100 * value, color="k", linestyle=style, linewidth=1, label=f"{label} {100 * value:.2f}")
        ax.set_ylabel("error rate (%)")
        ax.legend(frameon=False, fontsize=8, loc="upper left", bbox_to_anchor=(1.01, 1.0))
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_duration_report(report: DurationReport, path: str | os.PathLike, title: str | None = None) -> None:
    """Stacked hours per language, one stack segment per corpus."""
    langs = report.languages
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(langs) + 1.5), 3.2))
        bottom = [0.0] * len(langs)
        cmap = plt.get_cmap("tab20")
        for k, corpus in enumerate(report.corpora):
            hours = [report.cell_hours(corpus, lang) for lang in langs]
            ax.bar(range(len(langs)), hours, bottom=bottom, label=corpus, color=cmap(k % 20))
            bottom = [b + h for b, h in zip(bottom, hours)]
        ax.set_xticks(range(len(langs)), [lang.value for lang in langs], rotation=60, ha="right")
        ax.set_ylabel("hours")
        ax.legend(frameon=False, fontsize=7, loc="upper left", bbox_to_anchor=(1.01, 1.0))
        ax.set_title(title or f"{report.total_hours:.1f} h total")
        _save(fig, path)
