"""
Render an evaluation report CSV into SVG figures and a markdown summary.

Output is deterministic: fixed SVG hash salt, no timestamps in metadata.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from jinja2 import Environment, FileSystemLoader, StrictUndefined  # noqa: E402

from teleop.config import PlotConfig  # noqa: E402
from teleop.reports import read_report  # noqa: E402

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
SVG_HASH_SALT = "teleop"
ERROR_COLUMNS = [("g_mpjpe", "g-MPJPE"), ("mpjpe", "MPJPE"), ("acc", "E_acc"), ("vel", "E_vel")]

_templates = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


def _save(fig, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_baselines(rows: List[Dict], path, cfg: Optional[PlotConfig] = None) -> Path:
    """Success rate and error bars, one group per report row"""
    cfg = cfg or PlotConfig()
    path = Path(path)
    labels = [row["method"] if row.get("fraction") is None else f"{row['method']} ({row['fraction']:g})"
              for row in rows]
    x = np.arange(len(rows))

    fig, (ax_succ, ax_err) = plt.subplots(1, 2, figsize=(cfg.width, cfg.height))
    ax_succ.bar(x, [100.0 * row["succ"] for row in rows], color="tab:blue")
    ax_succ.set_xticks(x)
    ax_succ.set_xticklabels(labels, rotation=30, ha="right")
    ax_succ.set_ylabel("Succ (%)")
    ax_succ.set_ylim(0, 100)

    width = 0.8 / len(ERROR_COLUMNS)
    for k, (column, name) in enumerate(ERROR_COLUMNS):
        ax_err.bar(x + (k - (len(ERROR_COLUMNS) - 1) / 2) * width, [row[column] for row in rows], width, label=name)
    ax_err.set_xticks(x)
    ax_err.set_xticklabels(labels, rotation=30, ha="right")
    ax_err.set_ylabel("error (mm, mm/frame, mm/frame²)")
    ax_err.legend()
    fig.tight_layout()
    _save(fig, path)
    return path


def trend_series(rows: List[Dict]) -> Dict[str, List[tuple]]:
    """method -> [(fraction, mean succ, mean g_mpjpe)] sorted by fraction; rows without a fraction are skipped"""
    grouped = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row.get("fraction") is not None:
            grouped[row["method"]][row["fraction"]].append(row)
    series = {}
    for method in sorted(grouped):
        points = []
        for fraction in sorted(grouped[method]):
            bucket = grouped[method][fraction]
            points.append((fraction, float(np.mean([r["succ"] for r in bucket])),
                           float(np.mean([r["g_mpjpe"] for r in bucket]))))
        series[method] = points
    return series


def plot_trend(rows: List[Dict], path, cfg: Optional[PlotConfig] = None) -> Optional[Path]:
    """Success rate against training-set fraction; None when no row carries a fraction"""
    series = trend_series(rows)
    if not series:
        return None
    cfg = cfg or PlotConfig()
    path = Path(path)
    fig, ax = plt.subplots(figsize=(cfg.width, cfg.height))
    for method, points in series.items():
        fractions = [100.0 * p[0] for p in points]
        ax.plot(fractions, [100.0 * p[1] for p in points], marker="o", label=method)
    ax.set_xlabel("training set (%)")
    ax.set_ylabel("Succ (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    return path


def render_summary(rows: List[Dict], figures: List[Path], source: str) -> str:
    template = _templates.get_template("report.md.j2")
    return template.render(rows=rows, figures=[f.name for f in figures], source=source,
                           trend=trend_series(rows))


def plot_report(report_csv, out_dir, cfg: Optional[PlotConfig] = None) -> List[Path]:
    """
    Render baselines.svg, trend.svg (when fractions are present) and summary.md.

    Raises:
        ReportValidationError: If the CSV is missing, empty or malformed
    """
    rows = read_report(report_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    figures = [plot_baselines(rows, out_dir / "baselines.svg", cfg)]
    trend = plot_trend(rows, out_dir / "trend.svg", cfg)
    if trend is not None:
        figures.append(trend)

    summary = out_dir / "summary.md"
    summary.write_text(render_summary(rows, figures, Path(report_csv).name))
    logger.info(f"Rendered {len(figures)} figures and summary for {len(rows)} report rows into {out_dir}")
    return figures + [summary]
