"""
Report emission: CSV summary, full JSON and per-panel SVG bar charts.
"""

import logging
from pathlib import Path
from typing import Iterable, List, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.models.experiment import ResultsReport  # noqa: E402

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["learner", "arm", "panel", "T", "mean", "std", "proportion", "success"]
FORMATS = ("csv", "json", "svg")

# Fixed hash salt keeps SVG element ids stable across runs
matplotlib.rcParams["svg.hashsalt"] = "ctcat"


def parse_formats(formats: Union[str, Iterable[str]]) -> List[str]:
    if isinstance(formats, str):
        formats = formats.split(",")
    parsed = [f.strip().lower() for f in formats if f.strip()]
    unknown = [f for f in parsed if f not in FORMATS]
    if unknown:
        raise ValueError(f"unknown report format(s): {', '.join(unknown)}; choose from {', '.join(FORMATS)}")
    return parsed


def report_frame(report: ResultsReport) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in report.rows], columns=CSV_COLUMNS)
    frame["T"] = pd.array([None if pd.isna(t) else int(t) for t in frame["T"]], dtype="Int64")
    return frame


def report_csv(report: ResultsReport) -> str:
    return report_frame(report).to_csv(index=False, float_format="%.6f", lineterminator="\n")


def _panel_svg(report: ResultsReport, panel: str, path: Path) -> None:
    frame = report_frame(report)
    frame = frame[frame["panel"] == panel]
    windows = sorted(frame["T"].dropna().unique().tolist()) or [None]
    learners = list(dict.fromkeys(frame["learner"]))
    arms = list(dict.fromkeys(frame["arm"]))

    fig, axes = plt.subplots(1, len(windows), figsize=(4 * len(windows), 4), sharey=True, squeeze=False)
    width = 0.8 / max(len(arms), 1)
    x = np.arange(len(learners))
    for ax, T in zip(axes[0], windows):
        subset = frame if T is None else frame[frame["T"] == T]
        for j, arm in enumerate(arms):
            heights = [
                float(subset[(subset["learner"] == learner) & (subset["arm"] == arm)]["proportion"].sum())
                for learner in learners
            ]
            ax.bar(x + j * width, heights, width, label=arm)
        ax.set_xticks(x + width * (len(arms) - 1) / 2)
        ax.set_xticklabels(learners)
        ax.set_ylim(0, 1)
        ax.set_title(panel if T is None else f"{panel}, T={T}")
    axes[0][0].set_ylabel("selection proportion")
    axes[0][-1].legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(report: ResultsReport, formats: Union[str, Iterable[str]], path: Union[str, Path]) -> List[Path]:
    """Write the requested formats under ``path`` and return the files written.

    Raises:
        OSError: the directory cannot be created or a file cannot be written
    """
    formats = parse_formats(formats)
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"Failed to create output directory {out}: {e}") from e

    written = []
    if "csv" in formats:
        target = out / "report.csv"
        target.write_text(report_csv(report))
        written.append(target)
    if "json" in formats:
        target = out / "report.json"
        target.write_text(report.model_dump_json(indent=2))
        written.append(target)
    if "svg" in formats:
        for panel in report.panels():
            target = out / f"selection_{panel}.svg"
            _panel_svg(report, panel, target)
            written.append(target)
    logger.info(f"Wrote {len(written)} report file(s) to {out}")
    return written


def load_report(path: Union[str, Path]) -> ResultsReport:
    return ResultsReport.model_validate_json(Path(path).read_text())
