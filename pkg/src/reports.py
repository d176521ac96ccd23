"""Metrics, comparison tables, CSV writers and scatter plots."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import matplotlib
matplotlib.use('Agg')
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

# Handle imports - try relative first, then absolute
try:
    from .exceptions import DataError, DegenerateDataError, ShapeError
    from .logger import Logger
    from .simgel import NutClass
except ImportError:
    from exceptions import DataError, DegenerateDataError, ShapeError
    from logger import Logger
    from simgel import NutClass

logger = Logger.get_logger(__name__)

N_CLASSES = len(NutClass)
CLASS_COLUMNS = [nut.display_name for nut in NutClass]
REGRESSION_COLUMNS = ["Contact Position Error (mm)", "Normal Force Error (N)"]
SVG_HASH_SALT = "finray-tactile"


@dataclass
class MetricsReport:
    kind: str
    n_samples: int
    overall_accuracy: Optional[float] = None
    per_class_accuracy: Optional[np.ndarray] = None
    confusion: Optional[np.ndarray] = None
    mae_position_mm: Optional[float] = None
    mae_force_n: Optional[float] = None
    targets: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    predictions: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def values(self) -> List[float]:
        """Table cells: overall + per-class accuracy, or the two MAEs."""
        if self.kind == "classification":
            return [self.overall_accuracy] + [float(a) for a in self.per_class_accuracy]
        return [self.mae_position_mm, self.mae_force_n]


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_metric: float
    max_grad_norm: float = 0.0


def classification_report(y_true, y_pred, n_classes: int = N_CLASSES) -> MetricsReport:
    """Confusion matrix (rows = true class), recall per class, overall accuracy."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"Label shapes differ: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise DegenerateDataError("Cannot score an empty evaluation set")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    totals = confusion.sum(axis=1)
    with np.errstate(invalid='ignore', divide='ignore'):
        per_class = np.where(totals > 0, np.diag(confusion) / np.maximum(totals, 1), np.nan)
    overall = float(np.trace(confusion) / confusion.sum())
    return MetricsReport("classification", int(y_true.size), overall_accuracy=overall,
                         per_class_accuracy=per_class, confusion=confusion)


def regression_report(true, pred) -> MetricsReport:
    """MAE of position (mm) and force (N) from (N, 2) arrays in physical units."""
    true = np.asarray(true, dtype=np.float64).reshape(-1, 2)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    if true.shape != pred.shape:
        raise ShapeError(f"Target shapes differ: {true.shape} vs {pred.shape}")
    if true.shape[0] == 0:
        raise DegenerateDataError("Cannot score an empty evaluation set")
    mae = np.abs(pred - true).mean(axis=0)
    return MetricsReport("regression", int(true.shape[0]), mae_position_mm=float(mae[0]),
                         mae_force_n=float(mae[1]), targets=true, predictions=pred)


def _cell(kind: str, value: float) -> str:
    if value is None or np.isnan(value):
        return "-"
    return f"{100.0 * value:.1f}%" if kind == "classification" else f"{value:.2f}"


def format_table(rows: Sequence[Tuple[str, MetricsReport]], kind: str) -> str:
    """Plain-text comparison table with one row per learner."""
    columns = (["Overall"] + CLASS_COLUMNS) if kind == "classification" else REGRESSION_COLUMNS
    header = ["Learner"] + columns
    body = [[name] + [_cell(kind, v) for v in report.values()] for name, report in rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]

    def render(line):
        cells = [line[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(line[1:], widths[1:])]
        return "  ".join(cells).rstrip()

    rule = "-" * len(render(header))
    return "\n".join([render(header), rule] + [render(line) for line in body]) + "\n"


def write_metrics_csv(path, rows: Sequence[Tuple[str, MetricsReport]], kind: str) -> None:
    columns = (["overall"] + [n.value for n in NutClass]) if kind == "classification" \
        else ["mae_position_mm", "mae_force_n"]
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(["learner", "n_samples"] + columns)
            for name, report in rows:
                writer.writerow([name, report.n_samples] + [f"{v:.6f}" for v in report.values()])
    except OSError as e:
        raise DataError(f"Cannot write metrics {path}: {e}")


def write_history_csv(path, history: Sequence[HistoryRow]) -> None:
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(["epoch", "train_loss", "val_metric"])
            for row in history:
                writer.writerow([row.epoch, repr(float(row.train_loss)), repr(float(row.val_metric))])
    except OSError as e:
        raise DataError(f"Cannot write history {path}: {e}")


def scatter_figure(true, pred, title: str = "") -> Figure:
    """Predicted against true position and force, with the identity line."""
    true = np.asarray(true, dtype=np.float64).reshape(-1, 2)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    fig = Figure(figsize=(8, 4))
    for column, (label, unit) in enumerate((("Contact position", "mm"), ("Normal force", "N"))):
        ax = fig.add_subplot(1, 2, column + 1)
        ax.scatter(true[:, column], pred[:, column], s=6, alpha=0.6)
        lo = float(min(true[:, column].min(), pred[:, column].min()))
        hi = float(max(true[:, column].max(), pred[:, column].max()))
        ax.plot([lo, hi], [lo, hi], color="black", linewidth=1)
        ax.set_xlabel(f"True {label.lower()} ({unit})")
        ax.set_ylabel(f"Predicted {label.lower()} ({unit})")
        ax.set_title(label)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def save_scatter_svg(path, true, pred, title: str = "") -> None:
    fig = scatter_figure(true, pred, title)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        try:
            fig.savefig(str(path), format="svg", metadata={"Date": None})
        except OSError as e:
            raise DataError(f"Cannot write plot {path}: {e}")
    logger.info(f"Scatter plot saved: {path}")


def write_report_files(out_dir, rows: Sequence[Tuple[str, MetricsReport]], kind: str,
                       stem: str = "metrics") -> str:
    """metrics.csv + metrics.txt in out_dir; returns the text table."""
    out_dir = Path(out_dir)
    table = format_table(rows, kind)
    write_metrics_csv(out_dir / f"{stem}.csv", rows, kind)
    try:
        (out_dir / f"{stem}.txt").write_text(table, encoding='utf-8')
    except OSError as e:
        raise DataError(f"Cannot write table {out_dir / stem}.txt: {e}")
    return table
