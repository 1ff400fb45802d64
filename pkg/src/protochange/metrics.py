"""Confusion-matrix evaluation: per-class precision/recall/F1/IoU and accuracy.

Changed pixels are the positive class (1). Dataset-level numbers use
micro-aggregation: confusion counts are pooled across samples before any
ratio is computed. Degenerate 0/0 ratios are defined as 0.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import DimensionMismatch, EmptyDataset, EmptyMatrix
from .raster_io import ChangeMask

METRIC_KEYS = (
    "precision_0",
    "recall_0",
    "f1_0",
    "iou_0",
    "precision_1",
    "recall_1",
    "f1_1",
    "iou_1",
    "acc",
)


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


def confusion(pred: ChangeMask, gt: ChangeMask) -> ConfusionMatrix:
    """Exact pixel counts with changed as the positive class."""
    if pred.values.shape != gt.values.shape:
        raise DimensionMismatch(f"pred {pred.values.shape} vs gt {gt.values.shape}")
    p = pred.values
    g = gt.values
    return ConfusionMatrix(
        tp=int((p & g).sum()),
        fp=int((p & ~g).sum()),
        fn=int((~p & g).sum()),
        tn=int((~p & ~g).sum()),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def class_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """All nine metric columns; class 0 swaps the positive/negative roles."""
    if cm.total <= 0:
        raise EmptyMatrix("confusion matrix has zero total")
    p1 = _ratio(cm.tp, cm.tp + cm.fp)
    r1 = _ratio(cm.tp, cm.tp + cm.fn)
    p0 = _ratio(cm.tn, cm.tn + cm.fn)
    r0 = _ratio(cm.tn, cm.tn + cm.fp)
    return {
        "precision_0": p0,
        "recall_0": r0,
        "f1_0": _ratio(2 * p0 * r0, p0 + r0),
        "iou_0": _ratio(cm.tn, cm.tn + cm.fn + cm.fp),
        "precision_1": p1,
        "recall_1": r1,
        "f1_1": _ratio(2 * p1 * r1, p1 + r1),
        "iou_1": _ratio(cm.tp, cm.tp + cm.fp + cm.fn),
        "acc": _ratio(cm.tp + cm.tn, cm.total),
    }


def aggregate(samples) -> dict[str, float]:
    """Micro-aggregate: sum matrices, then compute the metrics once."""
    samples = list(samples)
    if not samples:
        raise EmptyDataset("no confusion matrices to aggregate")
    total = samples[0]
    for cm in samples[1:]:
        total = total + cm
    return class_metrics(total)


def format_table(rows: dict[str, dict[str, float]]) -> str:
    """Aligned text table in the canonical column order, values in percent."""
    header = ["Method", "Pre. (0/1)", "Rec. (0/1)", "F1 (0/1)", "IoU (0/1)", "ACC"]
    lines = []
    for method, m in rows.items():
        lines.append(
            [
                method,
                f"{100 * m['precision_0']:.1f}/{100 * m['precision_1']:.1f}",
                f"{100 * m['recall_0']:.1f}/{100 * m['recall_1']:.1f}",
                f"{100 * m['f1_0']:.1f}/{100 * m['f1_1']:.1f}",
                f"{100 * m['iou_0']:.1f}/{100 * m['iou_1']:.1f}",
                f"{100 * m['acc']:.1f}",
            ]
        )
    widths = [max(len(header[i]), *(len(row[i]) for row in lines)) if lines else len(header[i]) for i in range(6)]
    out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    for row in lines:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(out)
