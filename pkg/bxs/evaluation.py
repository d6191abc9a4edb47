"""
Confusion matrices, per-class metrics and expected trade outcomes.

Rows are the real class and columns the predicted one, classes ordered
StrongDown, WeakDown, Neutral, WeakUp, StrongUp.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .features import CLASS_NAMES, N_CLASSES
from .utils import tabulate

logger = logging.getLogger(__name__)

DOWN = (0, 1)
UP = (3, 4)


class ConfusionMatrix:
    def __init__(self, counts):
        counts = np.asarray(counts, dtype=int)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"Confusion matrix must be square. Got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("Confusion matrix counts must be >= 0")
        self.counts = counts

    @classmethod
    def from_labels(cls, real, predicted, n_classes=N_CLASSES):
        counts = np.zeros((n_classes, n_classes), dtype=int)
        np.add.at(counts, (np.asarray(real, dtype=int), np.asarray(predicted, dtype=int)), 1)
        return cls(counts)

    @classmethod
    def load(cls, path):
        with open(path) as fp:
            data = json.load(fp)
        return cls(data["matrix"] if isinstance(data, dict) else data)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def trace(self):
        return int(np.trace(self.counts))

    def to_list(self):
        return self.counts.tolist()


def _pct(num, den):
    return None if den == 0 else 100.0 * float(num) / float(den)


@dataclass
class Metrics:
    recall: list  # exact percent per real class; None where the row is empty
    precision: list  # percent per predicted class; None where the column is empty
    accuracy: float
    total: int

    def to_dict(self):
        return dict(recall=self.recall, precision=self.precision, accuracy=self.accuracy, total=self.total)


def metrics(matrix):
    c = matrix.counts
    diag = np.diag(c)
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    return Metrics(
        recall=[_pct(d, r) for d, r in zip(diag, rows)],
        precision=[_pct(d, s) for d, s in zip(diag, cols)],
        accuracy=_pct(matrix.trace, matrix.total),
        total=matrix.total,
    )


def direction_masks(n_classes=N_CLASSES):
    """(green, red): same-direction cells and opposite-direction cells"""
    green = np.zeros((n_classes, n_classes), dtype=bool)
    red = np.zeros((n_classes, n_classes), dtype=bool)
    for a in DOWN + UP:
        for b in DOWN + UP:
            same = (a in DOWN) == (b in DOWN)
            (green if same else red)[a, b] = True
    return green, red


def pl_expectation(matrix, green=None, red=None):
    """(expected positive, expected negative) trade counts"""
    g, r = direction_masks(matrix.counts.shape[0])
    green = g if green is None else green
    red = r if red is None else red
    return int(matrix.counts[green].sum()), int(matrix.counts[red].sum())


def compare_reference(report, reference_accuracy=None, reference_green=None, reference_red=None):
    """
    Discrepancies between recomputed values and supplied references. Each is
    logged as a warning and returned as {"field", "computed", "reference"}.
    References are taken as quoted to two decimals, so anything within half a
    unit of the last digit matches.
    """
    out = []
    checks = (
        ("accuracy", report["accuracy"], reference_accuracy),
        ("green", report["green"], reference_green),
        ("red", report["red"], reference_red),
    )
    for name, computed, reference in checks:
        if reference is None:
            continue
        if computed is None or abs(float(computed) - float(reference)) > 0.005:
            logger.warning(f"{name}: computed {computed} but the reference is {reference}")
            out.append({"field": name, "computed": computed, "reference": reference})
    return out


def build_report(matrix, reference_accuracy=None, reference_green=None, reference_red=None):
    met = metrics(matrix)
    green, red = pl_expectation(matrix)
    report = {
        "classes": list(CLASS_NAMES[: matrix.counts.shape[0]]),
        "matrix": matrix.to_list(),
        **met.to_dict(),
        "green": green,
        "red": red,
    }
    report["discrepancies"] = compare_reference(report, reference_accuracy, reference_green, reference_red)
    return report


def format_report(report):
    def fmt(v):
        if v is None:
            return "-"
        return str(v) if isinstance(v, (int, np.integer)) else f"{v:.2f}"

    classes = report["classes"]
    table = [["real \\ pred"] + classes + ["Recall(%)"]]
    for name, row, rec in zip(classes, report["matrix"], report["recall"]):
        table.append([name] + [str(v) for v in row] + [fmt(rec)])
    table.append(["Precision(%)"] + [fmt(p) for p in report["precision"]] + [fmt(report["accuracy"])])

    lines = [tabulate(table)]
    lines.append(f"Accuracy: {fmt(report['accuracy'])}% ({report['total']} examples)")
    lines.append(f"Expected green: {report['green']}  red: {report['red']}")
    for d in report["discrepancies"]:
        lines.append(f"DISCREPANCY {d['field']}: computed {fmt(d['computed'])} reference {d['reference']}")
    return "\n".join(lines)
