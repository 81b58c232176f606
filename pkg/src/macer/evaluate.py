"""Certified accuracy, average certified radius (ACR) and Hard/Soft comparisons."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError
from .smoothing import ABSTAIN, BoundKind, CertifyConfig, certify

DEFAULT_GRID = tuple(round(0.25 * i, 2) for i in range(10))  # 0.00 .. 2.25
ROW_HEADER = ("idx", "label", "prediction", "radius", "correct")


@dataclass(frozen=True)
class EvalRow:
    index: int
    label: int
    prediction: int
    radius: float
    correct: bool

    @classmethod
    def from_result(cls, index, label, result):
        correct = result.outcome != ABSTAIN and result.outcome == label
        return cls(int(index), int(label), int(result.outcome), float(result.radius), bool(correct))


@dataclass(frozen=True)
class EvalReport:
    rows: tuple
    radii_grid: tuple
    accuracies: tuple
    acr: float


def _need_rows(rows):
    if len(rows) == 0:
        raise DomainError("no evaluation rows")


def certified_accuracy(rows, epsilon):
    """Fraction of rows that are correct with certified radius >= epsilon."""
    _need_rows(rows)
    if epsilon < 0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon!r}")
    return sum(1 for r in rows if r.correct and r.radius >= epsilon) / len(rows)


def average_certified_radius(rows):
    """Mean radius, counting misclassified and abstained rows as 0."""
    _need_rows(rows)
    return sum(r.radius for r in rows if r.correct) / len(rows)


def curve_area(rows):
    """Exact area under the step curve epsilon -> certified_accuracy(rows, epsilon)."""
    _need_rows(rows)
    levels = sorted({r.radius for r in rows if r.correct})
    area, prev = 0.0, 0.0
    for r in levels:
        # accuracy is constant on (prev, r] and equals its value at r
        area += certified_accuracy(rows, r) * (r - prev)
        prev = r
    return area


def radius_accuracy_curve(rows, grid=DEFAULT_GRID):
    grid = [float(g) for g in grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise DomainError("radius grid must be sorted ascending")
    return [(g, certified_accuracy(rows, g)) for g in grid]


def build_report(rows, grid=DEFAULT_GRID):
    curve = radius_accuracy_curve(rows, grid)
    return EvalReport(tuple(rows), tuple(g for g, _ in curve), tuple(a for _, a in curve),
                      average_certified_radius(rows))


def certify_dataset(net, dataset, cfg, rng, progress=None):
    """Certify every example; example ``i`` draws noise from ``rng.child(i)``."""
    rows = []
    for i in range(len(dataset)):
        res = certify(net, dataset.features[i], cfg, rng.child(i))
        rows.append(EvalRow.from_result(i, dataset.labels[i], res))
        if progress is not None:
            progress(i, rows[-1])
    return rows


@dataclass(frozen=True)
class Comparison:
    rows: dict  # BoundKind -> list[EvalRow]
    acr: dict  # BoundKind -> float
    acr_of_max: float
    median_radius: dict  # BoundKind -> median over points every method certifies
    mutually_certified: int


def compare_soft_hard(net, dataset, sigma, n0, n, alpha, beta, rng):
    """Certify each example with Clopper-Pearson, Hoeffding and Bernstein bounds.

    All three methods see the same noise realisations per example.
    """
    kinds = (BoundKind.CLOPPER_PEARSON, BoundKind.HOEFFDING, BoundKind.BERNSTEIN)
    rows = {kind: certify_dataset(net, dataset, CertifyConfig(sigma, n0, n, alpha, kind, beta), rng)
            for kind in kinds}
    acr = {kind: average_certified_radius(rows[kind]) for kind in kinds}
    per_example_max = [max((rows[kind][i].radius if rows[kind][i].correct else 0.0) for kind in kinds)
                       for i in range(len(dataset))]
    both = [i for i in range(len(dataset)) if all(rows[k][i].prediction != ABSTAIN for k in kinds)]
    medians = {kind: (float(np.median([rows[kind][i].radius for i in both])) if both else 0.0)
               for kind in kinds}
    return Comparison(rows, acr, float(np.mean(per_example_max)), medians, len(both))


def write_rows_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_HEADER)
        for r in rows:
            w.writerow([r.index, r.label, r.prediction, f"{r.radius:.6f}", int(r.correct)])


def read_rows_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != ROW_HEADER:
            raise FormatError(f"{path}:1: header {','.join(header)!r}, expected {','.join(ROW_HEADER)!r}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                if len(rec) != len(ROW_HEADER):
                    raise ValueError(f"{len(rec)} fields, expected {len(ROW_HEADER)}")
                idx, label, pred, radius = int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3])
                if rec[4].strip() not in ("0", "1"):
                    raise ValueError(f"correct must be 0 or 1, got {rec[4]!r}")
                correct = rec[4].strip() == "1"
                if radius < 0 or not np.isfinite(radius):
                    raise ValueError(f"bad radius {rec[3]!r}")
                if pred == ABSTAIN and (radius != 0 or correct):
                    raise ValueError("abstained row must have radius 0 and correct 0")
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            rows.append(EvalRow(idx, label, pred, radius, correct))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return rows


def write_curve_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("radius", "accuracy"))
        for g, a in curve:
            w.writerow([f"{g:.2f}", f"{a:.6f}"])


def format_table(report, label=""):
    """Accuracy at each grid radius plus ACR, one header line and one value line."""
    head = ["method"] + [f"{g:.2f}" for g in report.radii_grid] + ["ACR"]
    vals = [label or "-"] + [f"{a:.3f}" for a in report.accuracies] + [f"{report.acr:.3f}"]
    widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
    return "\n".join(" ".join(s.rjust(w) for s, w in zip(line, widths)) for line in (head, vals))
