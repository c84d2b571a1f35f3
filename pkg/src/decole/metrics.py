"""Evaluation metrics for a detection result against gold labels.

Each metric returns a :class:`MetricValue` carrying the raw counts; the value
is ``None`` whenever the denominator is zero, never a silent 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .dataset import DataError, Dataset
from .detectors import DetectionResult

METRIC_NAMES = ("recall_mislabeled", "precision_clean", "recall_bias_error", "precision_bias_class")
BIAS_METRICS = ("recall_bias_error", "precision_bias_class")
CSV_COLUMNS = ("detector", "group", "metric", "class", "mean", "ci_half_width", "n_runs")


@dataclass(frozen=True)
class MetricValue:
    numerator: int
    denominator: int

    @property
    def value(self) -> float | None:
        return self.numerator / self.denominator if self.denominator else None


def _ratio(num_mask: np.ndarray, den_mask: np.ndarray) -> MetricValue:
    return MetricValue(int(np.count_nonzero(num_mask)), int(np.count_nonzero(den_mask)))


def _context(result: DetectionResult | np.ndarray, dataset: Dataset,
             group: int | None) -> tuple[np.ndarray, np.ndarray]:
    """(flag mask, group filter mask) aligned with dataset rows."""
    if dataset.gold is None:
        raise DataError("metrics require gold labels")
    if isinstance(result, DetectionResult):
        flagged = result.flagged_mask(dataset)
    else:
        flagged = np.asarray(result, dtype=bool)
        if flagged.shape != (len(dataset),):
            raise DataError("flag mask must have one entry per instance")
    if group is None:
        keep = np.ones(len(dataset), bool)
    else:
        keep = dataset.group == group
    return flagged, keep


def recall_mislabeled(result, dataset: Dataset, group: int | None = None) -> MetricValue:
    """Share of truly mislabeled instances that were flagged."""
    flagged, keep = _context(result, dataset, group)
    wrong = keep & (dataset.observed != dataset.gold)
    return _ratio(wrong & flagged, wrong)


def precision_clean(result, dataset: Dataset, group: int | None = None) -> MetricValue:
    """Share of instances left unflagged whose observed label is correct."""
    flagged, keep = _context(result, dataset, group)
    clean = keep & ~flagged
    return _ratio(clean & (dataset.observed == dataset.gold), clean)


def recall_bias_error(result, dataset: Dataset, group: int | None, c: int) -> MetricValue:
    """Flagged share of the instances observed as ``c`` whose gold label is ``1 - c``."""
    if c not in (0, 1):
        raise ValueError("error class must be 0 or 1")
    flagged, keep = _context(result, dataset, group)
    errors = keep & (dataset.observed == c) & (dataset.gold == 1 - c)
    return _ratio(errors & flagged, errors)


def precision_bias_class(result, dataset: Dataset, group: int | None, c: int,
                         denominator: str = "clean") -> MetricValue:
    """Correctness of the unflagged instances observed as class ``c``.

    The numerator counts unflagged instances with observed and gold label both
    equal to ``c``.  With ``denominator="clean"`` it is divided by every
    unflagged instance observed as ``c`` (a precision); with
    ``denominator="correct"`` it is divided by every instance whose observed
    and gold label are ``c`` (the share of correct ``c`` labels retained).
    """
    if c not in (0, 1):
        raise ValueError("class must be 0 or 1")
    flagged, keep = _context(result, dataset, group)
    labeled_c = keep & (dataset.observed == c)
    correct = labeled_c & (dataset.gold == c)
    num = correct & ~flagged
    if denominator == "clean":
        return _ratio(num, labeled_c & ~flagged)
    if denominator == "correct":
        return _ratio(num, correct)
    raise ValueError(f"denominator must be 'clean' or 'correct', got {denominator!r}")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricCell:
    detector: str
    group: int | None
    metric: str
    cls: int | None
    numerator: int
    denominator: int

    @property
    def value(self) -> float | None:
        return self.numerator / self.denominator if self.denominator else None

    @property
    def key(self) -> tuple:
        return (self.detector, self.group, self.metric, self.cls)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class"] = d.pop("cls")
        d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricCell":
        return cls(d["detector"], d["group"], d["metric"], d["class"],
                   int(d["numerator"]), int(d["denominator"]))


@dataclass(frozen=True)
class MetricsReport:
    cells: tuple[MetricCell, ...]

    def get(self, detector: str, group: int | None, metric: str,
            cls: int | None = None) -> MetricCell | None:
        for cell in self.cells:
            if cell.key == (detector, group, metric, cls):
                return cell
        return None

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells]}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(tuple(MetricCell.from_dict(c) for c in d["cells"]))

    def to_csv(self) -> str:
        return summary_csv((c.detector, c.group, c.metric, c.cls,
                            CISummary(c.value, None, 1 if c.value is not None else 0))
                           for c in self.cells)


def evaluate(result: DetectionResult, dataset: Dataset, bias_class: dict[int, int],
             denominator: str = "clean") -> MetricsReport:
    """All four metrics, overall (group ``None``) and per group.

    ``bias_class`` maps each group to the class ``c`` whose bias-inducing
    error (observed ``c``, gold ``1 - c``) is tracked for that group.
    """
    flagged = result.flagged_mask(dataset)
    name = result.detector
    cells = []
    for g in [None, *range(dataset.group_count)]:
        for metric, fn in (("recall_mislabeled", recall_mislabeled),
                           ("precision_clean", precision_clean)):
            m = fn(flagged, dataset, g)
            cells.append(MetricCell(name, g, metric, None, m.numerator, m.denominator))
        if g is None or g not in bias_class:
            continue
        c = int(bias_class[g])
        m = recall_bias_error(flagged, dataset, g, c)
        cells.append(MetricCell(name, g, "recall_bias_error", c, m.numerator, m.denominator))
        m = precision_bias_class(flagged, dataset, g, c, denominator)
        cells.append(MetricCell(name, g, "precision_bias_class", c, m.numerator, m.denominator))
    return MetricsReport(tuple(cells))


# ---------------------------------------------------------------------------
# Confidence intervals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CISummary:
    mean: float | None
    half_width: float | None
    n_runs: int

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_ci(values: Iterable[float | None], level: float = 0.95) -> CISummary:
    """Mean and two-sided Student-t half-width over the defined values.

    The half-width uses the sample standard deviation (ddof 1) and is
    ``None`` with fewer than two values.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    xs = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    n = int(xs.size)
    if n == 0:
        return CISummary(None, None, 0)
    mean = float(xs.mean())
    if n < 2:
        return CISummary(mean, None, n)
    sd = float(xs.std(ddof=1))
    t = float(stats.t.ppf(0.5 + level / 2.0, df=n - 1))
    return CISummary(mean, t * sd / math.sqrt(n), n)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_csv(rows: Iterable[tuple[str, int | None, str, int | None, CISummary]]) -> str:
    """Long-format table; overall rows use group ``all`` and undefined cells stay empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for detector, group, metric, cls, s in rows:
        w.writerow([detector, "all" if group is None else group, metric, _fmt(cls),
                    _fmt(s.mean), _fmt(s.half_width), s.n_runs])
    return buf.getvalue()


def write_report(report: MetricsReport, out: str | Path, stem: str = "metrics") -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    js, cs = out / f"{stem}.json", out / f"{stem}.csv"
    js.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    cs.write_text(report.to_csv(), encoding="utf-8")
    return [js, cs]


def parse_bias_class(text: str | Sequence[str] | None, group_count: int) -> dict[int, int]:
    """Parse ``"0:0,1:1"`` (group:class pairs).  ``None`` gives g0->0, g1->1, others omitted."""
    if text is None:
        return {g: g for g in range(min(group_count, 2))}
    if not isinstance(text, str):
        text = ",".join(text)
    out: dict[int, int] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        try:
            g, c = (int(x) for x in part.split(":"))
        except ValueError as exc:
            raise ValueError(f"bad bias-class entry {part!r}; expected group:class") from exc
        if c not in (0, 1) or not 0 <= g < group_count:
            raise ValueError(f"bad bias-class entry {part!r}")
        out[g] = c
    return out
