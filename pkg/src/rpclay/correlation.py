"""Parameter screening by absolute Pearson correlation with indentation depth."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import SampleSet
from .errors import DegenerateError, InsufficientDataError

SCREENED = ("A1", "A2", "B", "n", "C", "eps_dot_ref", "m", "ise")
REPORT_FORMAT = "rpclay-screening"
REPORT_VERSION = 1


@dataclass
class ScreeningReport:
    coeffs: dict[tuple[str, int], float]
    selected: list[str]
    threshold: float
    parameters: tuple[str, ...] = SCREENED
    cases: tuple[int, ...] = (1, 2, 3)
    meta: dict = field(default_factory=dict)

    def coefficient(self, param: str, case: int) -> float:
        return self.coeffs[(param, case)]

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            **self.meta,
            "threshold": self.threshold,
            "parameters": list(self.parameters),
            "cases": list(self.cases),
            "coefficients": {p: {str(c): self.coeffs[(p, c)] for c in self.cases}
                             for p in self.parameters},
            "selected": list(self.selected),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", *(f"case_{c}" for c in self.cases), "selected"])
        for p in self.parameters:
            w.writerow([p, *(repr(self.coeffs[(p, c)]) for c in self.cases),
                        int(p in self.selected)])
        return buf.getvalue()


def abs_pearson(x: np.ndarray, y: np.ndarray) -> float:
    """|r| of two columns; 0 when ``x`` is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if syy == 0.0:
        raise DegenerateError("depth column is constant")
    if sxx == 0.0:
        return 0.0
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(abs(r), 1.0)


def screen(sset: SampleSet, threshold: float = 0.1,
           parameters: Sequence[str] = SCREENED,
           cases: Sequence[int] | None = None) -> ScreeningReport:
    """Correlate each parameter column with each case's depth column over all rows.

    A parameter is selected only if its coefficient exceeds ``threshold`` for
    every case.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if len(sset) < 3:
        raise InsufficientDataError(f"screening needs >= 3 rows, got {len(sset)}")
    cases = tuple(cases or sset.case_ids)
    depths = {c: sset.depths(c) for c in cases}
    for c, d in depths.items():
        if not np.all(np.isfinite(d)):
            raise InsufficientDataError(f"case {c} has missing depths")
    coeffs = {(p, c): abs_pearson(sset.column(p), depths[c])
              for p in parameters for c in cases}
    selected = [p for p in parameters if all(coeffs[(p, c)] > threshold for c in cases)]
    return ScreeningReport(coeffs, selected, threshold, tuple(parameters), cases)


def rank(report: ScreeningReport, case: int) -> list[str]:
    """Parameters by descending coefficient for one case, ties alphabetical."""
    if case not in report.cases:
        raise KeyError(f"case {case} not in report")
    return sorted(report.parameters, key=lambda p: (-report.coeffs[(p, case)], p))
