"""CSV ingestion and the JSON run report."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import DataError
from .estimators import Sample

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    """Where the sample lives and which columns hold Y, X and Q.

    Without a header, column names are 0-based positions written as strings.
    """

    path: str
    y_column: str
    x_columns: tuple[str, ...]
    q_column: str
    has_header: bool = True

    def __post_init__(self):
        xs = tuple(str(c) for c in self.x_columns)
        if not xs:
            raise DataError("at least one x column is required")
        names = (str(self.y_column), *xs, str(self.q_column))
        if len(set(names)) != len(names):
            raise DataError("column names must be distinct", columns=list(names))
        object.__setattr__(self, "x_columns", xs)

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.y_column, *self.x_columns, self.q_column)

    def to_dict(self) -> dict:
        return {"path": self.path, "y": self.y_column, "x": list(self.x_columns),
                "q": self.q_column, "has_header": self.has_header}


@dataclass
class LoadResult:
    sample: Sample
    dropped: int = 0
    rows_read: int = 0


def _column_index(header: list[str] | None, name: str, width: int, path: str) -> int:
    if header is not None:
        if name not in header:
            raise DataError(f"missing column '{name}'", column=name, path=path)
        return header.index(name)
    try:
        idx = int(name)
    except ValueError:
        raise DataError(f"missing column '{name}' (no header: use 0-based positions)",
                        column=name, path=path) from None
    if not 0 <= idx < width:
        raise DataError(f"missing column '{name}'", column=name, path=path)
    return idx


def _parse(cell: str) -> float:
    v = float(cell)
    if not math.isfinite(v):
        raise ValueError(cell)
    return v


def load_csv_rows(spec: DatasetSpec) -> LoadResult:
    """Parse the selected columns, dropping rows with a missing or non-numeric cell."""
    if not os.path.isfile(spec.path):
        raise DataError(f"file not found: {spec.path}", path=spec.path)
    with open(spec.path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = None
    if spec.has_header:
        if not rows:
            raise DataError("no usable rows", path=spec.path)
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
    width = len(header) if header is not None else max((len(r) for r in rows), default=0)
    idx = [_column_index(header, c, width, spec.path) for c in spec.columns]
    good, dropped = [], 0
    for row in rows:
        try:
            good.append([_parse(row[i]) for i in idx])
        except (ValueError, IndexError):
            dropped += 1
    if dropped:
        log.warning("dropped %d row(s) with missing or non-numeric values", dropped)
    if not good:
        raise DataError("no usable rows", path=spec.path, dropped=dropped)
    arr = np.asarray(good, dtype=float)
    sample = Sample(y=arr[:, 0], x=arr[:, 1:-1], q=arr[:, -1])
    return LoadResult(sample, dropped, len(rows))


def load_csv(spec: DatasetSpec) -> Sample:
    return load_csv_rows(spec).sample


def write_csv(path: str, sample: Sample, names=("y", "x", "q")) -> None:
    """Write a sample with a header ``y, x[, x2...], q``."""
    y_name, x_name, q_name = names
    p = sample.p
    xs = [x_name] if p == 1 else [f"{x_name}{j + 1}" for j in range(p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([y_name, *xs, q_name])
        for i in range(sample.n):
            w.writerow([repr(float(sample.y[i])), *(repr(float(v)) for v in sample.x[i]),
                        repr(float(sample.q[i]))])


def threshold_percentiles(q: np.ndarray, gammas) -> list[float]:
    """Share of Q strictly below each threshold, in percent."""
    q = np.asarray(q, dtype=float)
    return [float(100.0 * np.mean(q < g)) for g in gammas]


@dataclass
class RunReport:
    detection: dict
    config: dict
    timing: dict = field(default_factory=dict)
    dataset: dict | None = None
    percentiles: list[float] | None = None
    version: str = __version__

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "config": self.config,
            "detection": self.detection,
            "timing": self.timing,
        }
        if self.dataset is not None:
            out["dataset"] = self.dataset
        if self.percentiles is not None:
            out["threshold_percentiles"] = {
                "values": self.percentiles,
                "note": "percent of the input Q values below each threshold",
            }
        return out
