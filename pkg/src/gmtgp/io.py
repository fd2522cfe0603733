"""CSV ingestion and export for task collections.

Long format, one observation per row: ``task_id,t,y[,label]`` with ``t``
in original units.  Ingestion divides times by the declared period and
groups rows into tasks in order of first appearance; parse errors carry
the offending line number.

Export emits times in original units, choosing each decimal so that
re-ingesting with the same period reproduces the internal unit-circle
times bit-exactly whenever a representable original-unit time exists
(the product internal*period is nudged by ulps until dividing it back
recovers the stored float).  When none exists — correctly rounded
division can skip a quotient — re-ingested times land within one ulp.
Values and labels always round-trip exactly.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .data import Dataset, TaskSeries

logger = logging.getLogger(__name__)

__all__ = ["ingest_csv", "export_csv"]

_HEADERS = (["task_id", "t", "y"], ["task_id", "t", "y", "label"])


class CsvFormatError(ValueError):
    """Malformed CSV input; the message names the offending line."""


def ingest_csv(path: str | Path, period: float = 1.0) -> Dataset:
    """Read a long-format observation CSV into a :class:`Dataset`.

    Rows may arrive in any order; within a task they are sorted by time.
    Times must satisfy ``0 <= t < period``.  An empty ``label`` field means
    unlabeled.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise CsvFormatError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header not in _HEADERS:
        raise CsvFormatError(
            f"{path}: line 1: header must be 'task_id,t,y' or 'task_id,t,y,label'"
        )
    has_label = len(header) == 4

    order: list[str] = []
    times: dict[str, list[float]] = {}
    values: dict[str, list[float]] = {}
    labels: dict[str, str | None] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.split(",")
        if len(fields) != len(header):
            raise CsvFormatError(
                f"{path}: line {lineno}: expected {len(header)} fields, got {len(fields)}"
            )
        task_id = fields[0].strip()
        if not task_id:
            raise CsvFormatError(f"{path}: line {lineno}: empty task_id")
        try:
            t = float(fields[1])
            y = float(fields[2])
        except ValueError as exc:
            raise CsvFormatError(f"{path}: line {lineno}: {exc}") from exc
        if not np.isfinite(t) or not np.isfinite(y):
            raise CsvFormatError(f"{path}: line {lineno}: non-finite value")
        if t < 0.0 or t >= period:
            raise CsvFormatError(
                f"{path}: line {lineno}: time {t!r} outside [0, period={period!r})"
            )
        label = fields[3].strip() if has_label else ""
        if task_id not in times:
            order.append(task_id)
            times[task_id] = []
            values[task_id] = []
            labels[task_id] = label or None
        elif has_label and (label or None) != labels[task_id]:
            raise CsvFormatError(
                f"{path}: line {lineno}: conflicting label for task {task_id!r}"
            )
        times[task_id].append(t / period)
        values[task_id].append(y)
    if not order:
        raise CsvFormatError(f"{path}: no data rows")

    tasks = []
    for task_id in order:
        t_arr = np.asarray(times[task_id], dtype=float)
        v_arr = np.asarray(values[task_id], dtype=float)
        idx = np.argsort(t_arr, kind="stable")
        try:
            tasks.append(
                TaskSeries(
                    task_id=task_id,
                    times=t_arr[idx],
                    values=v_arr[idx],
                    label=labels[task_id],
                )
            )
        except ValueError as exc:
            raise CsvFormatError(f"{path}: task {task_id!r}: {exc}") from exc
    return Dataset(tasks=tuple(tasks), period=period)


def _exportable_time(internal: float, period: float) -> float:
    """Original-unit time whose division by period recovers ``internal``.

    Searches the product's ulp neighborhood for an exact preimage of the
    rounded division.  One may not exist (the preimage interval can fall
    between floats); then the plain product is the best possible and
    re-ingestion lands within one ulp of ``internal``.
    """
    t = internal * period
    if t / period == internal:
        return t
    for direction in (np.inf, -np.inf):
        c = t
        for _ in range(4):
            c = np.nextafter(c, direction)
            if c / period == internal:
                return float(c)
    return t


def export_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as long-format CSV (original time units).

    Includes the label column iff any task carries a label; re-ingesting
    with the same period reproduces values and labels exactly and times
    to within one ulp (exactly when a representable preimage exists —
    always at period 1).
    """
    has_label = any(lab is not None for lab in dataset.labels())
    rows = ["task_id,t,y,label" if has_label else "task_id,t,y"]
    for task in dataset.tasks:
        for t, y in zip(task.times.tolist(), task.values.tolist()):
            t_orig = _exportable_time(t, dataset.period)
            base = f"{task.task_id},{t_orig!r},{y!r}"
            rows.append(f"{base},{task.label or ''}" if has_label else base)
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
