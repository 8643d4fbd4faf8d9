"""CSV report rows written by the command-line tools.

Each report is a list of one dataclass type; :func:`write_rows` emits a header
from the field names and :func:`read_rows` parses the file back into the same
type. Accuracies are percentages. Optional fields are written as empty cells.
"""

from __future__ import annotations

import csv
import dataclasses
import typing
from dataclasses import dataclass
from typing import List, Optional, Sequence, Type, TypeVar

T = TypeVar("T")


@dataclass
class GridRow:
    """Per-user winner of a grid search (mirrors the per-user accuracy tables)."""

    user: int
    accuracy: float
    cv_accuracy: float
    model: str
    kernel: Optional[str] = None
    gamma: Optional[float] = None
    C: Optional[float] = None
    hidden_layer_sizes: Optional[str] = None
    alpha: Optional[float] = None


@dataclass
class DoeRow:
    """One design run: its setting and the minimum accuracy per mode."""

    id: int
    kernel: str
    gamma: float
    C: float
    min_normal: Optional[float] = None
    min_special: Optional[float] = None
    min_mixed: Optional[float] = None
    avg_normal: Optional[float] = None
    avg_special: Optional[float] = None
    avg_mixed: Optional[float] = None


@dataclass
class EffectRow:
    factor: str
    level: str
    normal: Optional[float] = None
    special: Optional[float] = None
    mixed: Optional[float] = None
    pooled: Optional[float] = None
    selected: bool = False


@dataclass
class SettingRow:
    """Per-user accuracy under the shared selected setting."""

    user: str  # user number, or "min" / "avg"
    kernel: str
    gamma: float
    C: float
    normal: Optional[float] = None
    special: Optional[float] = None
    mixed: Optional[float] = None


@dataclass
class EvalRow:
    """Per-user accuracy of one model on one dataset; ``user`` may be "min" or "avg"."""

    model: str
    mode: str
    subset: str
    user: str
    accuracy: float


@dataclass
class SummaryRow:
    model: str
    mode: str
    subset: str
    min_accuracy: float
    avg_accuracy: float
    baseline_accuracy: float


@dataclass
class BenchRow:
    n_users: int
    n_servers: int
    n_scenarios: int
    instances: int
    solver_status: str  # "optimal", or ">limit" when any solve hit the time limit
    solver_seconds: float
    inference_seconds: Optional[float] = None
    speedup: Optional[float] = None


@dataclass
class ProjectionRow:
    cadence_minutes: float
    runs_per_shift: int
    solver_seconds: float
    surrogate_seconds: Optional[float] = None


def _parse(value: str, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        if value == "":
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if tp is bool:
        return value == "True"
    return tp(value)


def write_rows(path, rows: Sequence, cls: Type = None) -> None:
    cls = cls or type(rows[0])
    names = [f.name for f in dataclasses.fields(cls)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            w.writerow(["" if getattr(r, n) is None else getattr(r, n) for n in names])


def read_rows(path, cls: Type[T]) -> List[T]:
    hints = typing.get_type_hints(cls)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = [f.name for f in dataclasses.fields(cls)]
        if reader.fieldnames != names:
            raise ValueError(f"{path}: header {reader.fieldnames} does not match {cls.__name__}")
        return [cls(**{k: _parse(v, hints[k]) for k, v in row.items()}) for row in reader]
