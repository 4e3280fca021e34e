"""Per-step records, whole-run trajectories, and their file formats.

A trajectory serializes to JSONL (one step record per line, stable field
order, ``null`` for unmeasured values) plus a one-row summary CSV. Both
are deterministic functions of the run, so re-running a seeded config
reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ContractError
from .graphs import Array

NAN = float("nan")


@dataclass
class StepTrace:
    """Measurements of one optimizer step; nan marks unmeasured/undefined."""

    t: int
    stepsize: float
    step_scale: float
    alignment_factor: float = NAN
    grad_norm: float = NAN
    masked_grad_norm: float = NAN
    masked_pert_grad_norm: float = NAN
    inner: float = NAN
    norm_ratio: float = NAN
    sim_ratio: float = NAN
    align_ratio: float = NAN
    mask_active: int = 0
    perturbation_ratio: float = NAN
    loss_before: float = NAN
    loss_after: float = NAN
    descent_residual: float = NAN

    def to_json(self) -> str:
        row = {}
        for key, value in asdict(self).items():
            if isinstance(value, float) and math.isnan(value):
                row[key] = None
            else:
                row[key] = value
        return json.dumps(row)

    @classmethod
    def from_json(cls, line: str) -> "StepTrace":
        raw = json.loads(line)
        kwargs = {f.name: (NAN if raw.get(f.name) is None else raw[f.name]) for f in fields(cls)}
        return cls(**kwargs)


FIELD_NAMES = tuple(f.name for f in fields(StepTrace))


@dataclass
class Trajectory:
    """Ordered step traces plus run-level summary statistics."""

    traces: list[StepTrace]
    summary: dict
    final_params: Array
    meta: dict = field(default_factory=dict)

    def write_jsonl(self, path):
        with open(path, "w", newline="") as fh:
            for tr in self.traces:
                fh.write(tr.to_json())
                fh.write("\n")

    def write_summary_csv(self, path):
        keys = list(self.summary.keys())
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys)
            writer.writerow([_csv_value(self.summary[k]) for k in keys])


def _csv_value(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def read_jsonl(path) -> list[StepTrace]:
    with open(path) as fh:
        return [StepTrace.from_json(line) for line in fh if line.strip()]


def write_series_csv(path, series: dict[str, Array]):
    """Column-per-series CSV with a fixed header order."""
    if not series:
        raise ContractError("no series to write")
    keys = list(series.keys())
    length = len(next(iter(series.values())))
    if any(len(series[k]) != length for k in keys):
        raise ContractError("series lengths differ")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for i in range(length):
            writer.writerow([_csv_value(float(series[k][i])) for k in keys])
