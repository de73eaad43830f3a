"""Test-set metrics and the CSV record schema."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from ..losses import spo_loss_batch
from ..regions import FeasibleRegion, optimal_values, solve_batch

DENOM_GUARD = 1e-9
ANCHOR_N = 100
METRICS = ("normalized_spo", "spo", "excess_risk", "normalized_excess_risk")


def normalized_spo_loss(region: FeasibleRegion, predictions, costs) -> Optional[float]:
    """Total SPO loss over total hindsight-optimal cost; None when that total is ~0."""
    C = np.asarray(costs, dtype=float)
    denom = float(np.sum(optimal_values(region, C)))
    if abs(denom) <= DENOM_GUARD:
        return None
    return float(np.sum(spo_loss_batch(region, predictions, C))) / denom


def mean_spo_loss(region: FeasibleRegion, predictions, costs) -> float:
    return float(np.mean(spo_loss_batch(region, predictions, costs)))


def excess_spo_risk_known_mean(region: FeasibleRegion, predictions, cond_means) -> float:
    """Mean over test points of c_bar(x)^T (w*(g(x)) - w*(c_bar(x))).

    Exact conditional excess risk when the generator's conditional mean is known.
    """
    M = np.asarray(cond_means, dtype=float)
    gap = np.einsum("ij,ij->i", M, solve_batch(region, predictions).w - solve_batch(region, M).w)
    return float(np.mean(np.maximum(gap, 0.0)))


def normalized_excess_risk(curve: Mapping[int, float], anchor: int = ANCHOR_N) -> dict:
    if anchor not in curve:
        raise KeyError(f"curve has no anchor point n = {anchor}")
    base = curve[anchor]
    return {n: (v / base if base != 0 else math.nan) for n, v in curve.items()}


def loglog_slope(ns: Iterable[float], values: Iterable[float]) -> float:
    """Least-squares slope of log(value) against log(n)."""
    x = np.log(np.asarray(list(ns), dtype=float))
    y = np.log(np.asarray(list(values), dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass(frozen=True)
class MetricsRecord:
    trial: int  # -1 for rows aggregated over trials
    seed: int
    region: str
    loss: str
    n_train: int
    deg: int
    noise: float
    metric_name: str
    value: float


RECORD_FIELDS = tuple(f.name for f in fields(MetricsRecord))


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def write_records(path, records: Iterable[MetricsRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for rec in records:
            w.writerow([_cell(v) for v in astuple(rec)])
    return path


def read_records(path) -> list[MetricsRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(int(row["trial"]), int(row["seed"]), row["region"], row["loss"],
                                     int(row["n_train"]), int(row["deg"]), float(row["noise"]),
                                     row["metric_name"], float(row["value"])))
    return out
