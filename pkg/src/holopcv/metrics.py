"""Reconstruction accuracy and QoE.

QoE combines two indicators with a harmonic mean: the reconstruction F-score
(itself a harmonic mean of precision and recall) and timeliness, the ratio of
the frame deadline to the time the frame actually took.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_TAU = 0.05
DEFAULT_T_BUDGET = 1.0 / 30.0


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class AccuracyReport:
    precision: float
    recall: float
    fscore: float
    chamfer: float
    emd: float | None
    tau: float


@dataclass(frozen=True)
class QoEReport:
    accuracy: float
    timeliness: float
    qoe: float
    t_total: float
    t_budget: float


def harmonic(a: float, b: float) -> float:
    # reciprocal form: every step rounds monotonically, so the result is
    # monotone in each argument even for subnormal inputs
    if a <= 0 or b <= 0:
        return 0.0
    return 2.0 / (1.0 / a + 1.0 / b)


def _check_sets(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise MetricError("point sets must be nonempty")
    return a, b


def _nn_dists(a, b):
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return d_ab, d_ba


def chamfer(a, b) -> float:
    """Mean NN distance a->b plus mean NN distance b->a (unsquared)."""
    a, b = _check_sets(a, b)
    d_ab, d_ba = _nn_dists(a, b)
    return float(d_ab.mean() + d_ba.mean())


def precision_recall_f(reconstructed, truth, tau: float = DEFAULT_TAU,
                       with_emd: bool = False) -> AccuracyReport:
    if not tau > 0:
        raise MetricError(f"tau must be positive, got {tau}")
    rec, tru = _check_sets(reconstructed, truth)
    d_rt, d_tr = _nn_dists(rec, tru)
    p = float(np.mean(d_rt <= tau))
    r = float(np.mean(d_tr <= tau))
    e = None
    if with_emd and len(rec) == len(tru):
        from .codec.emd import emd as _emd

        e = _emd(rec, tru)[0]
    return AccuracyReport(p, r, harmonic(p, r), float(d_rt.mean() + d_tr.mean()), e, tau)


def qoe(accuracy_f: float, t_total: float, t_budget: float = DEFAULT_T_BUDGET) -> QoEReport:
    if not t_total > 0 or not t_budget > 0:
        raise MetricError("t_total and t_budget must be positive")
    if not 0.0 <= accuracy_f <= 1.0:
        raise MetricError(f"accuracy must lie in [0, 1], got {accuracy_f}")
    t = min(1.0, t_budget / t_total)
    return QoEReport(accuracy_f, t, harmonic(accuracy_f, t), t_total, t_budget)


def raw_rate(points_per_frame: float, fps: float, bytes_per_point: float) -> float:
    """Uncompressed stream rate in bits per second."""
    if min(points_per_frame, fps, bytes_per_point) <= 0:
        raise MetricError("all arguments must be positive")
    return 8.0 * points_per_frame * fps * bytes_per_point


ACCURACY_COLUMNS = [f.name for f in fields(AccuracyReport)]
QOE_COLUMNS = [f.name for f in fields(QoEReport)]


def csv_value(v):
    """Shortest round-tripping text for numbers (numpy scalars included)."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_reports_csv(path, reports: Iterable) -> None:
    """One flat row per report, columns in dataclass field order."""
    reports = list(reports)
    if not reports:
        raise MetricError("no reports to write")
    cols = [f.name for f in fields(reports[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rep in reports:
            row = asdict(rep)
            w.writerow([csv_value(row[c]) for c in cols])
