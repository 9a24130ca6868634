"""Range-normalised prediction error, box-plot summaries and timing."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

QUANTILE_KEYS = ("min", "q25", "median", "q75", "max")


@dataclass(frozen=True)
class ErrorReport:
    deltas: np.ndarray
    d_spec: float
    mean_abs: float
    max_abs: float
    mean: float
    quantiles: dict

    def to_dict(self) -> dict:
        return {
            "n": int(len(self.deltas)),
            "d_spec": self.d_spec,
            "mean_abs_delta": self.mean_abs,
            "max_abs_delta": self.max_abs,
            "mean_delta": self.mean,
            "quantiles": dict(self.quantiles),
        }


def _quantiles(x: np.ndarray) -> dict:
    # linear interpolation between order statistics, endpoints inclusive
    if len(x) == 0:
        return {k: 0.0 for k in QUANTILE_KEYS}
    q = np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return dict(zip(QUANTILE_KEYS, (float(v) for v in q)))


def delta_error(pred, truth, d_spec: float) -> ErrorReport:
    """Signed errors ``(mu - truth) / d_spec``.

    `d_spec` must be the value range of the fully measured wafer, not of the
    test subset.  `pred` may be a PredictionResult or a plain mean vector.
    """
    mu = np.asarray(getattr(pred, "means", pred), dtype=float)
    truth = np.asarray(truth, dtype=float)
    if mu.shape != truth.shape:
        raise ValueError("prediction and truth must align")
    if not d_spec > 0:
        raise ValueError("degenerate spec range")
    deltas = (mu - truth) / d_spec
    a = np.abs(deltas)
    return ErrorReport(
        deltas,
        float(d_spec),
        float(a.mean()) if len(a) else 0.0,
        float(a.max()) if len(a) else 0.0,
        float(deltas.mean()) if len(a) else 0.0,
        _quantiles(deltas),
    )


def summary_stats(reports: Sequence[ErrorReport], group_keys: Sequence[Any] | None = None) -> list[dict]:
    """Box-plot statistics per group, averaged over the reports in the group.

    Each row carries max, q75, median, mean, q25, min of the signed deltas
    plus the mean |delta|.  Rows come out in first-seen group order.
    """
    if not reports:
        raise ValueError("no reports to summarise")
    keys = list(group_keys) if group_keys is not None else [None] * len(reports)
    if len(keys) != len(reports):
        raise ValueError("one group key per report")
    rows: dict = {}
    for key, rep in zip(keys, reports):
        rows.setdefault(key, []).append(rep)
    out = []
    for key, reps in rows.items():
        row = {"group": key, "count": len(reps)}
        for q in QUANTILE_KEYS:
            row[q] = float(np.mean([r.quantiles[q] for r in reps]))
        row["mean"] = float(np.mean([r.mean for r in reps]))
        row["mean_abs"] = float(np.mean([r.mean_abs for r in reps]))
        out.append(row)
    return out


def timed(fn: Callable, *args, **kwargs) -> tuple[Any, float]:
    """Run ``fn(*args, **kwargs)``; return (result, wall seconds)."""
    t0 = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - t0
