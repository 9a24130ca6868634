"""Shared experiment plumbing for the CLI, the scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import ClusterMap, naive_gp, two_step_calibrate, two_step_predict
from .gp import GPOptions, PredictionResult
from .hier import hgpr
from .metrics import ErrorReport, delta_error, timed
from .synth import SynthConfig, generate_wafer
from .wafer import MeasurementSet, Tiling, build_tiling

METHODS = ("naive", "2step", "site-hier")


def sample_order(n: int, seed: int) -> np.ndarray:
    """Seeded permutation of record indices; training sets are its prefixes."""
    return np.random.default_rng(seed).permutation(n)


def n_train_for(n: int, rate: float) -> int:
    if not 0.0 < rate <= 1.0:
        raise ValueError("rate out of range (0, 1]")
    return max(1, min(n, int(round(rate * n))))


def split(truth: MeasurementSet, rate: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, test indices), both sorted.  Nested across rates for a seed."""
    order = sample_order(len(truth), seed)
    k = n_train_for(len(truth), rate)
    return np.sort(order[:k]), np.sort(order[k:])


def predict(method: str, train: MeasurementSet, test_coords, tiling: Tiling,
            opts: GPOptions | None = None, cluster_map: ClusterMap | None = None) -> PredictionResult:
    if method == "naive":
        return naive_gp(train, test_coords, opts)
    if method == "site-hier":
        return hgpr(train, test_coords, tiling, opts)
    if method == "2step":
        if cluster_map is None:
            raise ValueError("method 2step requires a cluster map")
        return two_step_predict(cluster_map, train, test_coords, opts)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class RunResult:
    method: str
    rate: float
    seed: int
    lot: int
    report: ErrorReport | None
    prediction: PredictionResult | None
    test_idx: np.ndarray
    wall_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def mean_abs(self) -> float:
        return 0.0 if self.report is None else self.report.mean_abs


def run_method(method: str, truth: MeasurementSet, tiling: Tiling, rate: float, seed: int,
               opts: GPOptions | None = None, cluster_map: ClusterMap | None = None) -> RunResult:
    """Sample, predict the unsampled dies and score them against the truth.

    At rate 1.0 nothing is left to predict and the error is zero by convention.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method == "2step" and cluster_map is None:
        raise ValueError("method 2step requires a cluster map")
    tr, te = split(truth, rate, seed)
    if len(te) == 0:
        return RunResult(method, rate, seed, truth.lot, None, None, te)
    train = truth.subset(tr)
    pred, secs = timed(predict, method, train, truth.coords[te], tiling, opts, cluster_map)
    rep = delta_error(pred, truth.values[te], truth.value_range())
    return RunResult(method, rate, seed, truth.lot, rep, pred, te, secs)


def lot_wafers(cfg: SynthConfig, lots) -> dict[int, MeasurementSet]:
    return {lot: generate_wafer(cfg, lot, 1) for lot in lots}


def compare_methods(cfg: SynthConfig, lot: int = 6, rate: float = 0.1, seeds=range(5),
                    opts: GPOptions | None = None, methods=METHODS, calib_lot: int = 1,
                    criterion: str = "ch") -> dict[str, list[RunResult]]:
    """Every method on one wafer for several sampling seeds; 2-step is calibrated on `calib_lot`."""
    tiling = build_tiling(cfg.geometry, cfg.layout)
    truth = generate_wafer(cfg, lot, 1)
    cmap = None
    if "2step" in methods:
        cmap = two_step_calibrate(generate_wafer(cfg, calib_lot, 1), criterion=criterion)
    return {m: [run_method(m, truth, tiling, rate, s, opts, cmap) for s in seeds] for m in methods}


def lot_sweep(cfg: SynthConfig, lots=range(1, 7), rate: float = 0.1, seed: int = 0,
              opts: GPOptions | None = None, methods=METHODS,
              criterion: str = "ch") -> dict[str, dict[int, RunResult]]:
    tiling = build_tiling(cfg.geometry, cfg.layout)
    wafers = lot_wafers(cfg, lots)
    cmap = None
    if "2step" in methods:
        first = wafers[min(wafers)] if 1 not in wafers else wafers[1]
        cmap = two_step_calibrate(first, criterion=criterion)
    return {m: {lot: run_method(m, w, tiling, rate, seed, opts, cmap) for lot, w in wafers.items()}
            for m in methods}


def rate_sweep(cfg: SynthConfig, lot: int = 6, rates=tuple(r / 10 for r in range(1, 10)),
               seed: int = 0, opts: GPOptions | None = None, methods=METHODS,
               criterion: str = "ch") -> dict[str, dict[float, RunResult]]:
    tiling = build_tiling(cfg.geometry, cfg.layout)
    truth = generate_wafer(cfg, lot, 1)
    cmap = None
    if "2step" in methods:
        cmap = two_step_calibrate(generate_wafer(cfg, 1, 1), criterion=criterion)
    return {m: {r: run_method(m, truth, tiling, r, seed, opts, cmap) for r in rates} for m in methods}


def runtime_pair(n: int = 2048, sites: int = 16, seed: int = 0,
                 opts: GPOptions | None = None) -> dict[str, float]:
    """Wall seconds of naive vs site-hier fit+predict with `n` training points.

    Points are drawn from a grid large enough to hold them; site labels are
    assigned round-robin so every site holds n / sites points.
    """
    from .gp import gpr
    from .hier import grouped_gpr

    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(2 * n)))
    grid = np.stack(np.meshgrid(np.arange(side), np.arange(side)), -1).reshape(-1, 2)
    pick = rng.choice(len(grid), size=n + n // 8, replace=False)
    X = grid[pick[:n]].astype(float)
    Xt = grid[pick[n:]].astype(float)
    labels = np.arange(n) % sites
    tlabels = np.arange(len(Xt)) % sites
    y = 0.05 * np.sin(X[:, 0] / 9) + 0.1 * labels + 0.004 * rng.standard_normal(n)
    _, t_naive = timed(gpr, X, y, Xt, opts)
    _, t_hier = timed(grouped_gpr, X, y, labels, Xt, tlabels, sites, opts)
    return {"naive": t_naive, "site-hier": t_hier, "n": n, "sites": sites}
