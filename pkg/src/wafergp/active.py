"""Touchdown-level sequential sampling driven by the site-hierarchical GP.

Each step scores every untouched touchdown by how far it would move the
posterior-variance vector over the unmeasured dies if its dies were
measured at their currently predicted means, and measures the best one.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .gp import GPOptions, PredictionResult, gp_fit, gp_predict, posterior_covariance
from .hier import GroupedModel, fit_grouped, grouped_gpr
from .metrics import delta_error
from .wafer import MeasurementSet, Tiling

TIE_RTOL = 1e-12


class CampaignComplete(RuntimeError):
    pass


def mse_decomposition(pred, truth) -> tuple[float, float, float]:
    """(||v|| + ||mu - y||**2, ||v||, ||mu - y||**2) with Euclidean norms."""
    mu = np.asarray(pred.means, dtype=float)
    v = np.asarray(pred.variances, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if not (len(mu) == len(v) == len(truth)):
        raise ValueError("length mismatch")
    var_term = float(np.linalg.norm(v))
    bias_term = float(np.sum((mu - truth) ** 2))
    return var_term + bias_term, var_term, bias_term


@dataclass(frozen=True)
class CandidateScore:
    anchor: tuple[int, int]
    delta_var: float
    pseudo_points: list  # [((x, y), mu), ...]


@dataclass
class CampaignState:
    """Measured / unmeasured split of a ground-truth wafer plus current fit.

    Indices refer to records of `truth`.  `prediction` covers the unmeasured
    records in ascending index order.
    """

    truth: MeasurementSet
    tiling: Tiling
    measured: np.ndarray  # bool mask over truth records
    remaining: list  # anchor indices (into tiling.anchors) with unmeasured dies
    prediction: PredictionResult
    model: GroupedModel
    step: int
    record_anchor: np.ndarray = field(repr=False)

    @property
    def unmeasured_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.measured)

    @property
    def measured_set(self) -> MeasurementSet:
        return self.truth.subset(np.flatnonzero(self.measured))

    def anchor_records(self, p: int) -> np.ndarray:
        """Unmeasured truth records probed by anchor index `p`."""
        return np.flatnonzero((self.record_anchor == p) & ~self.measured)


def _fit_state(truth, tiling, measured, record_anchor, opts, step) -> CampaignState:
    opts = opts or GPOptions()
    m_idx = np.flatnonzero(measured)
    u_idx = np.flatnonzero(~measured)
    sites = truth.sites
    if len(u_idx):
        pred, gm = grouped_gpr(truth.coords[m_idx], truth.values[m_idx], sites[m_idx],
                               truth.coords[u_idx], sites[u_idx], tiling.layout.site_count, opts)
    else:
        gm = fit_grouped(truth.coords[m_idx], truth.values[m_idx], sites[m_idx],
                         tiling.layout.site_count, opts, needed=[])
        pred = PredictionResult(np.zeros((0, 2), dtype=np.int64), np.zeros(0), np.zeros(0))
    remaining = sorted(set(record_anchor[u_idx].tolist()))
    return CampaignState(truth, tiling, measured, remaining, pred, gm, step, record_anchor)


def start_state(truth: MeasurementSet, tiling: Tiling, measured_anchors=(), opts=None,
                measured_mask=None) -> CampaignState:
    """State with the dies under `measured_anchors` (anchor indices) measured."""
    record_anchor = tiling.die_anchor[tiling.die_indices(truth.coords)]
    if measured_mask is None:
        measured = np.isin(record_anchor, np.asarray(list(measured_anchors), dtype=np.int64))
    else:
        measured = np.asarray(measured_mask, dtype=bool).copy()
    return _fit_state(truth, tiling, measured, record_anchor, opts, len(list(measured_anchors)))


def measure(state: CampaignState, p: int, opts=None) -> CampaignState:
    if p not in state.remaining:
        raise ValueError(f"anchor {tuple(state.tiling.anchors[p])} already measured")
    measured = state.measured.copy()
    measured[state.anchor_records(p)] = True
    return _fit_state(state.truth, state.tiling, measured, state.record_anchor, opts, state.step + 1)


# ---------------------------------------------------------------------------
# scoring


def _site_contributions(state: CampaignState, opts: GPOptions) -> np.ndarray:
    """Squared variance change contributed by measuring each unmeasured record.

    Entry j is sum over the other unmeasured dies x of the same site of
    (v(x) - v_new(x))**2 when record j is added with frozen hyperparameters.
    Sites with a model use the rank-one update of the posterior covariance;
    sites without one only change if the extra point gives them a model.
    """
    truth = state.truth
    u_idx = state.unmeasured_idx
    pos = {int(i): k for k, i in enumerate(u_idx)}
    out = np.zeros(len(truth))
    gm = state.model
    counts = np.bincount(truth.sites[state.measured], minlength=gm.n_groups)
    need = 1 if opts.thin_sites == "borrow" else gm.min_train
    for s in np.unique(truth.sites[u_idx]).tolist():
        T = u_idx[truth.sites[u_idx] == s]
        model = gm.models.get(s)
        if model is not None:
            C = posterior_covariance(model, truth.coords[T])
            cdiag = np.diag(C)
            denom = (cdiag + model.params.nugget) ** 2
            out[T] = ((C**4).sum(axis=0) - cdiag**4) / denom
        elif counts[s] + 1 >= need:
            m_s = np.flatnonzero(state.measured & (truth.sites == s))
            v_now = state.prediction.variances[[pos[int(t)] for t in T]]
            for j, t in enumerate(T):
                X = np.vstack([truth.coords[m_s], truth.coords[t]])
                y = np.zeros(len(X))  # variance does not depend on targets
                mdl = gp_fit(X, y, gm.global_params, opts)
                others = np.delete(T, j)
                if len(others) == 0:
                    continue
                vp = gp_predict(mdl, truth.coords[others]).variances
                out[t] = float(np.sum((np.delete(v_now, j) - vp) ** 2))
    return out


def _pseudo(state: CampaignState, recs) -> list:
    pos = {int(i): k for k, i in enumerate(state.unmeasured_idx)}
    return [((int(state.truth.coords[r, 0]), int(state.truth.coords[r, 1])),
             float(state.prediction.means[pos[int(r)]])) for r in recs]


def _exact_delta(state: CampaignState, recs, opts: GPOptions, refit: bool) -> float:
    truth = state.truth
    u_idx = state.unmeasured_idx
    pos = {int(i): k for k, i in enumerate(u_idx)}
    m_idx = np.flatnonzero(state.measured)
    keep = np.setdiff1d(u_idx, recs)
    if len(keep) == 0:
        return 0.0
    X_tr = np.vstack([truth.coords[m_idx], truth.coords[recs]])
    y_tr = np.concatenate([truth.values[m_idx], state.prediction.means[[pos[int(r)] for r in recs]]])
    s_tr = np.concatenate([truth.sites[m_idx], truth.sites[recs]])
    kw = {}
    if not refit:
        kw = {"frozen": {g: m.params for g, m in state.model.models.items()},
              "frozen_global": state.model.global_params}
    pred, _ = grouped_gpr(X_tr, y_tr, s_tr, truth.coords[keep], truth.sites[keep],
                          state.model.n_groups, opts, **kw)
    v_now = state.prediction.variances[[pos[int(k)] for k in keep]]
    return float(np.linalg.norm(v_now - pred.variances))


def score_candidate(state: CampaignState, anchor, opts: GPOptions | None = None,
                    mode: str = "fast") -> CandidateScore:
    """Variance-change score of one touchdown.

    `anchor` is an anchor index or an (x, y) anchor coordinate.  `mode` is
    ``fast`` (rank-one update), ``frozen`` (re-run the hierarchical GP with
    frozen hyperparameters) or ``refit`` (re-run with a fresh search).
    """
    opts = opts or GPOptions()
    p = _anchor_index(state.tiling, anchor)
    if p not in state.remaining:
        raise ValueError(f"anchor {tuple(state.tiling.anchors[p])} already measured")
    recs = state.anchor_records(p)
    if mode == "fast":
        delta = float(np.sqrt(_site_contributions(state, opts)[recs].sum()))
    elif mode in ("frozen", "refit"):
        delta = _exact_delta(state, recs, opts, refit=mode == "refit")
    else:
        raise ValueError(f"unknown scoring mode {mode!r}")
    a = state.tiling.anchors[p]
    return CandidateScore((int(a[0]), int(a[1])), delta, _pseudo(state, recs))


def score_all(state: CampaignState, opts: GPOptions | None = None, mode: str = "fast") -> dict[int, float]:
    """delta_var for every remaining anchor index."""
    opts = opts or GPOptions()
    if mode == "fast":
        contrib = _site_contributions(state, opts)
        out = {}
        for p in state.remaining:
            out[p] = float(np.sqrt(contrib[state.anchor_records(p)].sum()))
        return out
    return {p: score_candidate(state, p, opts, mode).delta_var for p in state.remaining}


def _argmax_anchor(tiling: Tiling, scores: dict[int, float]) -> int:
    best = max(scores.values())
    tied = [p for p, s in scores.items() if s >= best - TIE_RTOL * abs(best)]
    return min(tied, key=lambda p: (int(tiling.anchors[p, 1]), int(tiling.anchors[p, 0])))


def select_next_touchdown(state: CampaignState, opts: GPOptions | None = None,
                          mode: str = "fast") -> tuple[int, int]:
    """Anchor with the largest delta_var; ties go to the smaller (y, x)."""
    if not state.remaining:
        raise CampaignComplete("campaign complete")
    if len(state.remaining) == 1:
        p = state.remaining[0]
    else:
        p = _argmax_anchor(state.tiling, score_all(state, opts, mode))
    a = state.tiling.anchors[p]
    return (int(a[0]), int(a[1]))


def _anchor_index(tiling: Tiling, anchor) -> int:
    if isinstance(anchor, (int, np.integer)):
        return int(anchor)
    x, y = int(anchor[0]), int(anchor[1])
    hit = np.flatnonzero((tiling.anchors[:, 0] == x) & (tiling.anchors[:, 1] == y))
    if not len(hit):
        raise ValueError(f"{(x, y)} is not a touchdown anchor")
    return int(hit[0])


# ---------------------------------------------------------------------------
# campaigns


LOG_COLUMNS = ["step", "anchor_x", "anchor_y", "mean_abs_delta", "max_abs_delta",
               "var_norm", "strategy", "seed"]


@dataclass
class CampaignLog:
    strategy: str
    seed: int
    rows: list = field(default_factory=list)
    truncated: bool = False
    wall_seconds: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def steps_to_reach(self, threshold: float) -> int | None:
        """Touchdown count at which mean |delta| first drops to `threshold`."""
        for r in self.rows:
            if r["mean_abs_delta"] <= threshold:
                return r["step"] + 1
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([r["step"], r["anchor_x"], r["anchor_y"], repr(r["mean_abs_delta"]),
                        repr(r["max_abs_delta"]), repr(r["var_norm"]), self.strategy, self.seed])
        return buf.getvalue()


def _log_row(state: CampaignState, p: int, d_spec: float) -> dict:
    u = state.unmeasured_idx
    if len(u):
        rep = delta_error(state.prediction, state.truth.values[u], d_spec)
        mean_abs, max_abs = rep.mean_abs, rep.max_abs
        vnorm = float(np.linalg.norm(state.prediction.variances))
    else:
        mean_abs = max_abs = vnorm = 0.0
    a = state.tiling.anchors[p]
    return {"step": state.step - 1, "anchor_x": int(a[0]), "anchor_y": int(a[1]),
            "mean_abs_delta": mean_abs, "max_abs_delta": max_abs, "var_norm": vnorm}


def run_campaign(truth: MeasurementSet, tiling: Tiling, strategy: str = "active", budget: int = 50,
                 seed: int = 0, opts: GPOptions | None = None, stop_var_norm: float | None = None,
                 mode: str = "fast") -> CampaignLog:
    """Measure `budget` touchdowns, the first one chosen at random.

    The random bootstrap touchdown depends only on `seed`, so active and
    random campaigns with the same seed share their first step.
    """
    if strategy not in ("active", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    opts = opts or GPOptions()
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    d_spec = truth.value_range()
    log = CampaignLog(strategy, seed)

    state = start_state(truth, tiling, (), opts, measured_mask=np.zeros(len(truth), dtype=bool))
    total = len(state.remaining)
    if budget > total:
        log.truncated = True
        budget = total
    p = state.remaining[int(rng.integers(len(state.remaining)))]
    for _ in range(budget):
        state = measure(state, p, opts)
        log.rows.append(_log_row(state, p, d_spec))
        if not state.remaining:
            break
        if stop_var_norm is not None and log.rows[-1]["var_norm"] <= stop_var_norm:
            break
        if strategy == "random":
            p = state.remaining[int(rng.integers(len(state.remaining)))]
        else:
            scores = score_all(state, opts, mode) if len(state.remaining) > 1 else {state.remaining[0]: 0.0}
            p = _argmax_anchor(tiling, scores)
    log.wall_seconds = time.perf_counter() - t0
    return log
