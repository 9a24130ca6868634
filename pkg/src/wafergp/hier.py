"""Site-based hierarchical GP: one independent GP per probe-card site.

The grouping machinery is shared with the two-step baseline, which groups
dies by a value-derived cluster label instead of by site.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .gp import (
    VAR_FLOOR,
    DegenerateTargetsWarning,
    GPModel,
    GPOptions,
    KernelParams,
    PredictionResult,
    fit_hyperparameters,
    gp_fit,
    gp_predict,
    small_sample_params,
)
from .wafer import MeasurementSet, Tiling, TilingError


class UndertrainedGroupError(ValueError):
    pass


@dataclass(frozen=True)
class SitePartition:
    """Train / test indices per group.  Index arrays point into the inputs."""

    site_count: int
    train_idx: dict[int, np.ndarray]
    test_idx: dict[int, np.ndarray]

    @property
    def empty_train(self) -> list[int]:
        """Groups that have test points but no training points."""
        return [s for s in range(self.site_count)
                if len(self.train_idx[s]) == 0 and len(self.test_idx[s]) > 0]


def partition_by_labels(train_labels, test_labels, n_groups: int) -> SitePartition:
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    return SitePartition(
        n_groups,
        {g: np.flatnonzero(train_labels == g) for g in range(n_groups)},
        {g: np.flatnonzero(test_labels == g) for g in range(n_groups)},
    )


def partition_by_site(train: MeasurementSet, test_coords, tiling: Tiling) -> SitePartition:
    """Group training records and test coordinates by the site that probes them."""
    test_coords = np.asarray(test_coords, dtype=np.int64).reshape(-1, 2)
    train_sites = tiling.die_site[tiling.die_indices(train.coords)]
    if np.any(train_sites != train.sites):
        raise TilingError("training record site disagrees with tiling")
    test_sites = tiling.die_site[tiling.die_indices(test_coords)]
    return partition_by_labels(train_sites, test_sites, tiling.layout.site_count)


@dataclass
class GroupedModel:
    """Per-group fitted GPs plus the global fallback used for thin groups."""

    models: dict[int, GPModel]
    global_mean: float
    global_params: KernelParams
    min_train: int
    n_groups: int
    degenerate: list[int] = field(default_factory=list)
    borrowed: list[int] = field(default_factory=list)

    @property
    def fallback_var(self) -> float:
        return self.global_params.theta1

    def params_for(self, g: int) -> KernelParams:
        """Hyperparameters to freeze for group `g` (global ones if never fitted)."""
        m = self.models.get(g)
        return m.params if m is not None else self.global_params


def _quiet_fit(X, y, opts):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateTargetsWarning)
        p = fit_hyperparameters(X, y, opts)
    return p, any(issubclass(w.category, DegenerateTargetsWarning) for w in caught)


def global_params(X, y, opts: GPOptions) -> KernelParams:
    """Hyperparameters of a single GP over all training data."""
    y = np.asarray(y, dtype=float)
    if len(y) >= 3:
        return _quiet_fit(X, y, opts)[0]
    return small_sample_params(y, opts)


def fit_grouped(X, y, labels, n_groups: int, opts: GPOptions | None = None,
                frozen: dict[int, KernelParams] | None = None,
                frozen_global: KernelParams | None = None,
                needed=None) -> GroupedModel:
    """Fit one GP per group.

    Groups with at least ``opts.min_train_per_site`` points get their own
    hyperparameter search.  Thinner groups either borrow the global
    hyperparameters or are left to the global-mean fallback, per
    ``opts.thin_sites``.  `frozen` maps group -> hyperparameters to reuse
    instead of searching; `frozen_global` replaces the global fit and is
    used for every group missing from `frozen`.  Only groups in `needed`
    are fitted (all by default).
    """
    opts = opts or GPOptions()
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float)
    labels = np.asarray(labels)
    groups = range(n_groups) if needed is None else sorted(set(int(g) for g in needed))
    gparams = frozen_global
    models: dict[int, GPModel] = {}
    degenerate: list[int] = []
    borrowed: list[int] = []
    for g in groups:
        idx = np.flatnonzero(labels == g)
        thin = len(idx) < opts.min_train_per_site
        if len(idx) == 0 or (thin and opts.thin_sites == "mean"):
            continue
        if frozen is not None and g in frozen:
            p = frozen[g]
        elif frozen_global is None and not thin:
            p, deg = _quiet_fit(X[idx], y[idx], opts)
            if deg:
                degenerate.append(g)
        else:
            if gparams is None:
                gparams = global_params(X, y, opts)
            p = gparams
            if thin:
                borrowed.append(g)
        models[g] = gp_fit(X[idx], y[idx], p, opts)

    if gparams is None:
        if any(g not in models for g in groups):
            gparams = global_params(X, y, opts)
        else:
            gparams = KernelParams(max(float(np.var(y)) if len(y) else 0.0, VAR_FLOOR),
                                   opts.theta2_init, opts.nugget_floor)
    gmean = float(y.mean()) if len(y) else 0.0
    return GroupedModel(models, gmean, gparams, opts.min_train_per_site, n_groups,
                        degenerate, borrowed)


def predict_grouped(gm: GroupedModel, X_test, test_labels, fallback: bool = True) -> PredictionResult:
    """Predict each test point with its own group's model, keeping input order."""
    X_test = np.asarray(X_test).reshape(-1, 2)
    test_labels = np.asarray(test_labels)
    mu = np.empty(len(X_test))
    var = np.empty(len(X_test))
    fell_back = []
    for g in np.unique(test_labels).tolist():
        idx = np.flatnonzero(test_labels == g)
        model = gm.models.get(g)
        if model is None:
            if not fallback:
                raise UndertrainedGroupError(f"undertrained site {g}")
            mu[idx] = gm.global_mean
            var[idx] = gm.fallback_var
            fell_back.append(int(g))
            continue
        pr = gp_predict(model, X_test[idx])
        mu[idx] = pr.means
        var[idx] = pr.variances
    meta = {
        "fallback_groups": fell_back,
        "borrowed_groups": list(gm.borrowed),
        "degenerate_groups": list(gm.degenerate),
        "params": {g: m.params for g, m in gm.models.items()},
    }
    return PredictionResult(X_test, mu, var, meta)


def grouped_gpr(X_train, y_train, train_labels, X_test, test_labels, n_groups: int,
                opts: GPOptions | None = None,
                frozen: dict[int, KernelParams] | None = None,
                frozen_global: KernelParams | None = None) -> tuple[PredictionResult, GroupedModel]:
    opts = opts or GPOptions()
    test_labels = np.asarray(test_labels)
    needed = np.unique(test_labels).tolist()
    if not opts.fallback:
        counts = np.bincount(np.asarray(train_labels, dtype=np.int64).reshape(-1), minlength=n_groups)
        for g in needed:
            if counts[g] < opts.min_train_per_site:
                raise UndertrainedGroupError(f"undertrained site {g}")
    gm = fit_grouped(X_train, y_train, train_labels, n_groups, opts, frozen, frozen_global, needed)
    return predict_grouped(gm, X_test, test_labels, opts.fallback), gm


def hgpr(train: MeasurementSet, test_coords, tiling: Tiling,
         opts: GPOptions | None = None, **kw) -> PredictionResult:
    """Site-hierarchical prediction at `test_coords` (output in input order)."""
    test_coords = np.asarray(test_coords, dtype=np.int64).reshape(-1, 2)
    test_sites = tiling.die_site[tiling.die_indices(test_coords)]
    train_sites = tiling.die_site[tiling.die_indices(train.coords)]
    if np.any(train_sites != train.sites):
        raise TilingError("training record site disagrees with tiling")
    pred, _ = grouped_gpr(train.coords, train.values, train_sites, test_coords, test_sites,
                          tiling.layout.site_count, opts, **kw)
    return pred
