"""Gaussian-process regression with an RBF kernel on die coordinates.

The kernel is ``theta1 * exp(-|a - b|**2 / theta2)``; a nugget on the Gram
diagonal absorbs measurement noise and keeps the factorisation stable.
Hyperparameters maximise the log marginal likelihood via a coarse log
grid followed by coordinate-wise golden-section refinement.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, eigh, solve_triangular
from scipy.spatial.distance import cdist, pdist

NUGGET_FLOOR = 1e-8
VAR_FLOOR = 1e-8


class IllConditionedGram(np.linalg.LinAlgError):
    pass


class DegenerateTargetsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KernelParams:
    theta1: float
    theta2: float
    nugget: float = NUGGET_FLOOR

    def __post_init__(self):
        if not (self.theta1 > 0 and self.theta2 > 0):
            raise ValueError("theta1 and theta2 must be strictly positive")
        if not self.nugget >= 0:
            raise ValueError("nugget must be non-negative")

    def to_dict(self) -> dict:
        return {"theta1": self.theta1, "theta2": self.theta2, "nugget": self.nugget}


@dataclass(frozen=True)
class GPOptions:
    """Knobs for hyperparameter search and hierarchical fitting.

    grid
        Number of log-spaced grid points for (theta1, theta2, nugget).
    refine_tol
        Relative tolerance of the golden-section refinement in log space.
    min_train_per_site
        Groups with fewer training points skip their own hyperparameter
        search.
    thin_sites
        What thin groups do: ``borrow`` fits a GP with the hyperparameters
        of a global fit, ``mean`` predicts the global training mean.  Groups
        with no training points always get the global mean.
    """

    grid: tuple[int, int, int] = (8, 8, 5)
    refine_tol: float = 1e-3
    nugget_floor: float = NUGGET_FLOOR
    max_sweeps: int = 4
    theta2_init: float = 10.0
    center: bool = True
    min_train_per_site: int = 3
    fallback: bool = True
    thin_sites: str = "borrow"
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict | None) -> "GPOptions":
        d = dict(d or {})
        if "grid" in d:
            d["grid"] = tuple(int(g) for g in d["grid"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown gp option(s): {sorted(unknown)}")
        return cls(**d)

    def __post_init__(self):
        if self.thin_sites not in ("borrow", "mean"):
            raise ValueError(f"thin_sites must be 'borrow' or 'mean', not {self.thin_sites!r}")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) if f != "grid" else list(self.grid)
                for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class PredictionResult:
    coords: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (len(self.coords) == len(self.means) == len(self.variances)):
            raise ValueError("prediction arrays must be aligned")

    def __len__(self) -> int:
        return len(self.means)


@dataclass(frozen=True)
class GPModel:
    X_train: np.ndarray
    y_train: np.ndarray
    params: KernelParams  # nugget here is the one actually used in the factor
    factor: np.ndarray  # lower Cholesky factor of Z + nugget*I
    alpha: np.ndarray
    y_mean: float = 0.0
    escalated: bool = False

    @property
    def n(self) -> int:
        return len(self.y_train)


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 2) if X.size == 2 else X[:, None]
    return X


def kernel_eval(params: KernelParams, a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(params.theta1 * math.exp(-float(np.sum((a - b) ** 2)) / params.theta2))


def cross_kernel(params: KernelParams, A, B) -> np.ndarray:
    d2 = cdist(_as_points(A), _as_points(B), "sqeuclidean")
    return params.theta1 * np.exp(-d2 / params.theta2)


def gram_matrix(params: KernelParams, X, nugget: float | None = None) -> np.ndarray:
    """Kernel matrix of `X` plus ``nugget * I`` (defaults to ``params.nugget``)."""
    X = _as_points(X)
    if len(X) == 0:
        raise ValueError("gram_matrix needs at least one point")
    K = cross_kernel(params, X, X)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, params.theta1)
    K[np.diag_indices_from(K)] += params.nugget if nugget is None else nugget
    return K


# ---------------------------------------------------------------------------
# likelihood


def log_marginal_likelihood(params: KernelParams, X, y) -> float:
    """Exact LML of (already centred) targets via Cholesky; -inf if not PD."""
    y = np.asarray(y, dtype=float)
    K = gram_matrix(params, X)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf
    a = cho_solve((L, True), y)
    return float(-0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * len(y) * math.log(2 * math.pi))


def _lml_spectral(lam, q2, theta1, nugget):
    """LML for every (theta1, nugget) pair given eigenvalues of the unit-scale kernel."""
    d = theta1[:, None, None] * lam[None, None, :] + nugget[None, :, None]
    n = lam.size
    return -0.5 * (q2 / d).sum(-1) - 0.5 * np.log(d).sum(-1) - 0.5 * n * math.log(2 * math.pi)


def _golden_max(f, lo, hi, tol):
    """Maximise a unimodal-ish f on [lo, hi]; returns (argmax, value)."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def fit_hyperparameters(X, y, opts: GPOptions | None = None) -> KernelParams:
    """Maximum-likelihood (theta1, theta2, nugget) for targets `y` at `X`.

    Targets are centred when ``opts.center`` is set, matching :func:`gp_fit`.
    Constant targets short-circuit to a floor-variance model and emit
    :class:`DegenerateTargetsWarning`.
    """
    opts = opts or GPOptions()
    X = _as_points(X)
    y = np.asarray(y, dtype=float)
    if len(y) < 3:
        raise ValueError("hyperparameter fitting needs at least 3 points")
    yc = y - y.mean() if opts.center else y
    var = float(np.var(y))
    if var <= 1e-300 or var <= 1e-14 * float(np.mean(y**2)):
        warnings.warn("degenerate targets", DegenerateTargetsWarning, stacklevel=2)
        return KernelParams(VAR_FLOOR, opts.theta2_init, opts.nugget_floor)

    d2 = pdist(X, "sqeuclidean")
    d2 = d2[d2 > 0]
    scale2 = float(np.median(d2)) if d2.size else 1.0
    floor = opts.nugget_floor
    n1, n2, n3 = opts.grid
    lt1 = np.linspace(math.log(1e-3 * var), math.log(1e3 * var), n1)
    lt2 = np.linspace(math.log(1e-1 * scale2), math.log(1e3 * scale2), n2)
    # relative to var so the search is scale-equivariant; the floor is applied on use
    ln = np.linspace(math.log(1e-8 * var), math.log(1e-1 * var), n3)

    D2 = cdist(X, X, "sqeuclidean")
    best = (-np.inf, 0, 0, 0)
    for j, t2 in enumerate(lt2):
        R = np.exp(-D2 / math.exp(t2))
        lam, Q = eigh(R, check_finite=False)
        lam = np.clip(lam, 0.0, None)
        q2 = (Q.T @ yc) ** 2
        ll = _lml_spectral(lam, q2, np.exp(lt1), np.maximum(np.exp(ln), floor))
        i, k = np.unravel_index(np.argmax(ll), ll.shape)
        if ll[i, k] > best[0]:
            best = (float(ll[i, k]), i, j, k)

    _, i, j, k = best
    x = np.array([lt1[i], lt2[j], ln[k]])
    steps = np.array([
        lt1[1] - lt1[0] if n1 > 1 else 1.0,
        lt2[1] - lt2[0] if n2 > 1 else 1.0,
        ln[1] - ln[0] if n3 > 1 else 1.0,
    ])
    lower = np.array([-np.inf, -np.inf, math.log(floor) if floor > 0 else -np.inf])

    n = len(yc)
    eye = np.eye(n)

    def chol_lml(t1, t2, nug):
        K = t1 * np.exp(-D2 / t2) + nug * eye
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return -np.inf
        a = cho_solve((L, True), yc, check_finite=False)
        return float(-0.5 * yc @ a - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi))

    def spectrum(t2):
        lam, Q = eigh(np.exp(-D2 / t2), check_finite=False)
        return np.clip(lam, 0.0, None), (Q.T @ yc) ** 2

    # theta2 moves need a fresh factorisation; with theta2 fixed, one
    # eigendecomposition gives the exact LML for any (theta1, nugget).
    def f_theta2(t):
        return chol_lml(math.exp(x[0]), math.exp(t), max(math.exp(x[2]), floor))

    def f_spec(t, dim, lam, q2):
        t1 = math.exp(t) if dim == 0 else math.exp(x[0])
        nug = max(math.exp(t) if dim == 2 else math.exp(x[2]), floor)
        return float(_lml_spectral(lam, q2, np.array([t1]), np.array([nug]))[0, 0])

    tol = math.log1p(opts.refine_tol)
    for _ in range(opts.max_sweeps):
        moved = 0.0
        fx = f_theta2(x[1])
        lo = x[1] - steps[1]
        t, ft = _golden_max(f_theta2, lo, max(x[1] + steps[1], lo + tol), tol)
        if ft > fx:
            moved = abs(t - x[1])
            x[1] = t
        lam, q2 = spectrum(math.exp(x[1]))
        for dim in (0, 2):
            fx = f_spec(x[dim], dim, lam, q2)
            lo = max(x[dim] - steps[dim], lower[dim])
            t, ft = _golden_max(lambda v, dim=dim: f_spec(v, dim, lam, q2), lo,
                                max(x[dim] + steps[dim], lo + tol), tol)
            if ft > fx:
                moved = max(moved, abs(t - x[dim]))
                x[dim] = t
        if moved <= tol:
            break
    return KernelParams(math.exp(x[0]), math.exp(x[1]), max(math.exp(x[2]), floor))


# ---------------------------------------------------------------------------
# fit / predict


def gp_fit(X, y, params: KernelParams, opts: GPOptions | None = None) -> GPModel:
    """Factorise the Gram matrix and solve for the weight vector.

    The nugget is raised to the floor and, if the factorisation fails or the
    solve residual exceeds 1e-8, escalated tenfold up to ``1e-2 * theta1``.
    """
    opts = opts or GPOptions()
    X = _as_points(X)
    y = np.asarray(y, dtype=float)
    if len(y) < 1 or len(y) != len(X):
        raise ValueError("need at least one training point with matching targets")
    y_mean = float(y.mean()) if opts.center else 0.0
    yc = y - y_mean
    K0 = gram_matrix(params, X, nugget=0.0)
    nugget = max(params.nugget, opts.nugget_floor)
    ceiling = 1e-2 * params.theta1
    ynorm = float(np.linalg.norm(yc))
    while True:
        K = K0.copy()
        K[np.diag_indices_from(K)] += nugget
        try:
            L = cholesky(K, lower=True)
            alpha = cho_solve((L, True), yc)
            resid = float(np.linalg.norm(K @ alpha - yc))
            if resid <= 1e-8 * max(ynorm, 1e-300) or ynorm == 0.0:
                break
        except np.linalg.LinAlgError:
            pass
        if nugget >= ceiling:
            raise IllConditionedGram("ill-conditioned Gram")
        nugget = min(max(nugget * 10.0, NUGGET_FLOOR), ceiling)
    used = replace(params, nugget=nugget)
    return GPModel(X, y, used, L, alpha, y_mean, escalated=nugget != params.nugget)


def gp_predict(model: GPModel, X_test) -> PredictionResult:
    Xs = _as_points(X_test)
    p = model.params
    Ks = cross_kernel(p, model.X_train, Xs)  # N x M
    mu = model.y_mean + Ks.T @ model.alpha
    W = solve_triangular(model.factor, Ks, lower=True)
    v = p.theta1 - np.einsum("ij,ij->j", W, W)
    neg = v < 0
    clamp = float(-v[neg].min()) if neg.any() else 0.0
    v[neg] = 0.0
    return PredictionResult(np.asarray(X_test), mu, v, {"clamp": clamp})


def posterior_covariance(model: GPModel, X_test) -> np.ndarray:
    """Full posterior covariance of the latent function at `X_test`."""
    Xs = _as_points(X_test)
    p = model.params
    W = solve_triangular(model.factor, cross_kernel(p, model.X_train, Xs), lower=True)
    C = cross_kernel(p, Xs, Xs) - W.T @ W
    return 0.5 * (C + C.T)


def small_sample_params(y, opts: GPOptions | None = None) -> KernelParams:
    """Stand-in hyperparameters when there are too few points to search.

    The mean square of the targets sets the signal variance, so that one
    or two measurements do not claim near-zero uncertainty everywhere.
    """
    opts = opts or GPOptions()
    y = np.asarray(y, dtype=float)
    ms = float(np.mean(y**2)) if len(y) else 0.0
    return KernelParams(max(ms, VAR_FLOOR), opts.theta2_init, opts.nugget_floor)


def gpr(X_train, y_train, X_test, opts: GPOptions | None = None,
        params: KernelParams | None = None) -> tuple[PredictionResult, GPModel]:
    """Fit hyperparameters (unless given), fit, and predict."""
    opts = opts or GPOptions()
    if params is None and len(np.asarray(y_train)) < 3:
        params = small_sample_params(y_train, opts)
    if params is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateTargetsWarning)
            params = fit_hyperparameters(X_train, y_train, opts)
    model = gp_fit(X_train, y_train, params, opts)
    return gp_predict(model, X_test), model
