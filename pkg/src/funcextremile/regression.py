"""Extremile-weighted local linear regression of a scalar on a curve.

At an evaluation curve x0 the model solves a weighted least squares problem
in the FPCA coordinates of ``x0 - X_i``.  Each observation is weighted by a
kernel in L2 distance, with a k-nearest-neighbour bandwidth rescaled by a
level-dependent factor, times the extremile weight J_tau of its
leave-one-out conditional CDF value.  With tau = 1/2 every extremile weight
is one and the estimator is plain local linear mean regression.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .ccdf import DEFAULT_HF_GRID_SIZE, VHAT_FORMS, CcdfModel
from .curves import (Curve, CurveSample, _check_grids, cross_distances, distance_matrix,
                     pairwise_distances)
from .errors import EmptyNeighborhoodError, InsufficientSampleError
from .extremile import adaptive_factor, as_tau
from .fpca import FpcaBasis, fit_fpca
from .kernels import as_kernel

log = logging.getLogger(__name__)

KNN_MODES = ("common", "per_observation")
DEFAULT_K_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class ExtremileConfig:
    """Tuning of the estimator.

    ``k_neighbors=None`` picks k by leave-one-out cross-validation of the
    local linear mean fit over ``k_fractions`` of the sample size.
    """

    k_neighbors: Optional[int] = None
    reg_kernel: str = "epanechnikov"
    cdf_kernel: str = "epanechnikov"
    kappa: float = 1.0
    vhat_form: str = "adopted"
    hf_grid_size: int = DEFAULT_HF_GRID_SIZE
    var_threshold: float = 0.95
    ridge_tol: float = 1e12
    knn_mode: str = "common"
    k_fractions: Tuple[float, ...] = DEFAULT_K_FRACTIONS

    def __post_init__(self):
        as_kernel(self.reg_kernel)
        as_kernel(self.cdf_kernel)
        if self.k_neighbors is not None and int(self.k_neighbors) < 1:
            raise ValueError("k_neighbors must be a positive integer")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.vhat_form not in VHAT_FORMS:
            raise ValueError(f"vhat_form must be one of {VHAT_FORMS}")
        if self.knn_mode not in KNN_MODES:
            raise ValueError(f"knn_mode must be one of {KNN_MODES}")
        if not 0 < self.var_threshold <= 1:
            raise ValueError("var_threshold must lie in (0, 1]")
        if not self.k_fractions or any(not 0 < f <= 1 for f in self.k_fractions):
            raise ValueError("k_fractions must be a nonempty set of values in (0, 1]")
        object.__setattr__(self, "k_fractions", tuple(float(f) for f in self.k_fractions))
        if int(self.hf_grid_size) < 1:
            raise ValueError("hf_grid_size must be positive")

    def neighbors_for(self, n):
        """Fixed k, or None when it is to be cross-validated."""
        return None if self.k_neighbors is None else max(1, int(self.k_neighbors))

    def k_grid(self, n):
        return k_candidates(n, self.k_fractions)

    def with_updates(self, **changes):
        return replace(self, **changes)

    as_dict = asdict


@dataclass(frozen=True, eq=False)
class ExtremileFit:
    """Estimate at one curve and level: intercept (the extremile) and slope scores."""

    x0: Curve
    tau: float
    alpha_hat: float
    b_hat: np.ndarray
    bandwidths_used: np.ndarray
    effective_n: int
    ridge_used: bool
    knn_exact: bool = True


class WlsSolution(NamedTuple):
    alpha_hat: float
    b_hat: np.ndarray
    ridge_used: bool


# ----------------------------------------------------------------- building blocks


def build_design(basis: FpcaBasis, x0: Curve, sample: CurveSample) -> np.ndarray:
    """Rows (1, <phi_1, x0 - X_i>, ..., <phi_K, x0 - X_i>)."""
    _check_grids(basis.grid, x0.grid)
    _check_grids(basis.grid, sample.grid)
    diff = (x0.values - sample.values) * basis.grid.quad_weights
    return np.column_stack([np.ones(sample.n), diff @ basis.eigenfunctions.T])


def default_knn_grid(dist):
    """Distinct positive distances plus one value 10% above the largest."""
    dist = np.asarray(dist, dtype=float)
    pos = np.unique(dist[dist > 0])
    top = 1.1 * float(dist.max()) if dist.size and dist.max() > 0 else 1.0
    return np.append(pos, top)


def _knn_from_distances(dist, k, grid=None, exclude=None):
    """Smallest grid radius whose open ball holds exactly k curves.

    Returns ``(h, exact)``; when distance ties make an exact count impossible
    the smallest radius holding at least k curves is used and ``exact`` is
    False.
    """
    dist = np.asarray(dist, dtype=float)
    grid = default_knn_grid(dist) if grid is None else np.unique(np.asarray(grid, dtype=float))
    if exclude is not None:
        dist = np.delete(dist, exclude)
    if k < 1 or k > dist.size:
        raise ValueError(f"k={k} is outside 1..{dist.size}")
    counts = np.searchsorted(np.sort(dist), grid, side="left")
    hit = np.flatnonzero(counts == k)
    if hit.size:
        return float(grid[hit[0]]), True
    over = np.flatnonzero(counts >= k)
    if not over.size:
        raise EmptyNeighborhoodError(f"no grid radius captures {k} curves")
    return float(grid[over[0]]), False


def knn_bandwidth(x0: Curve, sample: CurveSample, k, grid_H=None, exclude=None) -> float:
    """k-nearest-neighbour radius around x0, optionally ignoring curve ``exclude``."""
    h, exact = _knn_from_distances(distance_matrix(sample, x0), int(k), grid_H, exclude)
    if not exact:
        log.warning("distance ties: no grid radius holds exactly %d curves; using %g", k, h)
    return h


def _per_observation_knn(dist, k, grid=None):
    """Radius for each observation i counting only curves j != i."""
    dist = np.asarray(dist, dtype=float)
    grid = default_knn_grid(dist) if grid is None else np.unique(np.asarray(grid, dtype=float))
    if k < 1 or k > dist.size - 1:
        raise ValueError(f"k={k} is outside 1..{dist.size - 1}")
    counts = np.searchsorted(np.sort(dist), grid, side="left")
    own = dist[:, None] < grid[None, :]
    counts_excl = counts[None, :] - own
    exact_hit = counts_excl == k
    exact = exact_hit.any(axis=1)
    first = np.where(exact, exact_hit.argmax(axis=1), (counts_excl >= k).argmax(axis=1))
    if not np.all((counts_excl >= k).any(axis=1)):
        raise EmptyNeighborhoodError(f"no grid radius captures {k} curves")
    return grid[first], exact


def tau_bandwidth(h_k, tau) -> float:
    """kNN bandwidth rescaled for extremile level tau."""
    return h_k * adaptive_factor(tau)


def _solve_batch(design, responses, weights, ridge_tol=1e12):
    """Solve m weighted least-squares problems sharing the responses.

    design (m, n, p), weights (m, n).  Cells whose total weight is zero come
    back as NaN.  Gram matrices with condition number above ``ridge_tol``
    get a ridge of 1e-8 * trace / p.
    """
    m, _, p = design.shape
    wd = design * weights[:, :, None]
    gram = np.einsum("mnp,mnq->mpq", wd, design)
    rhs = np.einsum("mnp,n->mp", wd, responses)
    empty = ~(weights.sum(axis=1) > 0)
    gram[empty] = np.eye(p)
    rhs[empty] = 0.0
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(gram)
    ridge = ~(cond <= ridge_tol)
    if np.any(ridge):
        tr = np.trace(gram[ridge], axis1=1, axis2=2)
        gram[ridge] += (1e-8 * tr / p)[:, None, None] * np.eye(p)
    theta = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
    theta[empty] = np.nan
    return theta, ridge & ~empty, empty


def solve_wls(design, responses, kernel_weights, extremile_weights, ridge_tol=1e12) -> WlsSolution:
    """Closed-form weighted least squares with weights kernel * extremile."""
    design = np.asarray(design, dtype=float)
    w = np.asarray(kernel_weights, dtype=float) * np.asarray(extremile_weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    theta, ridge, empty = _solve_batch(design[None], np.asarray(responses, dtype=float),
                                       w[None], ridge_tol)
    if empty[0]:
        raise EmptyNeighborhoodError("all weights are zero")
    return WlsSolution(float(theta[0, 0]), theta[0, 1:].copy(), bool(ridge[0]))


def k_candidates(n, fractions=DEFAULT_K_FRACTIONS):
    """Neighbour counts ceil(f (n - 1)), deduplicated; n - 1 is the leave-one-out maximum."""
    ks = {min(n - 1, max(1, math.ceil(f * (n - 1) - 1e-9))) for f in fractions}
    return sorted(ks)


def loo_cv_scores(design_all, responses, dist, k_grid, kernel, ridge_tol=1e12):
    """Leave-one-out squared error of the local linear mean fit for each k.

    ``design_all`` is (n, n, p): row i holds the design centred at X_i.
    Observation i is dropped both from its own fit and from its kNN count.
    Cells with no usable neighbours score +inf.
    """
    n = dist.shape[0]
    kernel = as_kernel(kernel)
    out = np.empty(len(k_grid))
    for j, k in enumerate(k_grid):
        h = np.empty(n)
        for i in range(n):
            h[i], _ = _knn_from_distances(dist[i], k, exclude=i)
        w = kernel.weights(dist, h[:, None])
        w[np.arange(n), np.arange(n)] = 0.0
        theta, _, empty = _solve_batch(design_all, responses, w, ridge_tol)
        resid = responses - theta[:, 0]
        out[j] = np.inf if np.any(empty) else float(np.mean(resid * resid))
    return out


def select_k(scores, responses, dist, k_grid, kernel="epanechnikov", ridge_tol=1e12):
    """k minimising the leave-one-out error; ties go to the smaller k."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    design = np.ones((n, n, scores.shape[1] + 1))
    design[:, :, 1:] = scores[:, None, :] - scores[None, :, :]
    cv = loo_cv_scores(design, np.asarray(responses, dtype=float), dist, k_grid, kernel,
                       ridge_tol)
    if not np.any(np.isfinite(cv)):
        raise EmptyNeighborhoodError("no candidate k gives a usable leave-one-out fit")
    return int(k_grid[int(np.argmin(cv))]), cv


# ----------------------------------------------------------------- estimator


class ExtremileRegression:
    """Conditional extremile estimator for scalar responses and curve covariates.

    >>> model = ExtremileRegression().fit(curves, y)        # doctest: +SKIP
    >>> model.predict(new_curves, [0.1, 0.5, 0.9])           # doctest: +SKIP
    """

    def __init__(self, config: Optional[ExtremileConfig] = None, **overrides):
        config = config or ExtremileConfig()
        self.config = config.with_updates(**overrides) if overrides else config
        self.failures = []

    # -- training ------------------------------------------------------------
    def fit(self, sample: CurveSample, responses, basis: Optional[FpcaBasis] = None,
            ccdf: Optional[CcdfModel] = None, pairwise=None):
        responses = np.asarray(responses, dtype=float)
        if responses.shape != (sample.n,) or not np.all(np.isfinite(responses)):
            raise ValueError("responses must be finite with one entry per curve")
        self.sample = sample
        self.responses = responses
        self.basis = basis if basis is not None else fit_fpca(sample, self.config.var_threshold)
        if sample.n < self.basis.n_components + 2:
            raise InsufficientSampleError("need n >= K + 2 observations")
        self.train_scores = self.basis.scores(sample)
        self._ccdf = ccdf
        self._pairwise = pairwise
        self.k = self.config.neighbors_for(sample.n)
        self.cv_scores = None
        if self.k is None:
            self.k, self.cv_scores = select_k(self.train_scores, responses, self.pairwise,
                                              self.config.k_grid(sample.n),
                                              self.config.reg_kernel, self.config.ridge_tol)
        return self

    @property
    def pairwise(self):
        if self._pairwise is None:
            self._pairwise = pairwise_distances(self.sample)
        return self._pairwise

    @property
    def ccdf(self) -> CcdfModel:
        """Conditional CDF model; built on first use since tau = 1/2 never needs it."""
        if self._ccdf is None:
            c = self.config
            self._ccdf = CcdfModel.fit(self.sample, self.responses, c.cdf_kernel, c.kappa,
                                       form=c.vhat_form, grid_size=c.hf_grid_size,
                                       pairwise=self.pairwise)
        return self._ccdf

    def extremile_weights(self, tau):
        if as_tau(tau) == 0.5:
            return np.ones(self.sample.n)
        return self.ccdf.weights(tau)

    # -- evaluation ----------------------------------------------------------
    def _neighbourhoods(self, dist):
        """kNN radii per evaluation point: (m,) in common mode, (m, n) otherwise."""
        m = dist.shape[0]
        if self.config.knn_mode == "common":
            h = np.empty(m)
            exact = np.empty(m, dtype=bool)
            for i in range(m):
                h[i], exact[i] = _knn_from_distances(dist[i], self.k)
            return h[:, None], exact
        h = np.empty_like(dist)
        exact = np.empty(m, dtype=bool)
        for i in range(m):
            h[i], ex = _per_observation_knn(dist[i], self.k)
            exact[i] = bool(ex.all())
        return h, exact

    def _evaluate(self, curves: CurveSample, taus, dist=None):
        _check_grids(self.sample.grid, curves.grid)
        taus = [as_tau(t) for t in taus]
        if dist is None:
            dist = cross_distances(curves, self.sample)
        scores = self.basis.scores(curves)
        m, n = dist.shape
        K = self.basis.n_components
        design = np.ones((m, n, K + 1))
        design[:, :, 1:] = scores[:, None, :] - self.train_scores[None, :, :]
        h_knn, exact = self._neighbourhoods(dist)
        kernel = as_kernel(self.config.reg_kernel)
        alpha = np.full((m, len(taus)), np.nan)
        slopes = np.full((m, len(taus), K), np.nan)
        ridge = np.zeros((m, len(taus)), dtype=bool)
        eff = np.zeros((m, len(taus)), dtype=int)
        bws = []
        for j, tau in enumerate(taus):
            h = h_knn * adaptive_factor(tau)
            kw = kernel.weights(dist, h)
            w = kw * self.extremile_weights(tau)[None, :]
            theta, rflag, empty = _solve_batch(design, self.responses, w, self.config.ridge_tol)
            alpha[:, j] = theta[:, 0]
            slopes[:, j, :] = theta[:, 1:]
            ridge[:, j] = rflag
            eff[:, j] = np.count_nonzero(w > 0, axis=1)
            bws.append(np.broadcast_to(h, (m, n)))
            for i in np.flatnonzero(empty):
                self.failures.append((i, tau, "all weights are zero"))
        return dict(alpha=alpha, slopes=slopes, ridge=ridge, effective_n=eff,
                    bandwidths=bws, knn_exact=exact, taus=taus)

    def predict(self, curves: CurveSample, taus, dist=None) -> np.ndarray:
        """(m, len(taus)) matrix of extremile estimates; failed cells are NaN."""
        self.failures = []
        return self._evaluate(curves, taus, dist)["alpha"]

    def fit_point(self, x0: Curve, tau) -> ExtremileFit:
        out = self._evaluate(CurveSample(x0.grid, x0.values[None, :]), [tau])
        if np.isnan(out["alpha"][0, 0]):
            raise EmptyNeighborhoodError("all weights are zero at the evaluation curve")
        return ExtremileFit(
            x0=x0,
            tau=as_tau(tau),
            alpha_hat=float(out["alpha"][0, 0]),
            b_hat=out["slopes"][0, 0].copy(),
            bandwidths_used=np.array(out["bandwidths"][0][0]),
            effective_n=int(out["effective_n"][0, 0]),
            ridge_used=bool(out["ridge"][0, 0]),
            knn_exact=bool(out["knn_exact"][0]),
        )

    def local_linear_mean(self, curves: CurveSample, dist=None) -> np.ndarray:
        return self.predict(curves, [0.5], dist)[:, 0]


# ----------------------------------------------------------------- functional API


def _model(sample, responses, basis, kernel, k_neighbors, ccdf_config, ccdf):
    config = ccdf_config if isinstance(ccdf_config, ExtremileConfig) else ExtremileConfig(
        **(ccdf_config or {}))
    if kernel is not None:
        config = config.with_updates(reg_kernel=as_kernel(kernel).family)
    if k_neighbors is not None:
        config = config.with_updates(k_neighbors=int(k_neighbors))
    return ExtremileRegression(config).fit(sample, responses, basis=basis, ccdf=ccdf)


def fit_extremile(x0: Curve, tau, sample: CurveSample, responses, basis=None,
                  kernel=None, k_neighbors=None, ccdf_config=None,
                  ccdf: Optional[CcdfModel] = None) -> ExtremileFit:
    """Conditional extremile of order tau at x0.

    ``ccdf_config`` is an :class:`ExtremileConfig` or a dict of its fields;
    a pre-fitted ``ccdf`` model skips the leave-one-out bandwidth search.
    """
    model = _model(sample, responses, basis, kernel, k_neighbors, ccdf_config, ccdf)
    return model.fit_point(x0, tau)


def local_linear_mean(x0: Curve, sample: CurveSample, responses, basis=None,
                      kernel=None, k_neighbors=None, ccdf_config=None) -> float:
    """Unweighted local linear mean regression on the same kNN bandwidths."""
    model = _model(sample, responses, basis, kernel, k_neighbors, ccdf_config, None)
    return model.fit_point(x0, 0.5).alpha_hat


def predict_extremiles(fit_points: CurveSample, tau_grid, sample: CurveSample, responses,
                       config: Optional[ExtremileConfig] = None, basis=None):
    """Extremile estimates for every (fit point, level) pair.

    Returns the (points, levels) matrix and the list of failed cells
    ``(point index, tau, reason)``; failed cells hold NaN.
    """
    model = ExtremileRegression(config).fit(sample, responses, basis=basis)
    est = model.predict(fit_points, tau_grid)
    return est, list(model.failures)
