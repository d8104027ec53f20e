"""Kernel estimation of the conditional CDF of a scalar response given a curve.

The estimator is a Nadaraya-Watson weighted empirical CDF in L2 distance.
Its bandwidth is chosen per evaluation curve by a bias/variance trade-off
over a finite grid: a variance proxy driven by the empirical small-ball
probability and a bias proxy comparing the estimate across bandwidths.
For training observations the selection is run leave-one-out.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .curves import Curve, CurveSample, distance_matrix, pairwise_distances
from .errors import EmptyNeighborhoodError, InsufficientSampleError, SelectionError
from .extremile import little_j
from .kernels import KernelSpec, as_kernel

log = logging.getLogger(__name__)

VHAT_FORMS = ("adopted", "printed")
MESH_POINTS = 512
DEFAULT_HF_GRID_SIZE = 20


@dataclass(frozen=True, eq=False)
class BandwidthGrid:
    """Finite set of candidate bandwidths, stored sorted and without repeats."""

    values: np.ndarray

    def __post_init__(self):
        values = np.unique(np.asarray(self.values, dtype=float).ravel())
        if values.size == 0:
            raise ValueError("a bandwidth grid cannot be empty")
        if not np.all(np.isfinite(values)) or values[0] <= 0:
            raise ValueError("bandwidths must be finite and positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    def __contains__(self, h):
        return bool(np.any(self.values == h))


def as_grid(grid) -> BandwidthGrid:
    return grid if isinstance(grid, BandwidthGrid) else BandwidthGrid(grid)


def default_hf_grid(pairwise, size=DEFAULT_HF_GRID_SIZE) -> BandwidthGrid:
    """Log-spaced grid between the 5th and 95th percentiles of positive pairwise distances."""
    pairwise = np.asarray(pairwise, dtype=float)
    upper = pairwise[np.triu_indices(pairwise.shape[0], 1)]
    upper = upper[upper > 0]
    if upper.size == 0:
        return BandwidthGrid([1.0])
    lo, hi = np.percentile(upper, [5, 95])
    if hi <= lo:
        return BandwidthGrid([lo])
    return BandwidthGrid(np.geomspace(lo, hi, size))


# ------------------------------------------------------------ array kernels


def _check_kappa(kappa):
    if not kappa > 0:
        raise ValueError("kappa must be positive")


def _ccdf_values(dist, y, y_eval, bandwidths, kernel):
    """F_h(y_eval) for every bandwidth; rows with no kernel mass are NaN."""
    order = np.argsort(y, kind="stable")
    ys = y[order]
    w = kernel.weights(dist[order][None, :], np.asarray(bandwidths, dtype=float)[:, None])
    cum = np.cumsum(w, axis=1)
    total = cum[:, -1:]
    counts = np.searchsorted(ys, y_eval, side="right")
    padded = np.concatenate([np.zeros((cum.shape[0], 1)), cum], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        F = padded[:, counts] / total
    F = np.where(total > 0, np.clip(F, 0.0, 1.0), np.nan)
    return F


def _vhat_values(dist, bandwidths, kappa, form):
    n = dist.size
    pi_hat = np.mean(dist[None, :] <= np.asarray(bandwidths)[:, None], axis=1)
    v = np.full(pi_hat.shape, np.inf)
    pos = pi_hat > 0
    if form == "adopted":
        denom = n * pi_hat[pos]
    elif form == "printed":
        # ln(1) = +0.0, so a ball holding every curve gives +inf
        denom = n * np.log(pi_hat[pos])
    else:
        raise ValueError(f"vhat_form must be one of {VHAT_FORMS}")
    with np.errstate(divide="ignore"):
        v[pos] = kappa * math.log(n) / denom
    return v


def _integration_mesh(y):
    lo, hi = float(np.min(y)), float(np.max(y))
    return np.unique(np.concatenate([y, np.linspace(lo, hi, MESH_POINTS)]))


def _trapezoid_weights(mesh):
    w = np.zeros_like(mesh)
    if mesh.size > 1:
        gaps = np.diff(mesh)
        w[:-1] += gaps / 2
        w[1:] += gaps / 2
    return w


def _criteria(dist, y, bandwidths, kappa, kernel, form):
    """Bias proxy, variance proxy and validity flags for every candidate bandwidth.

    For h' >= h the two estimates compared are the same, so only pairs with
    h' < h contribute to the squared-distance integral.  With the trapezoid
    weights the integral of (F_a - F_b)^2 is a quadratic form, evaluated
    through the Gram matrix of the estimates on the mesh.
    """
    mesh = _integration_mesh(y)
    F = _ccdf_values(dist, y, mesh, bandwidths, kernel)
    valid = ~np.isnan(F[:, 0])
    v = _vhat_values(dist, bandwidths, kappa, form)
    Fz = np.where(valid[:, None], F, 0.0)
    gram = (Fz * _trapezoid_weights(mesh)) @ Fz.T
    sq = np.diag(gram)
    dist2 = np.clip(sq[:, None] + sq[None, :] - 2 * gram, 0.0, None)
    # row h, column h': integral of (F_h' - F_max(h,h'))^2 minus v(h')
    H = len(bandwidths)
    lower = np.tril(np.ones((H, H), dtype=bool), -1)
    bracket = np.where(lower, dist2, 0.0) - v[None, :]
    bracket = np.where(valid[None, :], bracket, -np.inf)
    a = np.maximum(bracket.max(axis=1, initial=-np.inf), 0.0)
    return a, v, valid


def _select_index(a, v, valid):
    crit = np.where(valid, a + v, np.inf)
    if not np.any(np.isfinite(crit)):
        return None
    # argmin returns the first minimiser: ties go to the smallest bandwidth
    return int(np.argmin(crit))


# ------------------------------------------------------------- public API


def eval_ccdf(y, x0: Curve, sample: CurveSample, responses, h_F, kernel="epanechnikov"):
    """Kernel-weighted empirical CDF of the responses near ``x0``, evaluated at ``y``."""
    kernel = as_kernel(kernel)
    responses = np.asarray(responses, dtype=float)
    dist = distance_matrix(sample, x0)
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    F = _ccdf_values(dist, responses, y_arr, [float(h_F)], kernel)[0]
    if np.isnan(F[0]):
        raise EmptyNeighborhoodError(f"no kernel mass at bandwidth {h_F:g}; enlarge h_F")
    return float(F[0]) if np.ndim(y) == 0 else F


def small_ball_hat(x0: Curve, h, sample: CurveSample) -> float:
    """Fraction of sample curves in the closed L2 ball of radius h around x0."""
    return float(np.mean(distance_matrix(sample, x0) <= h))


def v_hat(h_F, x0: Curve, sample: CurveSample, kappa=1.0, form="adopted") -> float:
    """Variance proxy kappa ln(n) / (n pi_hat); +inf when the ball is empty.

    ``form="printed"`` uses ``n ln(pi_hat)`` in the denominator instead; a
    ball holding the whole sample then yields +inf.
    """
    _check_kappa(kappa)
    if sample.n < 2:
        raise InsufficientSampleError("v_hat needs at least two curves")
    dist = distance_matrix(sample, x0)
    return float(_vhat_values(dist, [float(h_F)], kappa, form)[0])


def a_hat(h_F, x0: Curve, sample: CurveSample, responses, grid_HF, kappa=1.0,
          kernel="epanechnikov", form="adopted") -> float:
    """Bias proxy: the largest positive excess of the CDF discrepancy over the variance proxy.

    Candidate bandwidths whose neighbourhood is empty are left out of the
    maximum.
    """
    _check_kappa(kappa)
    grid = as_grid(grid_HF)
    h_F = float(h_F)
    if h_F not in grid:
        raise ValueError("h_F must belong to the bandwidth grid")
    dist = distance_matrix(sample, x0)
    a, _, _ = _criteria(dist, np.asarray(responses, dtype=float), grid.values, kappa,
                        as_kernel(kernel), form)
    return float(a[np.flatnonzero(grid.values == h_F)[0]])


def select_hf_opt(x0: Curve, sample: CurveSample, responses, grid_HF, kappa=1.0,
                  kernel="epanechnikov", form="adopted") -> float:
    """Grid bandwidth minimising bias proxy + variance proxy (smallest on ties)."""
    _check_kappa(kappa)
    grid = as_grid(grid_HF)
    dist = distance_matrix(sample, x0)
    a, v, valid = _criteria(dist, np.asarray(responses, dtype=float), grid.values, kappa,
                            as_kernel(kernel), form)
    idx = _select_index(a, v, valid)
    if idx is None:
        raise SelectionError("every candidate bandwidth leaves the neighbourhood empty")
    return float(grid.values[idx])


def _loo_select(pairwise, responses, grid, kappa, kernel, form):
    """Leave-one-out selection; returns bandwidths and each F_hat(Y_i | X_i)."""
    n = responses.size
    bw = np.empty(n)
    own = np.empty(n)
    idx_all = np.arange(n)
    for i in range(n):
        others = idx_all != i
        dist = pairwise[i, others]
        y = responses[others]
        a, v, valid = _criteria(dist, y, grid.values, kappa, kernel, form)
        j = _select_index(a, v, valid)
        if j is None:
            raise SelectionError(
                f"observation {i}: every candidate bandwidth leaves the neighbourhood empty",
                index=i,
            )
        bw[i] = grid.values[j]
        own[i] = _ccdf_values(dist, y, responses[i:i + 1], [bw[i]], kernel)[0, 0]
    return bw, own


def _check_training(sample, responses, minimum):
    responses = np.asarray(responses, dtype=float)
    if responses.shape != (sample.n,):
        raise ValueError("responses must have one entry per curve")
    if not np.all(np.isfinite(responses)):
        raise ValueError("responses must be finite")
    if sample.n < minimum:
        raise InsufficientSampleError(f"need at least {minimum} observations")
    return responses


def loo_bandwidths(sample: CurveSample, responses, grid_HF=None, kappa=1.0,
                   kernel="epanechnikov", form="adopted") -> np.ndarray:
    """Selected CDF bandwidth at each X_i, computed with observation i held out."""
    _check_kappa(kappa)
    responses = _check_training(sample, responses, 3)
    pairwise = pairwise_distances(sample)
    grid = default_hf_grid(pairwise) if grid_HF is None else as_grid(grid_HF)
    bw, _ = _loo_select(pairwise, responses, grid, kappa, as_kernel(kernel), form)
    return bw


def clamp_cdf(F, n):
    eps = 1.0 / (2 * n)
    return np.clip(F, eps, 1.0 - eps)


def ccdf_weights_at_responses(sample: CurveSample, responses, loo_bw, kernel="epanechnikov",
                              tau=0.5) -> np.ndarray:
    """J_tau of the leave-one-out CDF estimate at each observation's own response.

    The CDF value is clamped to [1/(2n), 1 - 1/(2n)] before J_tau is applied.
    """
    kernel = as_kernel(kernel)
    responses = _check_training(sample, responses, 2)
    loo_bw = np.asarray(loo_bw, dtype=float)
    pairwise = pairwise_distances(sample)
    n = sample.n
    F = np.empty(n)
    for i in range(n):
        others = np.arange(n) != i
        Fi = _ccdf_values(pairwise[i, others], responses[others], responses[i:i + 1],
                          [loo_bw[i]], kernel)[0, 0]
        if np.isnan(Fi):
            raise EmptyNeighborhoodError(f"observation {i}: no kernel mass at {loo_bw[i]:g}")
        F[i] = Fi
    return little_j(clamp_cdf(F, n), tau)


@dataclass(frozen=True, eq=False)
class CcdfModel:
    """Training sample, kernel and the leave-one-out selected CDF bandwidths.

    ``own_cdf`` caches F_hat(Y_i | X_i) from the held-out fits so extremile
    weights for any level are a single vectorised evaluation.
    """

    sample: CurveSample
    responses: np.ndarray
    kernel: KernelSpec
    kappa: float
    grid: BandwidthGrid
    selected_bandwidths: np.ndarray
    own_cdf: np.ndarray
    form: str = "adopted"
    pairwise: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def fit(cls, sample: CurveSample, responses, kernel="epanechnikov", kappa=1.0,
            grid_HF=None, form="adopted", grid_size=DEFAULT_HF_GRID_SIZE, pairwise=None):
        _check_kappa(kappa)
        if form not in VHAT_FORMS:
            raise ValueError(f"vhat_form must be one of {VHAT_FORMS}")
        kernel = as_kernel(kernel)
        responses = _check_training(sample, responses, 3)
        if pairwise is None:
            pairwise = pairwise_distances(sample)
        grid = default_hf_grid(pairwise, grid_size) if grid_HF is None else as_grid(grid_HF)
        bw, own = _loo_select(pairwise, responses, grid, kappa, kernel, form)
        if np.any(np.isnan(own)):
            bad = int(np.flatnonzero(np.isnan(own))[0])
            raise EmptyNeighborhoodError(f"observation {bad}: empty neighbourhood")
        responses = responses.copy()
        for arr in (responses, bw, own):
            arr.setflags(write=False)
        return cls(sample, responses, kernel, float(kappa), grid, bw, own, form, pairwise)

    def weights(self, tau) -> np.ndarray:
        return little_j(clamp_cdf(self.own_cdf, self.sample.n), tau)

    def evaluate(self, y, x0: Curve, h_F=None):
        """CDF estimate at a new curve; the bandwidth is selected at x0 when omitted."""
        if h_F is None:
            h_F = select_hf_opt(x0, self.sample, self.responses, self.grid, self.kappa,
                                self.kernel, self.form)
        return eval_ccdf(y, x0, self.sample, self.responses, h_F, self.kernel)
