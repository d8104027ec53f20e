"""Functional principal component analysis on a quadrature grid."""

import csv
from dataclasses import dataclass

import numpy as np

from .curves import Curve, CurveSample, Grid, _check_grids, fmt
from .errors import DataError, InsufficientSampleError

# relative size below which the sample covariance is treated as exactly zero
_ZERO_VARIANCE_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class FpcaBasis:
    """Mean curve plus the K leading L2-orthonormal eigenfunctions.

    ``eigenfunctions`` is a (K, S) array; ``eigenvalues`` holds the K
    retained eigenvalues in nonincreasing order.  ``all_eigenvalues`` keeps
    the full clipped spectrum so the variance rule can be audited.
    """

    grid: Grid
    mean: Curve
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float
    var_explained: float
    all_eigenvalues: np.ndarray

    @property
    def n_components(self):
        return self.eigenvalues.size

    K = n_components

    def component(self, k) -> Curve:
        """Eigenfunction ``k`` (zero-based) as a :class:`Curve`."""
        return Curve(self.grid, self.eigenfunctions[k])

    @property
    def components(self):
        return [self.component(k) for k in range(self.n_components)]

    def scores(self, sample: CurveSample) -> np.ndarray:
        """Scores of every curve of ``sample``: an (n, K) array."""
        _check_grids(self.grid, sample.grid)
        centered = sample.values - self.mean.values
        return (centered * self.grid.quad_weights) @ self.eigenfunctions.T

    def reconstruct(self, scores) -> Curve:
        scores = np.asarray(scores, dtype=float)
        return Curve(self.grid, self.mean.values + scores @ self.eigenfunctions)


def fit_fpca(sample: CurveSample, var_threshold: float = 0.95) -> FpcaBasis:
    """Eigendecompose the quadrature-weighted sample covariance operator.

    The symmetric matrix ``W^1/2 C W^1/2`` is diagonalised, eigenvectors are
    mapped back with ``W^-1/2`` so that they are orthonormal in L2, and the
    smallest K whose cumulative eigenvalue share reaches ``var_threshold`` is
    kept.  Each eigenfunction is signed to have a nonnegative integral.
    """
    if not 0 < var_threshold <= 1:
        raise ValueError("var_threshold must lie in (0, 1]")
    if sample.n < 2:
        raise InsufficientSampleError("FPCA needs at least two curves")
    X = sample.values
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite curve values")
    grid = sample.grid
    w = grid.quad_weights
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (sample.n - 1)
    root_w = np.sqrt(w)
    op = root_w[:, None] * cov * root_w[None, :]
    op = (op + op.T) / 2
    evals, evecs = np.linalg.eigh(op)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    scale = float(np.sum(w * mean**2)) + float(np.trace(op))
    total = float(evals.sum())
    if total <= _ZERO_VARIANCE_RTOL * max(scale, np.finfo(float).tiny):
        total = 0.0
    if total == 0.0:
        K = 0
        explained = 1.0
    else:
        share = np.cumsum(evals) / total
        # guard the comparison against rounding in the cumulative share
        K = int(np.searchsorted(share, var_threshold - 1e-12) + 1)
        K = min(K, int(np.count_nonzero(evals > 0)), sample.n - 1)
        explained = float(share[K - 1])

    phis = (evecs[:, :K] / root_w[:, None]).T.copy()
    for k in range(K):
        if np.sum(w * phis[k]) < 0:
            phis[k] = -phis[k]
    kept = evals[:K].copy()
    phis.setflags(write=False)
    kept.setflags(write=False)
    evals.setflags(write=False)
    return FpcaBasis(
        grid=grid,
        mean=Curve(grid, mean),
        eigenfunctions=phis,
        eigenvalues=kept,
        total_variance=total,
        var_explained=explained,
        all_eigenvalues=evals,
    )


def project_scores(basis: FpcaBasis, f: Curve) -> np.ndarray:
    """Scores ``<phi_k, f - mean>`` for k = 1..K."""
    _check_grids(basis.grid, f.grid)
    return basis.eigenfunctions @ (basis.grid.quad_weights * (f.values - basis.mean.values))


def write_basis_csv(path, basis: FpcaBasis):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "eigenvalue"] + [fmt(s) for s in basis.grid.points])
        w.writerow(["mean", ""] + [fmt(v) for v in basis.mean.values])
        for k in range(basis.n_components):
            w.writerow(
                [str(k + 1), fmt(basis.eigenvalues[k])]
                + [fmt(v) for v in basis.eigenfunctions[k]]
            )
