"""Linear quantile regression on FPCA scores, the comparator for crossing rates."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .extremile import as_tau


def check_loss(u, tau):
    """rho_tau(u) = u (tau - 1{u < 0})."""
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class QuantileFit:
    tau: float
    intercept: float
    coefficients: np.ndarray
    converged: bool
    objective: float
    n_iter: int = 0

    def predict(self, scores):
        scores = np.atleast_2d(np.asarray(scores, dtype=float))
        if scores.shape[1] != self.coefficients.size:
            raise ValueError(
                f"scores have {scores.shape[1]} columns, the fit expects {self.coefficients.size}"
            )
        return self.intercept + scores @ self.coefficients


def _mm_start(X, y, tau, max_iter, tol):
    """Hunter-Lange majorise-minimise iterations on the perturbed check loss.

    Each step is a weighted least-squares solve with weights 1/(eps + |u|);
    eps decreases geometrically from 1e-2 to 1e-8.
    """
    n, p = X.shape
    theta = np.linalg.lstsq(X, y, rcond=None)[0]
    eps_schedule = np.geomspace(1e-2, 1e-8, 60)
    it = 0
    for it in range(1, max_iter + 1):
        eps = eps_schedule[min(it - 1, eps_schedule.size - 1)]
        u = y - X @ theta
        v = 1.0 / (eps + np.abs(u))
        gram = (X * v[:, None]).T @ X
        rhs = X.T @ (v * y) + (2 * tau - 1) * X.sum(axis=0)
        try:
            new = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            new = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        step = np.max(np.abs(new - theta))
        theta = new
        if step < tol and eps <= 1e-8:
            break
    return theta, it


def _initial_basis(X, order):
    """Greedy pick of p rows, in the given order, that are linearly independent."""
    n, p = X.shape
    chosen = []
    for i in order:
        trial = chosen + [i]
        if np.linalg.matrix_rank(X[trial], tol=1e-10 * max(1.0, np.abs(X).max())) == len(trial):
            chosen = trial
            if len(chosen) == p:
                return chosen
    return None


def _edge_descent(X, y, tau, basis, max_steps):
    """Walk vertex to vertex along descending edges of the LP until optimal."""
    n, p = X.shape
    basis = list(basis)
    theta = np.linalg.solve(X[basis], y[basis])
    scale = max(1.0, float(np.max(np.abs(y))))
    tol = 1e-12 * scale
    for step in range(max_steps):
        u = y - X @ theta
        inv = np.linalg.inv(X[basis])
        best = None
        for col in range(p):
            for sign in (1.0, -1.0):
                delta = sign * inv[:, col]
                a = X @ delta
                # slope of f(t) = sum rho(u - t a) at t = 0+
                moving = -a
                pos = np.where(np.abs(u) > tol, u > 0, moving > 0)
                slope = float(np.sum(np.where(pos, tau, tau - 1.0) * moving))
                if slope < -1e-12 * (1.0 + np.abs(a).sum()) and (best is None or slope < best[0]):
                    best = (slope, delta, a, col)
        if best is None:
            return theta, basis, True, step
        slope, delta, a, col = best
        # exact line search on the convex piecewise-linear f(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_break = np.where(np.abs(a) > 1e-14, u / a, -1.0)
        cand = np.flatnonzero(t_break > tol / max(1e-300, np.abs(a).max()))
        if cand.size == 0:
            return theta, basis, False, step
        cand = cand[np.argsort(t_break[cand], kind="stable")]
        entering = None
        for i in cand:
            slope += abs(a[i])
            if slope >= 0:
                entering = i
                break
        if entering is None:
            return theta, basis, False, step
        theta = theta + t_break[entering] * delta
        basis[col] = int(entering)
    return theta, basis, False, max_steps


def fit_quantile(scores, responses, tau, intercept=True, max_iter=200, tol=1e-9) -> QuantileFit:
    """Minimise sum rho_tau(Y_i - b_0 - sum_k c_ik b_k) over (b_0, b).

    A smoothed IRLS pass locates the optimum approximately; the p residuals
    closest to zero then seed an exact edge-following descent on the linear
    programme, which ends at an optimal vertex.  ``intercept=False`` drops
    b_0 and fits the scores alone.
    """
    tau = as_tau(tau)
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None] if scores.size else scores.reshape(-1, 0)
    y = np.asarray(responses, dtype=float)
    n, K = scores.shape
    if y.shape != (n,):
        raise ValueError("responses must have one entry per row of scores")
    X = np.column_stack([np.ones(n), scores]) if intercept else scores
    p = X.shape[1]
    if n <= K + 1:
        raise ValueError("quantile regression needs n > K + 1")
    if p == 0:
        obj = float(np.sum(check_loss(y, tau)))
        return QuantileFit(tau, 0.0, np.zeros(0), True, obj, 0)

    theta, n_iter = _mm_start(X, y, tau, max_iter, tol)
    converged = False
    order = np.argsort(np.abs(y - X @ theta), kind="stable")
    basis = _initial_basis(X, order)
    if basis is not None:
        vert, _, converged, steps = _edge_descent(X, y, tau, basis, max_steps=50 * n)
        n_iter += steps
        if np.sum(check_loss(y - X @ vert, tau)) <= np.sum(check_loss(y - X @ theta, tau)):
            theta = vert
    obj = float(np.sum(check_loss(y - X @ theta, tau)))
    b0 = float(theta[0]) if intercept else 0.0
    coefs = theta[1:].copy() if intercept else theta.copy()
    return QuantileFit(tau, b0, coefs, bool(converged), obj, n_iter)


def predict_quantiles(fits: Sequence[QuantileFit], scores) -> np.ndarray:
    """(points, levels) matrix of intercept + scores @ coefficients."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[None, :]
    return np.column_stack([f.predict(scores) for f in fits])
