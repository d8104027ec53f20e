"""Extremile weight functions and standard-Gaussian extremile constants.

``K_tau`` is the distortion applied to a CDF and ``J_tau`` its derivative,
the weight function that turns a mean into an extremile.  Integrals over
(0, 1) use a fixed composite Gauss-Legendre rule whose panels shrink
geometrically toward both endpoints, where the normal quantile diverges.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "ExtremileLevel",
    "as_tau",
    "exponent_r",
    "exponent_s",
    "big_k",
    "little_j",
    "std_normal_quantile",
    "gaussian_extremile",
    "gaussian_extremile_variance",
    "adaptive_factor",
    "unit_interval_rule",
]


@dataclass(frozen=True)
class ExtremileLevel:
    """An extremile order strictly inside (0, 1)."""

    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not (0.0 < tau < 1.0) or math.isnan(tau):
            raise ValueError(f"extremile level must lie strictly inside (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    def __float__(self):
        return self.tau


def as_tau(tau) -> float:
    if isinstance(tau, ExtremileLevel):
        return tau.tau
    return ExtremileLevel(tau).tau


def exponent_r(tau) -> float:
    """r(tau) = log(1/2) / log(tau)."""
    return math.log(0.5) / math.log(as_tau(tau))


def exponent_s(tau) -> float:
    """s(tau) = r(1 - tau)."""
    return exponent_r(1.0 - as_tau(tau))


def _unit_arg(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any((t < 0) | (t > 1)):
        raise ValueError("argument must lie in [0, 1]")
    return t


def _scalar_or_array(out, like):
    return float(out) if np.ndim(like) == 0 else out


def big_k(t, tau):
    """Distortion K_tau(t): 1-(1-t)^s for tau <= 1/2, t^r for tau >= 1/2."""
    tau = as_tau(tau)
    x = _unit_arg(t)
    if tau == 0.5:
        out = x.copy()
    elif tau < 0.5:
        out = 1.0 - (1.0 - x) ** exponent_s(tau)
    else:
        out = x ** exponent_r(tau)
    return _scalar_or_array(out, t)


def little_j(t, tau):
    """Weight J_tau(t) = K_tau'(t).

    At an endpoint where the exponent minus one is negative the derivative
    diverges; +inf is returned there instead of a NaN.  For tau inside
    (0, 1) both r and s are >= 1 on their own branch, so this only guards
    against misuse.  ``J_0.5`` is identically one.
    """
    tau = as_tau(tau)
    x = _unit_arg(t)
    if tau == 0.5:
        return _scalar_or_array(np.ones_like(x), t)
    if tau < 0.5:
        s = exponent_s(tau)
        base = 1.0 - x
        expo = s - 1.0
        scale = s
    else:
        r = exponent_r(tau)
        base = x
        expo = r - 1.0
        scale = r
    # 0.0 ** negative is inf under numpy, which is the documented sentinel
    with np.errstate(divide="ignore"):
        out = scale * np.power(base, expo)
    return _scalar_or_array(out, t)


# Wichura (1988) algorithm AS241, PPND16.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coefs, x):
    acc = np.zeros_like(x) + coefs[-1]
    for c in coefs[-2::-1]:
        acc = acc * x + c
    return acc


def std_normal_quantile(p):
    """Standard normal quantile function (AS241, about 1e-16 relative accuracy)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any((p_arr <= 0) | (p_arr >= 1)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    q = p_arr - 0.5
    central = np.abs(q) <= 0.425
    out = np.empty_like(p_arr)

    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _poly(_A, r) / _poly(_B, r)

    tail = ~central
    if np.any(tail):
        qt = q[tail]
        pt = p_arr[tail]
        r = np.sqrt(-np.log(np.where(qt < 0, pt, 1.0 - pt)))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _poly(_C, rn) / _poly(_D, rn)
        rf = r[~near] - 5.0
        val[~near] = _poly(_E, rf) / _poly(_F, rf)
        out[tail] = np.where(qt < 0, -val, val)
    return _scalar_or_array(out, p)


_PANELS_PER_HALF = 50
_NODES_PER_PANEL = 20
_SMALLEST_BREAK = 1e-13


@lru_cache(maxsize=1)
def unit_interval_rule():
    """Nodes and weights of the fixed 2000-point rule on (0, 1).

    Panels on (0, 1/2] have geometrically shrinking widths toward 0, the
    right half mirrors them.  Returned arrays are read-only.
    """
    ratio = (_SMALLEST_BREAK / 0.5) ** (1.0 / (_PANELS_PER_HALF - 1))
    breaks = np.concatenate([[0.0], 0.5 * ratio ** np.arange(_PANELS_PER_HALF - 1, -1, -1)])
    x, w = np.polynomial.legendre.leggauss(_NODES_PER_PANEL)
    left_nodes, left_weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        half = (hi - lo) / 2
        left_nodes.append(lo + half * (x + 1))
        left_weights.append(half * w)
    ln = np.concatenate(left_nodes)
    lw = np.concatenate(left_weights)
    nodes = np.concatenate([ln, (1.0 - ln)[::-1]])
    weights = np.concatenate([lw, lw[::-1]])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=None)
def _gaussian_moments(tau):
    nodes, weights = unit_interval_rule()
    zq = std_normal_quantile(nodes)
    jw = weights * little_j(nodes, tau)
    mu = float(np.sum(jw * zq))
    var = float(np.sum(jw * (zq - mu) ** 2))
    return mu, var


def gaussian_extremile(tau) -> float:
    """Extremile of order tau of N(0, 1): the integral of Phi^-1(t) J_tau(t)."""
    tau = as_tau(tau)
    if tau == 0.5:
        return 0.0
    return _gaussian_moments(tau)[0]


def gaussian_extremile_variance(tau) -> float:
    """Integral of (Phi^-1(t) - mu_tau)^2 J_tau(t) over (0, 1)."""
    tau = as_tau(tau)
    if tau == 0.5:
        return 1.0
    return _gaussian_moments(tau)[1]


def adaptive_factor(tau) -> float:
    """Fifth root of 4 tau (1-tau) V_tau J_tau(tau)^2, the level-dependent bandwidth scale.

    At tau = 1/2 every term is known in closed form and the factor is
    exactly one.
    """
    tau = as_tau(tau)
    if tau == 0.5:
        return 1.0
    jt = little_j(tau, tau)
    return float((4.0 * tau * (1.0 - tau) * gaussian_extremile_variance(tau) * jt**2) ** 0.2)
