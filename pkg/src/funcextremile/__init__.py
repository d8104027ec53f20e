"""Conditional extremiles of a scalar response given a curve-valued covariate."""

__version__ = "0.1.0"

from .ccdf import CcdfModel, eval_ccdf, loo_bandwidths, select_hf_opt  # noqa: E402
from .curves import (Curve, CurveSample, Grid, distance_matrix, inner_product,  # noqa: E402
                     l2_distance, l2_norm, read_curves_csv, read_responses_csv)
from .extremile import (adaptive_factor, big_k, gaussian_extremile,  # noqa: E402
                        little_j)
from .fpca import FpcaBasis, fit_fpca  # noqa: E402
from .kernels import KernelSpec  # noqa: E402
from .quantile import QuantileFit, check_loss, fit_quantile, predict_quantiles  # noqa: E402
from .regression import (ExtremileConfig, ExtremileFit, ExtremileRegression,  # noqa: E402
                         fit_extremile, local_linear_mean, predict_extremiles, solve_wls)
from .simulation import (McResult, ScenarioConfig, crossing_rate, gen_scenario,  # noqa: E402
                         run_mc, run_pmse, true_extremile)

__all__ = [
    "CcdfModel", "eval_ccdf", "loo_bandwidths", "select_hf_opt",
    "Curve", "CurveSample", "Grid", "distance_matrix", "inner_product", "l2_distance",
    "l2_norm", "read_curves_csv", "read_responses_csv",
    "adaptive_factor", "big_k", "gaussian_extremile", "little_j",
    "FpcaBasis", "fit_fpca", "KernelSpec",
    "QuantileFit", "check_loss", "fit_quantile", "predict_quantiles",
    "ExtremileConfig", "ExtremileFit", "ExtremileRegression", "fit_extremile",
    "local_linear_mean", "predict_extremiles", "solve_wls",
    "McResult", "ScenarioConfig", "crossing_rate", "gen_scenario", "run_mc", "run_pmse",
    "true_extremile",
]
