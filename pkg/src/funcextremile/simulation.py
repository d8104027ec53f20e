"""Monte Carlo engine: scenario generators, analytic truth, AMSE/SD, crossing and PMSE.

Every replication draws from its own generator seeded by
``SeedSequence(seed, spawn_key=(rep,))`` so results do not depend on the
order in which replications run.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import BSpline

from .curves import Curve, CurveSample, Grid, fmt, pairwise_distances
from .errors import CampaignError, FuncExtremileError
from .extremile import as_tau, gaussian_extremile
from .fpca import FpcaBasis, fit_fpca
from .quantile import fit_quantile
from .regression import ExtremileConfig, ExtremileRegression

log = logging.getLogger(__name__)

SCENARIOS = ("A", "B")
DEFAULT_TAUS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
MAX_FAILURE_SHARE = 0.05

_A_SDS = np.array([0.5, 0.5, 0.25, 0.05, 0.05])
_B_MEANS = np.array([0.0, 2.0, 0.0, 0.0, 0.0])
_B_SDS = np.array([0.25, 1.0, 0.5, 0.05, 0.05])

# stream tags appended to the replication index
_DATA_STREAM = ()
_SPLIT_STREAM = (1,)


@dataclass(frozen=True)
class ScenarioConfig:
    """A simulation campaign.  ``coef_scale`` multiplies every coefficient SD."""

    scenario: str = "A"
    n: int = 200
    S: int = 100
    kappa: float = 1.0
    sigma_eps: float = 0.25
    beta0: float = 0.0
    tau_grid: Tuple[float, ...] = DEFAULT_TAUS
    B_reps: int = 50
    kernel: str = "epanechnikov"
    cdf_kernel: str = "epanechnikov"
    seed: int = 0
    k_neighbors: Optional[int] = None
    split_fraction: float = 0.8
    vhat_form: str = "adopted"
    qr_intercept: bool = True
    var_threshold: float = 0.95
    coef_scale: float = 1.0

    def __post_init__(self):
        scen = str(self.scenario).upper()
        if scen not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        object.__setattr__(self, "scenario", scen)
        taus = tuple(as_tau(t) for t in self.tau_grid)
        if not taus or any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("tau_grid must be a nonempty strictly increasing sequence")
        object.__setattr__(self, "tau_grid", taus)
        if int(self.n) < 20:
            raise ValueError("n must be at least 20")
        if int(self.S) < 10:
            raise ValueError("S must be at least 10")
        if int(self.B_reps) < 1:
            raise ValueError("B_reps must be positive")
        if not self.sigma_eps > 0 or not self.kappa > 0:
            raise ValueError("sigma_eps and kappa must be positive")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.coef_scale < 0:
            raise ValueError("coef_scale must be nonnegative")
        # surfaces bad kernel names, k or vhat_form now rather than mid-campaign
        self.estimator_config()

    @property
    def grid(self) -> Grid:
        return Grid.uniform(int(self.S))

    @property
    def n_train(self) -> int:
        return int(round(self.split_fraction * self.n))

    def estimator_config(self) -> ExtremileConfig:
        return ExtremileConfig(k_neighbors=self.k_neighbors, reg_kernel=self.kernel,
                               cdf_kernel=self.cdf_kernel, kappa=self.kappa,
                               vhat_form=self.vhat_form, var_threshold=self.var_threshold)

    def label(self) -> str:
        return f"{self.scenario}:n={self.n},S={self.S},kappa={self.kappa:g},kernel={self.kernel}"

    def with_updates(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        d = asdict(self)
        d["tau_grid"] = list(self.tau_grid)
        return d


@dataclass
class McResult:
    """Aggregated campaign output for one setting (vectors run over ``taus``)."""

    config: ScenarioConfig
    taus: Tuple[float, ...]
    amse: np.ndarray
    sd: np.ndarray
    per_rep_mse: np.ndarray
    crossing_rate_extremile: float
    crossing_rate_quantile: float
    reps_used: int
    failed_reps: List[int] = field(default_factory=list)
    failed_cells: int = 0
    sd_defined: bool = True
    apmse: Optional[np.ndarray] = None
    sd_pmse: Optional[np.ndarray] = None
    per_rep_pmse: Optional[np.ndarray] = None
    audit: List[dict] = field(default_factory=list)


# ----------------------------------------------------------------- data generation


def bspline_basis(df: int, grid: Grid) -> List[Curve]:
    """Cubic B-splines with ``df`` functions on [0, 1], clamped, equally spaced interior knots."""
    df = int(df)
    if df < 4:
        raise ValueError("a cubic B-spline basis needs df >= 4")
    interior = np.linspace(0.0, 1.0, df - 2)[1:-1]
    knots = np.concatenate([np.zeros(4), interior, np.ones(4)])
    values = BSpline(knots, np.eye(df), 3, extrapolate=True)(grid.points)
    return [Curve(grid, np.clip(values[:, j], 0.0, None)) for j in range(df)]


def scenario_basis(scenario: str, grid: Grid) -> np.ndarray:
    """(5, S) matrix of the functions the covariates are built from."""
    if scenario == "A":
        return np.array([c.values for c in bspline_basis(7, grid)[1:-1]])
    s = grid.points
    return np.array([np.ones_like(s), np.sin(np.pi * s), np.cos(10 * np.pi * s),
                     np.sin(30 * np.pi * s), np.cos(40 * np.pi * s)])


def beta_function(grid: Grid) -> np.ndarray:
    return 2.0 * np.cos(2.0 * np.pi * grid.points)


def rep_rng(seed, rep_index, stream=_DATA_STREAM) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep_index),) + stream))


def _linear_part(values, grid, beta0):
    return beta0 + values @ (grid.quad_weights * beta_function(grid))


def _sigma(values, grid):
    return 1.0 + np.abs(values) @ grid.quad_weights


def gen_scenario(config: ScenarioConfig, rep_index):
    """Draw one replication: (curves, responses, sigma(X_i))."""
    grid = config.grid
    rng = rep_rng(config.seed, rep_index)
    if config.scenario == "A":
        means, sds = np.zeros(5), _A_SDS
    else:
        means, sds = _B_MEANS, _B_SDS
    coefs = means + config.coef_scale * sds * rng.standard_normal((config.n, 5))
    values = coefs @ scenario_basis(config.scenario, grid)
    eps = rng.standard_normal(config.n)
    sigma = _sigma(values, grid)
    y = _linear_part(values, grid, config.beta0) + config.sigma_eps * sigma * eps
    return CurveSample(grid, values), y, sigma


def true_extremiles(sample: CurveSample, taus, config: ScenarioConfig) -> np.ndarray:
    """(n, len(taus)) matrix of analytic conditional extremiles."""
    mu = np.array([gaussian_extremile(t) for t in taus])
    lin = _linear_part(sample.values, sample.grid, config.beta0)
    sig = _sigma(sample.values, sample.grid)
    return lin[:, None] + config.sigma_eps * sig[:, None] * mu[None, :]


def true_extremile(x: Curve, tau, config: ScenarioConfig) -> float:
    return float(true_extremiles(CurveSample(x.grid, x.values[None, :]), [tau], config)[0, 0])


# ----------------------------------------------------------------- metrics


def crossing_in_rep(estimates) -> bool:
    """True when some row has an earlier level strictly above a later one.

    Missing (NaN) cells are skipped, so an inversion across a gap still counts.
    """
    est = np.asarray(estimates, dtype=float)
    if est.ndim != 2 or est.shape[1] < 2:
        return False
    running = np.fmax.accumulate(est, axis=1)
    with np.errstate(invalid="ignore"):
        return bool(np.any(running[:, :-1] > est[:, 1:]))


def crossing_rate(per_rep_estimates: Sequence) -> float:
    """Share of replications with at least one crossing."""
    flags = [crossing_in_rep(e) for e in per_rep_estimates]
    return float(np.mean(flags)) if flags else 0.0


def _mean_sd(per_rep):
    per_rep = np.asarray(per_rep, dtype=float)
    mean = per_rep.mean(axis=0)
    if per_rep.shape[0] < 2:
        return mean, np.zeros_like(mean), False
    return mean, per_rep.std(axis=0, ddof=1), True


# ----------------------------------------------------------------- estimators

Estimator = Callable[..., np.ndarray]


def extremile_estimator(train: CurveSample, y, points: CurveSample, taus, config: ScenarioConfig,
                        basis: Optional[FpcaBasis] = None, pairwise=None, dist=None):
    """Default estimator: extremile regression fitted on ``train``, evaluated at ``points``."""
    model = ExtremileRegression(config.estimator_config())
    model.fit(train, y, basis=basis, pairwise=pairwise)
    return model.predict(points, taus, dist=dist)


def oracle_estimator(train, y, points: CurveSample, taus, config: ScenarioConfig, **_):
    """Returns the analytic truth; plugging it in must give zero error."""
    return true_extremiles(points, taus, config)


def quantile_estimates(basis: FpcaBasis, train: CurveSample, y, points: CurveSample, taus,
                       intercept=True) -> np.ndarray:
    train_scores = basis.scores(train)
    point_scores = basis.scores(points)
    cols = [fit_quantile(train_scores, y, t, intercept=intercept).predict(point_scores)
            for t in taus]
    return np.column_stack(cols)


# ----------------------------------------------------------------- campaigns


def _run_rep(config, rep, estimator, with_quantile):
    sample, y, _ = gen_scenario(config, rep)
    taus = config.tau_grid
    basis = fit_fpca(sample, config.var_threshold)
    pw = pairwise_distances(sample)
    est = estimator(sample, y, sample, taus, config, basis=basis, pairwise=pw, dist=pw)
    truth = true_extremiles(sample, taus, config)
    sq = (est - truth) ** 2
    failed = int(np.count_nonzero(np.isnan(sq)))
    if failed == sq.size:
        raise FuncExtremileError("every cell failed")
    with np.errstate(invalid="ignore"):
        mse = np.nanmean(sq, axis=0)
    if np.any(np.isnan(mse)):
        raise FuncExtremileError("a level failed at every evaluation point")
    cross_q = None
    if with_quantile:
        q = quantile_estimates(basis, sample, y, sample, taus, intercept=config.qr_intercept)
        cross_q = crossing_in_rep(q)
    return dict(rep=rep, mse=mse, failed_cells=failed, K=basis.n_components,
                crossing_extremile=crossing_in_rep(est), crossing_quantile=cross_q)


def _pmse_rep(config, rep, estimator):
    sample, y, _ = gen_scenario(config, rep)
    perm = rep_rng(config.seed, rep, _SPLIT_STREAM).permutation(config.n)
    n_train = config.n_train
    if not 0 < n_train < config.n:
        raise ValueError("split leaves an empty training or test set")
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    train, test = sample.subset(train_idx), sample.subset(test_idx)
    est = estimator(train, y[train_idx], test, config.tau_grid, config)
    sq = (est - true_extremiles(test, config.tau_grid, config)) ** 2
    failed = int(np.count_nonzero(np.isnan(sq)))
    with np.errstate(invalid="ignore"):
        pmse = np.nanmean(sq, axis=0)
    if np.any(np.isnan(pmse)):
        raise FuncExtremileError("a level failed at every test point")
    return dict(rep=rep, pmse=pmse, failed_cells=failed, n_train=n_train,
                n_test=int(test_idx.size))


def _campaign(config, job, label):
    records, failures = [], []
    for rep in range(config.B_reps):
        try:
            records.append(job(rep))
        except (FuncExtremileError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("%s replication %d failed: %s", label, rep, exc)
            failures.append(dict(rep=rep, error=f"{type(exc).__name__}: {exc}"))
    if len(failures) > MAX_FAILURE_SHARE * config.B_reps:
        raise CampaignError(
            f"{label}: {len(failures)} of {config.B_reps} replications failed "
            f"(limit {MAX_FAILURE_SHARE:.0%})")
    if not records:
        raise CampaignError(f"{label}: no replication succeeded")
    return records, failures


def run_mc(config: ScenarioConfig, estimator: Estimator = extremile_estimator,
           with_quantile=True) -> McResult:
    """In-sample AMSE/SD and crossing rates for both estimators, paired by replication."""
    records, failures = _campaign(
        config, lambda rep: _run_rep(config, rep, estimator, with_quantile), "mc")
    per_rep = np.array([r["mse"] for r in records])
    amse, sd, sd_defined = _mean_sd(per_rep)
    if not sd_defined:
        log.warning("a single replication leaves the SD undefined; reporting 0")
    cross_e = float(np.mean([r["crossing_extremile"] for r in records]))
    cross_q = (float(np.mean([r["crossing_quantile"] for r in records]))
               if with_quantile else float("nan"))
    audit = [dict(kind="mc", rep=r["rep"], mse=[float(v) for v in r["mse"]],
                  failed_cells=r["failed_cells"], K=r["K"],
                  crossing_extremile=r["crossing_extremile"],
                  crossing_quantile=r["crossing_quantile"]) for r in records]
    audit += [dict(kind="mc", **f) for f in failures]
    audit.sort(key=lambda a: a["rep"])
    return McResult(config=config, taus=config.tau_grid, amse=amse, sd=sd, per_rep_mse=per_rep,
                    crossing_rate_extremile=cross_e, crossing_rate_quantile=cross_q,
                    reps_used=len(records), failed_reps=[f["rep"] for f in failures],
                    failed_cells=sum(r["failed_cells"] for r in records),
                    sd_defined=sd_defined, audit=audit)


def run_pmse(config: ScenarioConfig, estimator: Estimator = extremile_estimator,
             return_records=False):
    """Out-of-sample APMSE and SD per level from random train/test splits."""
    records, failures = _campaign(config, lambda rep: _pmse_rep(config, rep, estimator), "pmse")
    per_rep = np.array([r["pmse"] for r in records])
    apmse, sd, _ = _mean_sd(per_rep)
    if not return_records:
        return apmse, sd
    audit = [dict(kind="pmse", rep=r["rep"], pmse=[float(v) for v in r["pmse"]],
                  failed_cells=r["failed_cells"], n_train=r["n_train"], n_test=r["n_test"])
             for r in records]
    audit += [dict(kind="pmse", **f) for f in failures]
    audit.sort(key=lambda a: a["rep"])
    return apmse, sd, per_rep, audit


def attach_pmse(result: McResult, estimator: Estimator = extremile_estimator) -> McResult:
    apmse, sd, per_rep, audit = run_pmse(result.config, estimator, return_records=True)
    result.apmse, result.sd_pmse, result.per_rep_pmse = apmse, sd, per_rep
    result.audit = result.audit + audit
    return result


# ----------------------------------------------------------------- tables


def _tau_header(taus):
    return [f"tau_{t:g}" for t in taus]


def _stat_rows(label, name, values):
    scaled = 1e3 * np.asarray(values, dtype=float)
    return [[label, f"{name}_x1e3"] + [fmt(v) for v in scaled],
            [label, f"{name}_x1e3_rounded"] + [str(int(round(v))) if math.isfinite(v) else "nan"
                                               for v in scaled]]


def write_amse_csv(path, results: Sequence[McResult]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "statistic"] + _tau_header(results[0].taus))
        for r in results:
            label = r.config.label()
            w.writerows(_stat_rows(label, "amse", r.amse))
            w.writerows(_stat_rows(label, "sd", r.sd))


def write_pmse_csv(path, results: Sequence[McResult]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "statistic"] + _tau_header(results[0].taus))
        for r in results:
            if r.apmse is None:
                continue
            label = r.config.label()
            w.writerows(_stat_rows(label, "apmse", r.apmse))
            w.writerows(_stat_rows(label, "sd", r.sd_pmse))


def write_crossing_csv(path, results: Sequence[McResult]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "crossing_extremile", "crossing_quantile", "reps_used",
                    "failed_reps", "failed_cells"])
        for r in results:
            w.writerow([r.config.label(), fmt(r.crossing_rate_extremile),
                        fmt(r.crossing_rate_quantile), r.reps_used, len(r.failed_reps),
                        r.failed_cells])


def write_audit_jsonl(path, results: Sequence[McResult]):
    with open(path, "w") as fh:
        for r in results:
            for rec in r.audit:
                fh.write(json.dumps(dict(setting=r.config.label(), **rec), sort_keys=True) + "\n")
