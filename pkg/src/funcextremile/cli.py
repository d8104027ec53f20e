"""Command-line front end: ``simulate``, ``fit``, ``predict`` and ``report``.

Settings come from flags, then from a flat ``key = value`` file given by
``--config`` (keys are flag names without the dashes), then from defaults.
Every run writes ``manifest.cfg`` in that same format, so replaying it with
``--config`` reproduces the run.
"""

import argparse
import csv
import logging
import math
import os
import re
import sys

import numpy as np

from . import __version__
from .curves import (CurveSample, fmt, read_curves_csv, read_responses_csv, write_curves_csv,
                     write_responses_csv)
from .errors import FuncExtremileError
from .extremile import as_tau
from .fpca import write_basis_csv
from .kernels import KERNEL_FAMILIES
from .plotting import plot_amse, plot_extremile_profile
from .regression import ExtremileConfig, ExtremileRegression
from .simulation import (DEFAULT_TAUS, ScenarioConfig, attach_pmse, gen_scenario, run_mc,
                         true_extremiles, write_amse_csv, write_audit_jsonl, write_crossing_csv,
                         write_pmse_csv)

log = logging.getLogger("funcextremile")

COMMANDS = ("simulate", "fit", "predict", "report")
# never written to the manifest: they locate files rather than define the run
_NOT_IN_MANIFEST = {"out", "config", "command", "log_level"}


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- value parsers


def tau_list(text):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise argparse.ArgumentTypeError("the tau list is empty")
    try:
        taus = [as_tau(float(p)) for p in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise argparse.ArgumentTypeError("tau levels must be strictly increasing")
    return tuple(taus)


def boolean(text):
    low = str(text).strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def neighbours(text):
    return None if str(text).strip().lower() in ("cv", "auto") else positive_int(text)


def fraction(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("expected a value strictly between 0 and 1")
    return value


def positive_float(text):
    value = float(text)
    if not value > 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError("expected a positive number")
    return value


# ----------------------------------------------------------------- parser


def _shared(p):
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--curves", help="curve CSV: id,s_1,...,s_S")
    p.add_argument("--responses", help="response CSV: id,y")
    p.add_argument("--tau", type=tau_list, default=DEFAULT_TAUS, help="comma-separated levels")
    p.add_argument("--kernel", choices=KERNEL_FAMILIES, default="epanechnikov",
                   help="regression kernel")
    p.add_argument("--cdf-kernel", choices=KERNEL_FAMILIES, default="epanechnikov")
    p.add_argument("--kappa", type=positive_float, default=1.0)
    p.add_argument("--k-neighbors", type=neighbours, default=None,
                   help="fixed k, or 'cv' for leave-one-out selection (default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", choices=("A", "B"), default="A")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--grid", type=int, default=100, help="grid size S")
    p.add_argument("--reps", type=int, default=50, help="Monte Carlo replications")
    p.add_argument("--split", type=fraction, default=0.8, help="training share for PMSE")
    p.add_argument("--vhat-form", choices=("adopted", "printed"), default="adopted")
    p.add_argument("--qr-intercept", type=boolean, default=True)
    p.add_argument("--var-threshold", type=float, default=0.95)
    p.add_argument("--log-level", default="WARNING")


def build_parser():
    parser = argparse.ArgumentParser(prog="funcextremile",
                                     description="Extremile scalar-on-function regression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo campaign")
    _shared(sim)
    sim.add_argument("--sigma-eps", type=positive_float, default=0.25)
    sim.add_argument("--beta0", type=float, default=0.0)
    sim.add_argument("--skip-pmse", type=boolean, nargs="?", const=True, default=False)
    sim.add_argument("--emit-data", type=boolean, nargs="?", const=True, default=False,
                     help="also write replication 0 as curves/responses CSVs")

    fit = sub.add_parser("fit", help="fit extremiles at evaluation curves")
    _shared(fit)
    fit.add_argument("--eval-curves", help="curve CSV of evaluation points")
    fit.add_argument("--multiplier", type=float, default=5.0,
                     help="profiles are mean and mean +/- multiplier * first eigenfunction")

    pred = sub.add_parser("predict", help="predict extremiles at new curves")
    _shared(pred)
    pred.add_argument("--new-curves", required=False, help="curve CSV of new covariates")

    rep = sub.add_parser("report", help="render SVG charts from earlier outputs")
    _shared(rep)
    rep.add_argument("--input", help="directory with extremiles.csv / amse.csv (default: --out)")
    return parser


def _config_tokens(path, parser, command):
    """Turn a settings file into flag tokens placed before the real flags."""
    sub = parser._subparsers._group_actions[0].choices[command]
    known = {a.dest: a for a in sub._actions}
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (t.strip() for t in line.split("=", 1))
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r} for {command}")
            tokens += [known[dest].option_strings[0], value]
    return tokens


def parse_args(argv):
    parser = build_parser()
    argv = list(argv)
    cmd_pos = next((i for i, a in enumerate(argv) if a in COMMANDS), None)
    if cmd_pos is not None:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[cmd_pos + 1:])
        if known.config:
            if not os.path.isfile(known.config):
                raise UsageError(f"config file not found: {known.config}")
            tokens = _config_tokens(known.config, parser, argv[cmd_pos])
            argv = argv[:cmd_pos + 1] + tokens + argv[cmd_pos + 1:]
    return parser.parse_args(argv)


# ----------------------------------------------------------------- helpers


def _format_setting(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_manifest(path, args):
    lines = [f"# funcextremile {__version__} {args.command}"]
    for key in sorted(vars(args)):
        value = getattr(args, key)
        if key in _NOT_IN_MANIFEST or value is None:
            continue
        if key in ("curves", "responses", "eval_curves", "new_curves", "input"):
            value = os.path.abspath(value)
        lines.append(f"{key.replace('_', '-')} = {_format_setting(value)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def scenario_from_args(args) -> ScenarioConfig:
    return ScenarioConfig(
        scenario=args.scenario, n=args.n, S=args.grid, kappa=args.kappa,
        sigma_eps=getattr(args, "sigma_eps", 0.25), beta0=getattr(args, "beta0", 0.0),
        tau_grid=args.tau, B_reps=args.reps, kernel=args.kernel, cdf_kernel=args.cdf_kernel,
        seed=args.seed, k_neighbors=args.k_neighbors, split_fraction=args.split,
        vhat_form=args.vhat_form, qr_intercept=args.qr_intercept,
        var_threshold=args.var_threshold)


def estimator_config_from_args(args) -> ExtremileConfig:
    return ExtremileConfig(k_neighbors=args.k_neighbors, reg_kernel=args.kernel,
                           cdf_kernel=args.cdf_kernel, kappa=args.kappa,
                           vhat_form=args.vhat_form, var_threshold=args.var_threshold)


def write_estimates_csv(path, ids, taus, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"tau_{t:g}" for t in taus])
        for key, row in zip(ids, values):
            w.writerow([key] + [fmt(v) for v in row])


def read_estimates_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "id" or not all(c.startswith("tau_") for c in rows[0][1:]):
        raise FuncExtremileError(f"{path}: header must read id,tau_...")
    taus = [float(c[4:]) for c in rows[0][1:]]
    ids = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
    return ids, taus, values.reshape(len(ids), len(taus))


def _require(args, *names):
    missing = [n for n in names if not getattr(args, n)]
    if missing:
        raise UsageError(f"{args.command} needs " + ", ".join("--" + m.replace("_", "-")
                                                            for m in missing))


def _load_training(args):
    sample = read_curves_csv(args.curves)
    y = read_responses_csv(args.responses, sample.ids)
    return sample, y


def _report_failures(model):
    if model.failures:
        log.warning("%d cells had no positive weight and were left as nan", len(model.failures))


# ----------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    try:
        config = scenario_from_args(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    result = run_mc(config)
    if not args.skip_pmse:
        attach_pmse(result)
    write_amse_csv(os.path.join(args.out, "amse.csv"), [result])
    write_crossing_csv(os.path.join(args.out, "crossing.csv"), [result])
    if result.apmse is not None:
        write_pmse_csv(os.path.join(args.out, "pmse.csv"), [result])
    write_audit_jsonl(os.path.join(args.out, "audit.jsonl"), [result])
    if args.emit_data:
        data_dir = os.path.join(args.out, "data")
        os.makedirs(data_dir, exist_ok=True)
        sample, y, _ = gen_scenario(config, 0)
        ids = tuple(f"x{i + 1}" for i in range(sample.n))
        write_curves_csv(os.path.join(data_dir, "curves.csv"), CurveSample(sample.grid,
                                                                           sample.values, ids))
        write_responses_csv(os.path.join(data_dir, "responses.csv"), ids, y)
        write_estimates_csv(os.path.join(data_dir, "truth.csv"), ids, config.tau_grid,
                            true_extremiles(sample, config.tau_grid, config))
    write_manifest(os.path.join(args.out, "manifest.cfg"), args)
    return 0


def _profiles(basis, multiplier):
    mean = basis.mean.values
    if basis.n_components == 0:
        return CurveSample(basis.grid, mean[None, :], ("mean",))
    phi = basis.eigenfunctions[0]
    return CurveSample(basis.grid, np.array([mean - multiplier * phi, mean,
                                             mean + multiplier * phi]),
                       ("mean_minus", "mean", "mean_plus"))


def cmd_fit(args) -> int:
    _require(args, "curves", "responses")
    sample, y = _load_training(args)
    model = ExtremileRegression(estimator_config_from_args(args)).fit(sample, y)
    os.makedirs(args.out, exist_ok=True)
    profiles = _profiles(model.basis, args.multiplier)
    points = read_curves_csv(args.eval_curves) if args.eval_curves else profiles
    est = model.predict(points, args.tau)
    _report_failures(model)
    ids = points.ids or tuple(str(i + 1) for i in range(points.n))
    write_estimates_csv(os.path.join(args.out, "extremiles.csv"), ids, args.tau, est)
    write_curves_csv(os.path.join(args.out, "profiles.csv"), profiles)
    write_basis_csv(os.path.join(args.out, "basis.csv"), model.basis)
    write_manifest(os.path.join(args.out, "manifest.cfg"), args)
    log.info("K = %d components, k = %d neighbours", model.basis.n_components, model.k)
    return 0


def cmd_predict(args) -> int:
    _require(args, "curves", "responses", "new_curves")
    sample, y = _load_training(args)
    new = read_curves_csv(args.new_curves)
    model = ExtremileRegression(estimator_config_from_args(args)).fit(sample, y)
    est = model.predict(new, args.tau)
    _report_failures(model)
    os.makedirs(args.out, exist_ok=True)
    ids = new.ids or tuple(str(i + 1) for i in range(new.n))
    write_estimates_csv(os.path.join(args.out, "predictions.csv"), ids, args.tau, est)
    write_manifest(os.path.join(args.out, "manifest.cfg"), args)
    return 0


def _safe_name(text):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", text)


def _read_amse_rows(path):
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        taus = [float(c[4:]) for c in header[2:]]
        for r in reader:
            if r and r[1] == "amse_x1e3":
                rows[r[0]] = [float(v) for v in r[2:]]
    return taus, rows


def cmd_report(args) -> int:
    src = args.input or args.out
    est_path = os.path.join(src, "extremiles.csv")
    amse_path = os.path.join(src, "amse.csv")
    if not os.path.isfile(est_path) and not os.path.isfile(amse_path):
        raise FileNotFoundError(f"neither extremiles.csv nor amse.csv found in {src}")
    os.makedirs(args.out, exist_ok=True)
    if os.path.isfile(est_path):
        ids, taus, values = read_estimates_csv(est_path)
        cols = []
        for t in args.tau:
            match = [j for j, c in enumerate(taus) if abs(c - t) < 1e-12]
            if not match:
                raise FuncExtremileError(f"level {t:g} is not in {est_path}")
            cols.append(match[0])
        mid = [j for j, c in enumerate(taus) if c == 0.5]
        for key, row in zip(ids, values):
            mean_value = row[mid[0]] if mid else None
            plot_extremile_profile(os.path.join(args.out, f"profile_{_safe_name(key)}.svg"),
                                   [taus[j] for j in cols], row[cols], label=key,
                                   mean_value=mean_value)
    if os.path.isfile(amse_path):
        taus, rows = _read_amse_rows(amse_path)
        plot_amse(os.path.join(args.out, "amse.svg"), taus, rows)
    return 0


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "report": cmd_report}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"funcextremile: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"funcextremile: error: {exc}", file=sys.stderr)
        return 2
    except (FuncExtremileError, OSError, ValueError) as exc:
        print(f"funcextremile: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
