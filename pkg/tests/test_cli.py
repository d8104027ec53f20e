import csv
import os

import numpy as np
import pytest

from funcextremile.cli import main, read_estimates_csv
from funcextremile.curves import CurveSample, Grid, read_curves_csv, write_curves_csv, \
    write_responses_csv
from funcextremile.regression import ExtremileRegression
from funcextremile.simulation import ScenarioConfig, gen_scenario

SIM = ["simulate", "--scenario", "A", "--n", "40", "--grid", "20", "--reps", "2", "--seed", "7"]


def read_bytes(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))
            if os.path.isfile(os.path.join(d, f))}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(SIM + ["--out", str(out), "--emit-data"]) == 0
    return out


def test_simulate_writes_tables(sim_dir):
    names = set(os.listdir(sim_dir))
    assert {"amse.csv", "crossing.csv", "pmse.csv", "audit.jsonl", "manifest.cfg"} <= names
    header = (sim_dir / "amse.csv").read_text().splitlines()[0].split(",")
    assert len([h for h in header if h.startswith("tau_")]) == 9


def test_simulate_is_byte_identical(sim_dir, tmp_path):
    assert main(SIM + ["--out", str(tmp_path), "--emit-data"]) == 0
    assert read_bytes(sim_dir) == read_bytes(tmp_path)


def test_manifest_replays(sim_dir, tmp_path):
    assert main(["simulate", "--config", str(sim_dir / "manifest.cfg"), "--out",
                 str(tmp_path)]) == 0
    assert read_bytes(sim_dir) == read_bytes(tmp_path)


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep\nn = 30\ngrid = 15\nreps = 3\nskip-pmse = true\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--reps", "1", "--out", str(out)]) == 0
    manifest = (out / "manifest.cfg").read_text()
    assert "reps = 1" in manifest and "n = 30" in manifest
    assert not (out / "pmse.csv").exists()


@pytest.mark.parametrize("argv", [
    ["simulate", "--reps", "0"],
    ["simulate", "--tau", ""],
    ["simulate", "--tau", "0.5,0.2"],
    ["simulate", "--kernel", "box"],
    ["simulate", "--n", "5"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["simulate", "--config", str(cfg)]) == 2


def test_emitted_data_round_trip(sim_dir, tmp_path):
    data = sim_dir / "data"
    assert main(["fit", "--curves", str(data / "curves.csv"), "--responses",
                 str(data / "responses.csv"), "--eval-curves", str(data / "curves.csv"),
                 "--out", str(tmp_path)]) == 0
    ids, taus, values = read_estimates_csv(tmp_path / "extremiles.csv")
    cfg = ScenarioConfig(n=40, S=20, seed=7)
    sample, y, _ = gen_scenario(cfg, 0)
    expected = ExtremileRegression().fit(sample, y).predict(sample, taus)
    np.testing.assert_allclose(values, expected, atol=1e-9, rtol=0)
    assert len(ids) == 40


def write_dataset(tmp_path, y):
    rng = np.random.default_rng(0)
    g = Grid.uniform(15)
    sample = CurveSample(g, rng.normal(size=(len(y), 15)), [f"s{i}" for i in range(len(y))])
    write_curves_csv(tmp_path / "x.csv", sample)
    write_responses_csv(tmp_path / "y.csv", sample.ids, y)
    return sample


def test_fit_constant_responses(tmp_path):
    write_dataset(tmp_path, np.full(30, 172.5))
    assert main(["fit", "--curves", str(tmp_path / "x.csv"), "--responses",
                 str(tmp_path / "y.csv"), "--out", str(tmp_path / "o")]) == 0
    ids, _, values = read_estimates_csv(tmp_path / "o" / "extremiles.csv")
    assert ids == ["mean_minus", "mean", "mean_plus"]
    np.testing.assert_allclose(values, 172.5, atol=1e-9)
    profiles = read_curves_csv(tmp_path / "o" / "profiles.csv")
    assert profiles.n == 3
    assert (tmp_path / "o" / "basis.csv").exists()


def test_fit_median_column_is_local_linear_mean(tmp_path):
    sample = write_dataset(tmp_path, np.random.default_rng(1).normal(size=30))
    y = np.loadtxt(tmp_path / "y.csv", delimiter=",", skiprows=1, usecols=1)
    assert main(["fit", "--curves", str(tmp_path / "x.csv"), "--responses",
                 str(tmp_path / "y.csv"), "--out", str(tmp_path / "o"), "--tau",
                 "0.25,0.5,0.75", "--multiplier", "1"]) == 0
    _, taus, values = read_estimates_csv(tmp_path / "o" / "extremiles.csv")
    model = ExtremileRegression().fit(sample, y)
    profiles = read_curves_csv(tmp_path / "o" / "profiles.csv")
    np.testing.assert_allclose(values[:, 1], model.local_linear_mean(profiles), atol=1e-9)


def test_predict(tmp_path):
    write_dataset(tmp_path, np.random.default_rng(2).normal(size=30))
    assert main(["predict", "--curves", str(tmp_path / "x.csv"), "--responses",
                 str(tmp_path / "y.csv"), "--new-curves", str(tmp_path / "x.csv"),
                 "--tau", "0.3,0.6", "--out", str(tmp_path / "p")]) == 0
    rows = list(csv.reader(open(tmp_path / "p" / "predictions.csv")))
    assert rows[0] == ["id", "tau_0.3", "tau_0.6"] and len(rows) == 31
    assert main(["predict", "--curves", str(tmp_path / "x.csv"), "--responses",
                 str(tmp_path / "y.csv"), "--out", str(tmp_path / "p")]) == 2


def test_fit_data_errors_exit_1(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("id,0,1\na,1,zz\n")
    (tmp_path / "y.csv").write_text("id,y\na,1\n")
    assert main(["fit", "--curves", str(tmp_path / "x.csv"), "--responses",
                 str(tmp_path / "y.csv"), "--out", str(tmp_path)]) == 1
    assert "row 2, column 3" in capsys.readouterr().err
    assert main(["fit", "--curves", str(tmp_path / "missing.csv"), "--responses",
                 str(tmp_path / "y.csv"), "--out", str(tmp_path)]) == 1


def test_report_svgs(tmp_path):
    out = tmp_path / "r"
    out.mkdir()
    (out / "extremiles.csv").write_text(
        "id,tau_0.1,tau_0.2,tau_0.3,tau_0.4,tau_0.5,tau_0.6,tau_0.7,tau_0.8,tau_0.9\n"
        "mean,1,2,3,4,5,6,7,8,9\n")
    assert main(["report", "--out", str(out)]) == 0
    svg = (out / "profile_mean.svg").read_text()
    group = svg[svg.index('id="extremile-points"'):]
    markers = group.split("<g clip-path", 1)[1].split("</g>", 1)[0]
    assert markers.count("<use ") == 9
    first = (out / "profile_mean.svg").read_bytes()
    assert main(["report", "--out", str(out)]) == 0
    assert (out / "profile_mean.svg").read_bytes() == first
    assert main(["report", "--out", str(out), "--tau", ""]) == 2
    assert main(["report", "--out", str(out), "--tau", "0.15"]) == 1
    assert main(["report", "--out", str(tmp_path / "empty")]) == 1


def test_report_amse_chart(sim_dir, tmp_path):
    assert main(["report", "--input", str(sim_dir), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "amse.svg").read_text().startswith("<?xml")
