import csv
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from rbmkpz.cli import main as cli_main
from rbmkpz.harness import (
    ComparisonReport,
    ExperimentConfig,
    dkw_band,
    ecdf,
    ks_distance,
    meta_hash,
    run_experiment,
)


# ---------------------------------------------------------------------------
# config validation


def test_config_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"kind": "mc-vs-limit", "seed": 1,
                                    "flavour": "packed"})


def test_config_requires_seed():
    with pytest.raises(ValueError, match="seed"):
        ExperimentConfig.from_dict({"kind": "mc-vs-limit"})


def test_config_rejects_bad_kind():
    with pytest.raises(ValueError, match="unknown kind"):
        ExperimentConfig.from_dict({"kind": "mc-vs-mc", "seed": 1})


def test_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"kind": "mc-vs-limit", "seed": 1,
                                    "samples": 0})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"kind": "mc-vs-limit", "seed": 1,
                                    "t": [-4.0]})


def test_config_scalar_promoted_to_tuple():
    cfg = ExperimentConfig.from_dict(
        {"kind": "mc-vs-limit", "seed": 3, "t": 25, "r": 0.5})
    assert cfg.t == (25.0,)
    assert cfg.r == (0.5,)


def test_config_round_trip_and_hash():
    d = {"kind": "finite-t-vs-limit", "flavor": "packed", "seed": 7,
         "t": [25.0, 100.0], "s": [0.0], "lambda": 1.0, "rho": 0.5}
    cfg = ExperimentConfig.from_dict(d)
    cfg2 = ExperimentConfig.from_dict(cfg.to_dict())
    assert cfg == cfg2
    assert meta_hash(cfg) == meta_hash(cfg2)
    assert len(meta_hash(cfg)) == 12
    assert cfg.params() == {"lambda": 1.0, "rho": 0.5}


# ---------------------------------------------------------------------------
# ECDF / KS / DKW


def test_dkw_band_value():
    # sqrt(log(200)/2e4) at n = 10^4, alpha = 0.01
    assert dkw_band(10_000) == pytest.approx(0.016277, abs=1e-6)
    assert dkw_band(100) == pytest.approx(math.sqrt(math.log(200.0) / 200.0))
    with pytest.raises(ValueError):
        dkw_band(0)


def test_ecdf_step_sides():
    table = ecdf([1.0, 2.0, 2.0, 3.0])
    assert table.eval_right(2.0) == pytest.approx(0.75)
    assert table.eval_left(2.0) == pytest.approx(0.25)
    assert table.eval_right(0.0) == 0.0
    assert table.eval_left(10.0) == 1.0


def test_ecdf_rejects_bad_input():
    with pytest.raises(ValueError):
        ecdf([])
    with pytest.raises(ValueError):
        ecdf([1.0, np.nan])


def test_ks_distance_exact_uniform():
    # ECDF of {0.5} vs the CDF of U(0,1): sup distance is 0.5, attained
    # from both sides of the single jump.
    table = ecdf([0.5])
    d = ks_distance(table, lambda x: min(max(x, 0.0), 1.0),
                    np.linspace(0.0, 1.0, 101))
    assert d == pytest.approx(0.5)


def test_ks_distance_large_sample_gaussian():
    rng = np.random.default_rng(0)
    from scipy.stats import norm
    table = ecdf(rng.standard_normal(20_000))
    d = ks_distance(table, norm.cdf, np.linspace(-4, 4, 41))
    assert d <= dkw_band(20_000)


# ---------------------------------------------------------------------------
# report files


def test_report_write_and_round_trip(tmp_path):
    rep = ComparisonReport(kind="property-suite", passed=True,
                           statistics={"mean": 2.01}, band=None,
                           metadata={"meta_hash": "abc"})
    out = tmp_path / "rep.json"
    rep.write(out)
    loaded = json.loads(out.read_text())
    assert loaded["passed"] is True
    assert loaded["statistics"]["mean"] == 2.01
    assert "timestamp" in loaded


def _attract_config(tmp_path, seed=5):
    return ExperimentConfig.from_dict({
        "kind": "property-suite", "process": "attract", "seed": seed,
        "samples": 4, "t": [1.0], "dt": 0.05,
        "out": str(tmp_path / "attract.json")})


def test_property_suite_attract_report(tmp_path):
    report = run_experiment(_attract_config(tmp_path))
    assert report.passed
    assert report.statistics["violations"] == 0
    assert (tmp_path / "attract.json").exists()


def test_property_suite_unknown_name(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "kind": "property-suite", "process": "nosuch", "seed": 1,
        "out": str(tmp_path / "x.json")})
    with pytest.raises(ValueError, match="unknown property suite"):
        run_experiment(cfg)


def _mc_limit_config(out_dir, seed=11):
    return ExperimentConfig.from_dict({
        "kind": "mc-vs-limit", "flavor": "packed", "seed": seed,
        "samples": 60, "t": [4.0], "r": [0.0], "s": [-1.0, 0.0, 1.0],
        "dt": 0.02, "order": 40, "out": str(out_dir / "mc.json")})


def test_mc_vs_limit_emits_all_files(tmp_path):
    report = run_experiment(_mc_limit_config(tmp_path))
    stem = tmp_path / "mc"
    samples = stem.with_suffix(".samples.csv")
    cdf = stem.with_suffix(".cdf.csv")
    png = stem.with_suffix(".png")
    for f in (samples, cdf, png, tmp_path / "mc.json"):
        assert f.exists(), f
    assert str(png) in report.files

    with open(samples) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["replica", "r", "theta", "value"]
    assert len(rows) == 1 + 60

    with open(cdf) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["r", "s", "value", "order", "meta_hash"]
    assert len(rows) == 1 + 3
    vals = [float(r[2]) for r in rows[1:]]
    assert vals == sorted(vals)  # CDF increasing in s


def test_reports_bit_reproducible(tmp_path):
    d1 = tmp_path / "run1"
    d2 = tmp_path / "run2"
    d1.mkdir()
    d2.mkdir()
    run_experiment(_mc_limit_config(d1))
    run_experiment(_mc_limit_config(d2))

    j1 = json.loads((d1 / "mc.json").read_text())
    j2 = json.loads((d2 / "mc.json").read_text())
    j1.pop("timestamp")
    j2.pop("timestamp")
    # the file list embeds the output directory; compare basenames
    j1["files"] = [f.rsplit("/", 1)[-1] for f in j1["files"]]
    j2["files"] = [f.rsplit("/", 1)[-1] for f in j2["files"]]
    # meta_hash covers the whole config, output path included
    for j in (j1, j2):
        j["metadata"]["config"].pop("out")
        j["metadata"].pop("meta_hash")
    assert j1 == j2

    assert ((d1 / "mc.samples.csv").read_bytes()
            == (d2 / "mc.samples.csv").read_bytes())

    def cdf_sans_hash(path):
        with open(path) as fh:
            return [row[:-1] for row in csv.reader(fh)]

    assert cdf_sans_hash(d1 / "mc.cdf.csv") == cdf_sans_hash(d2 / "mc.cdf.csv")


def test_finite_t_vs_limit_sweep(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "kind": "finite-t-vs-limit", "flavor": "packed", "seed": 0,
        "t": [25.0, 100.0], "s": [0.0], "order": 40,
        "out": str(tmp_path / "sweep.json")})
    report = run_experiment(cfg)
    assert report.passed
    assert (report.statistics["sup_dist_t=100"]
            <= report.statistics["sup_dist_t=25"])
    assert (tmp_path / "sweep.cdf.csv").exists()
    assert (tmp_path / "sweep.png").exists()


# ---------------------------------------------------------------------------
# CLI


def test_cli_simulate(tmp_path):
    out = tmp_path / "sim.csv"
    runner = CliRunner()
    res = runner.invoke(cli_main, [
        "simulate", "--flavor", "packed", "--t", "4", "--r", "0",
        "--samples", "10", "--seed", "2", "--dt", "0.02",
        "--out", str(out)])
    assert res.exit_code == 0, res.output
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["replica", "r", "theta", "value"]
    assert len(rows) == 11


def test_cli_finite_cdf_sweep_and_joint(tmp_path):
    runner = CliRunner()
    out = tmp_path / "f.csv"
    res = runner.invoke(cli_main, [
        "finite-cdf", "--flavor", "packed", "--t", "4", "--n", "4",
        "--a", "4,6,8", "--order", "40", "--out", str(out)])
    assert res.exit_code == 0, res.output
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "n", "a", "value", "order", "meta_hash"]
    assert len(rows) == 4
    vals = [float(r[3]) for r in rows[1:]]
    assert vals == sorted(vals)

    out2 = tmp_path / "j.csv"
    res = runner.invoke(cli_main, [
        "finite-cdf", "--flavor", "packed", "--t", "4", "--n", "1,2",
        "--a", "3,6.5", "--order", "40", "--out", str(out2)])
    assert res.exit_code == 0, res.output
    with open(out2) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["t", "n_1", "n_2", "a_1", "a_2"]
    assert len(rows) == 2
    assert 0.0 <= float(rows[1][5]) <= 1.0

    res = runner.invoke(cli_main, [
        "finite-cdf", "--flavor", "packed", "--t", "4", "--n", "1,2",
        "--a", "3", "--out", str(tmp_path / "bad.csv")])
    assert res.exit_code != 0


def test_cli_limit_cdf(tmp_path):
    runner = CliRunner()
    out = tmp_path / "l.csv"
    res = runner.invoke(cli_main, [
        "limit-cdf", "--process", "airy2", "--r", "0", "--s", "-1,0,1",
        "--out", str(out)])
    assert res.exit_code == 0, res.output
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["r", "s", "value", "order", "meta_hash"]
    # middle row is the GUE Tracy-Widom CDF at 0
    assert float(rows[2][2]) == pytest.approx(0.9693728, abs=1e-6)


def test_cli_compare_pass_and_kind_mismatch(tmp_path):
    cfg = {"kind": "property-suite", "process": "attract", "seed": 5,
           "samples": 4, "t": [1.0], "dt": 0.05,
           "out": str(tmp_path / "rep.json")}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    runner = CliRunner()
    res = runner.invoke(cli_main, [
        "compare", "--kind", "property-suite", "--config", str(cfg_path)])
    assert res.exit_code == 0, res.output
    assert "passed=True" in res.output

    res = runner.invoke(cli_main, [
        "compare", "--kind", "mc-vs-limit", "--config", str(cfg_path)])
    assert res.exit_code != 0
