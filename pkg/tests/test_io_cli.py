import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polaron import cli, io, pekar
from polaron.errors import ConfigurationError, NumericalError


# --- configuration ----------------------------------------------------------

def test_defaults_fill_every_key():
    cfg = io.parse_config("mcmc-polaron")
    assert set(cfg.params) == set(io.SCHEMAS["mcmc-polaron"])
    assert cfg.params["T"] == 4.0 and cfg.seed == 0 and cfg.replicas == 1


@pytest.mark.parametrize("override, key", [
    ({"epsilon": "-1"}, "mcmc-polaron.epsilon"),
    ({"n_steps": "500"}, "mcmc-polaron.n_steps"),
    ({"beta": "abc"}, "mcmc-polaron.beta"),
    ({"bogus": "1"}, "mcmc-polaron.bogus"),
    ({"run.replicas": "0"}, "run.replicas"),
])
def test_errors_name_the_key(override, key):
    with pytest.raises(ConfigurationError, match=key.replace(".", r"\.")):
        io.parse_config("mcmc-polaron", overrides=override)


def test_unknown_section_and_subcommand():
    with pytest.raises(ConfigurationError):
        io.parse_config("sigma2", text="[sweep]\nn_samples = 2000\n")
    with pytest.raises(ConfigurationError):
        io.parse_config("fly")


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[run]\nseed = 5\n[sigma2]\nalpha = 2.0\n")
    cfg = io.parse_config("sigma2", path, {"alpha": "3.0", "run.seed": "6"})
    assert cfg.params["alpha"] == 3.0 and cfg.seed == 6


@settings(max_examples=50, deadline=None)
@given(eps=st.floats(1e-3, 1e3), lags=st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=4),
       seed=st.integers(0, 2**64 - 1))
def test_ini_round_trip(eps, lags, seed):
    cfg = io.parse_config("sweep", overrides={"epsilons": ",".join(repr(e) for e in [eps]),
                                              "lags": ",".join(map(repr, lags)), "run.seed": str(seed)})
    again = io.parse_config("sweep", text=cfg.to_ini())
    assert again.echo() == cfg.echo() and again.input_hash() == cfg.input_hash()


def test_output_not_part_of_input_hash():
    a = io.parse_config("sigma2", overrides={"run.output": "a"})
    b = io.parse_config("sigma2", overrides={"run.output": "b"})
    assert a.input_hash() == b.input_hash()


# --- seeds ----------------------------------------------------------------------

def test_derive_seed_examples():
    s = io.derive_seed(1, 0, "mcmc")
    assert s == io.derive_seed(1, 0, "mcmc") and 0 <= s < 2**64
    assert s != io.derive_seed(1, 1, "mcmc")
    assert s != io.derive_seed(1, 0, "cluster")
    assert s != io.derive_seed(2, 0, "mcmc")


def test_derive_seed_no_collisions():
    labels = ["pekar", "compare", "mcmc-polaron", "cluster-sim", "solve-lambda", "sample-pekar",
              "thermo-integration", "eps=1.0", "eps=0.5", "eps=0.25"]
    seeds = {io.derive_seed(m, r, lab) for m in range(1000) for r in range(100) for lab in labels}
    assert len(seeds) == 1000 * 100 * len(labels)


# --- artifacts ------------------------------------------------------------------------

def test_float_round_trip_17_digits(tmp_path, rng):
    values = rng.standard_normal(1000) * 10.0 ** rng.integers(-300, 300, 1000)
    entry = io.write_artifact(tmp_path / "v.json", io.dumps({"v": values.tolist()}))
    back = json.loads((tmp_path / "v.json").read_text())["v"]
    assert np.array_equal(np.array(back), values) and entry["bytes"] > 0


def test_profile_csv_round_trip(solved):
    back = pekar.RadialProfile.from_csv(solved.profile.to_csv())
    assert np.array_equal(back.values, solved.profile.values) and back.grid == solved.profile.grid


def test_failed_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "x.csv"
    io.write_artifact(target, "old\n")

    def boom(src, dst):
        raise OSError("disk full")
    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        io.write_artifact(target, "new content\n")
    assert target.read_text() == "old\n"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.csv"]


# --- command line ---------------------------------------------------------------------

def run_cli(*args):
    return cli.main(list(args))


def test_solve_pekar_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run_cli("solve-pekar", "--set", "n=400", "--output", str(tmp_path / name)) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma == mb
    assert {f["name"] for f in ma["files"]} == {"profile.csv", "summary.json"}
    run = json.loads((tmp_path / "a" / "run.json").read_text())
    assert run["status"] == "ok" and run["wall_clock_seconds"] > 0
    # the echoed config reproduces the run
    cfg = io.parse_config("solve-pekar", tmp_path / "a" / "config.ini")
    assert cfg.input_hash() == ma["input_hash"]


def test_exit_codes(tmp_path, monkeypatch, capsys):
    out = str(tmp_path / "o")
    assert run_cli("mcmc-polaron", "--set", "epsilon=-1", "--output", out) == 2
    assert "mcmc-polaron.epsilon" in capsys.readouterr().err
    assert run_cli("sigma2", "--set", "nope=1", "--output", out) == 2
    assert run_cli("sigma2", "--set", "alpha", "--output", out) == 2
    assert run_cli("report", "--output", out) == 2
    assert run_cli("solve-lambda", "--set", "lambda_lo=5", "--set", "lambda_hi=10",
                   "--set", "n_clusters=2000", "--output", out) == 4

    def broken(cfg):
        raise NumericalError("overflow")
    monkeypatch.setitem(cli.COMMANDS, "solve-pekar", broken)
    assert run_cli("solve-pekar", "--output", out) == 3


def test_report_reads_sweep_output(tmp_path):
    from polaron import experiments
    rows = [experiments.ReportRow(1.0, "cluster", 1.0, 0.05, 0.001, 0.8, 0.01, 1.5, 0.001, "ok"),
            experiments.ReportRow(0.5, "cluster", 1.0, 0.02, 0.001, 0.7, 0.01, 1.0, 0.001, "ok")]
    rep = experiments.ComparisonReport(rows, 0.217, {"plan": {}})
    sweep_dir = tmp_path / "sweep"
    io.write_artifact(sweep_dir / "report.csv", rep.to_csv())
    io.write_artifact(sweep_dir / "metadata.json", rep.metadata_json())
    assert run_cli("report", "--set", f"input={sweep_dir}", "--output", str(tmp_path / "r")) == 0
    trend = json.loads((tmp_path / "r" / "trend.json").read_text())
    assert trend["g_moves_toward_g0"] and trend["distance_non_increasing"]["1.0"]
