"""Experiment harness: CSV plumbing, dispatch, determinism, CLI."""

import numpy as np
import pytest

from sweeploc.cli import DEFAULT_SCENARIO, main
from sweeploc.experiments import (
    EXPERIMENTS,
    ExperimentSpec,
    ResultTable,
    emit_csv,
    read_csv,
    render_csv,
    run_experiment,
)
from sweeploc.scenario import ConfigError, scenario_to_yaml
from sweeploc.scenarios import BUILTIN_SCENARIOS, bench_scenario, farm_scenario


def _table():
    return ResultTable(
        columns=("name", "count", "value"),
        rows=[("a", 1, 0.1), ("b", 2, np.float64(0.25)),
              ("c", np.int64(3), float("nan"))],
        meta={"experiment": "demo", "seed": 7, "ratio": 0.3})


def test_render_csv_layout():
    text = render_csv(_table())
    lines = text.split("\n")
    assert lines[0] == "# experiment=demo"
    assert lines[1] == "# seed=7"
    assert lines[2] == "# ratio=0.3"
    assert lines[3] == "name,count,value"
    assert lines[4] == "a,1,0.1"
    assert text.endswith("\n")
    # numpy scalars must not leak their repr into the file
    assert "np.float64" not in text and "np.int64" not in text
    assert lines[5] == "b,2,0.25"


def test_csv_round_trip(tmp_path):
    path = str(tmp_path / "t.csv")
    emit_csv(_table(), path)
    back = read_csv(path)
    assert back.columns == ("name", "count", "value")
    assert back.meta == {"experiment": "demo", "seed": 7, "ratio": 0.3}
    assert back.rows[0] == ("a", 1, 0.1)
    assert back.rows[1] == ("b", 2, 0.25)
    assert np.isnan(back.rows[2][2])
    assert back.column("count")[:2] == [1, 2]


def test_read_csv_requires_header(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("# experiment=none\n")
    with pytest.raises(ConfigError):
        read_csv(str(path))


def test_spec_validation():
    scn = bench_scenario()
    with pytest.raises(ConfigError):
        ExperimentSpec("multipath_grid", scn, trials=0)
    with pytest.raises(ConfigError):
        ExperimentSpec("multipath_grid", scn, workers=0)
    with pytest.raises(ConfigError):
        run_experiment(ExperimentSpec("no_such_experiment", scn))


def test_registry_names_match_cli_defaults():
    assert set(DEFAULT_SCENARIO) == set(EXPERIMENTS)
    assert set(DEFAULT_SCENARIO.values()) <= set(BUILTIN_SCENARIOS)


def test_grid_deterministic_across_workers_and_seeds():
    spec1 = ExperimentSpec("multipath_grid", bench_scenario(seed=42),
                           trials=128, workers=1)
    spec2 = ExperimentSpec("multipath_grid", bench_scenario(seed=42),
                           trials=128, workers=2)
    text1 = render_csv(run_experiment(spec1))
    text2 = render_csv(run_experiment(spec2))
    assert text1 == text2
    other = ExperimentSpec("multipath_grid", bench_scenario(seed=43),
                           trials=128, workers=1)
    assert render_csv(run_experiment(other)) != text1


def test_grid_columns_and_rows():
    spec = ExperimentSpec("multipath_grid", bench_scenario(seed=1),
                          trials=64)
    table = run_experiment(spec)
    assert table.columns == ("antenna_count", "multipath_ratio", "trials",
                             "mean_abs_error_deg", "mean_signed_error_deg")
    ratios = sorted(set(table.column("multipath_ratio")))
    counts = sorted(set(table.column("antenna_count")))
    assert len(table.rows) == len(ratios) * len(counts)
    assert all(t == 64 for t in table.column("trials"))
    assert all(e >= 0 for e in table.column("mean_abs_error_deg"))


def test_farm_cdf_shape():
    spec = ExperimentSpec("farm_cdf", farm_scenario(seed=5), trials=48)
    table = run_experiment(spec)
    assert table.columns == ("x_m", "y_m", "multipath_ratio", "error_m",
                             "cdf")
    errs = table.column("error_m")
    cdf = table.column("cdf")
    assert errs == sorted(errs)
    assert cdf == sorted(cdf)
    assert cdf[-1] == pytest.approx(1.0)
    assert "median_error_m" in table.meta
    assert table.meta["margin_m"] == 5.0


def test_ber_experiment_columns():
    spec = ExperimentSpec("ber_vs_snr", bench_scenario(seed=2), trials=2000)
    table = run_experiment(spec)
    assert table.columns == ("snr_db", "bits", "errors", "ber",
                             "ci95_half_width")
    assert all(b == 2000 for b in table.column("bits"))
    bers = table.column("ber")
    snrs = table.column("snr_db")
    assert snrs == sorted(snrs)
    # high SNR end is clean, low end is not
    assert bers[-1] == 0.0
    assert bers[0] > 0.1


def test_power_report_values():
    spec = ExperimentSpec("power_report", bench_scenario(seed=0))
    table = run_experiment(spec)
    row = {r[0]: r for r in table.rows}
    assert 4.0 in row
    assert row[4.0][1] == pytest.approx(137.5)
    assert row[4.0][3] == pytest.approx(1000.0 / 137.5, rel=1e-6)
    assert "rf_charge_time_h" in table.meta
    assert table.meta["solar_1klux_uw"] == pytest.approx(1.0)
    assert table.meta["solar_20klux_uw"] == pytest.approx(50.0)


def test_emit_via_run_experiment(tmp_path):
    path = str(tmp_path / "out.csv")
    spec = ExperimentSpec("power_report", bench_scenario(seed=0),
                          out_path=path)
    table = run_experiment(spec)
    assert read_csv(path).rows == read_csv(path).rows
    assert render_csv(read_csv(path)) == render_csv(table)


def test_cli_run_and_scenario(tmp_path, capsys):
    out = str(tmp_path / "p.csv")
    assert main(["run", "power-report", "--out", out]) == 0
    table = read_csv(out)
    assert table.meta["experiment"] == "power_report"
    assert main(["scenario", "bench"]) == 0
    captured = capsys.readouterr()
    assert captured.out.endswith(scenario_to_yaml(bench_scenario()))


def test_cli_seed_and_trials(tmp_path):
    out = str(tmp_path / "g.csv")
    code = main(["run", "multipath_grid", "--trials", "32", "--seed", "9",
                 "--workers", "2", "--out", out])
    assert code == 0
    table = read_csv(out)
    assert table.meta["seed"] == 9
    assert table.meta["trials"] == 32


def test_cli_errors(tmp_path):
    out = str(tmp_path / "x.csv")
    # missing scenario file -> io error
    assert main(["run", "farm_cdf", "--scenario", "/no/such.yaml",
                 "--out", out]) in (1, 2)
    # invalid trials -> config error
    assert main(["run", "farm_cdf", "--trials", "0", "--out", out]) == 2
