import json
import math
import subprocess
import sys

import numpy as np
import pytest

from ancilla_moments import cli
from ancilla_moments.config import ScenarioConfig, bundled_scenarios, schema
from ancilla_moments.errors import ConfigError
from ancilla_moments.gstate import MomentSpec, gaussian_moment

GOOD = """
name = "mini"

[state]
kind = "table"
x = [0.0193, 0.021, 0.060, 0.015]
p = [359.0, 398.0, 1.64, 1419.0]

[run]
T = 2000
seed = 4

[direct]
variances = ["x"]
"""


def read(path):
    return path.read_bytes()


# ---------------------------------------------------------------- config


def test_bundled_scenarios_validate():
    names = bundled_scenarios()
    assert {"table1", "table2", "table1-scan", "table2-scan", "paper-witness", "separable", "scaling"} <= set(names)
    for name in names:
        ScenarioConfig.load(name)


@pytest.mark.parametrize("name", ["table1", "table2-scan", "paper-witness", "scaling"])
def test_round_trip(name):
    cfg = ScenarioConfig.load(name)
    again = ScenarioConfig.from_toml(cfg.to_toml())
    assert again.data == cfg.data
    assert ScenarioConfig.from_toml(again.to_toml()).to_toml() == again.to_toml()


def test_schema_is_published():
    s = schema()
    assert s["additionalProperties"] is False
    assert "state" in s["required"]


def test_type_error_reports_line_and_field():
    text = GOOD.replace("T = 2000", 'T = "many"')
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_toml(text)
    problems = "\n".join(info.value.problems)
    line = text.splitlines().index('T = "many"') + 1
    assert f"line {line}: run.T" in problems


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_toml(GOOD + "\n[scan]\nvariable = \"x\"\nwidth = 3\n")
    assert any("width" in p for p in info.value.problems)


def test_bad_moment_rejected():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_toml(GOOD.replace('variances = ["x"]', 'moments = ["x1 p1"]'))
    assert any("direct.moments.0" in p for p in info.value.problems)


def test_unphysical_state_rejected():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_toml(GOOD.replace("p = [359.0, 398.0, 1.64, 1419.0]", "p = [1.0, 1.0, 2.0, 2.0]"))
    assert any(p.startswith("state:") for p in info.value.problems)


def test_invalid_toml():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_toml("name = [")


def test_copy_overrides():
    cfg = ScenarioConfig.load("table1").copy(**{"run.T": 10, "run.quantize": False})
    assert cfg.run("T") == 10 and cfg.run("quantize") is False
    with pytest.raises(ConfigError):
        ScenarioConfig.load("table1").copy(**{"run.T": 0})


def test_state_builders():
    s = ScenarioConfig.load("paper-witness").build_state()
    assert s.covariance("q1", "q2") == pytest.approx((287.4 - 1226.6) / 4)
    sep = ScenarioConfig.load("separable")
    a, b = sep.build_state(0), sep.build_state(1)
    assert not np.allclose(a.cov, b.cov)
    assert np.allclose(sep.build_state(0).cov, a.cov)


# ------------------------------------------------------------ subcommands


def test_direct_table1(tmp_path):
    res = cli.cmd_direct(ScenarioConfig.load("table1"), tmp_path)
    v = res["variances"]["var(x1)"]
    assert abs(v["value"] - 0.0193) <= 3 * v["error"]
    header = (tmp_path / "variances.csv").read_text().splitlines()[0]
    assert header == ",".join(cli.VARIANCE_COLUMNS)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["budget"]["settings_per_joint_moment"] == 7
    assert "clipped_fraction" in report


def test_direct_table2(tmp_path):
    res = cli.cmd_direct(ScenarioConfig.load("table2"), tmp_path)
    v = res["variances"]["var(p1-p2)"]
    assert abs(v["value"] - 1419) <= 3 * v["error"]


def test_direct_analytic_is_exact(tmp_path):
    cfg = ScenarioConfig.load("table1").copy(**{"run.quantize": False})
    res = cli.cmd_direct(cfg, tmp_path, analytic=True)
    state = cfg.build_state()
    for e in res["estimates"]:
        assert e.value == pytest.approx(gaussian_moment(state, e.spec), abs=1e-12)
        assert e.method == "analytic"
    assert res["variances"]["var(x1-x2)"]["value"] == pytest.approx(0.0403 - 0.0225, abs=1e-12)


def test_direct_is_deterministic(tmp_path):
    cfg = ScenarioConfig.from_toml(GOOD)
    cli.cmd_direct(cfg, tmp_path / "a")
    cli.cmd_direct(cfg, tmp_path / "b", workers=3)
    for name in ("moments.csv", "variances.csv"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


def test_scan_table1(tmp_path):
    res = cli.cmd_scan(ScenarioConfig.load("table1-scan"), tmp_path)
    e = res["var(x1-x2)"]["estimate"]
    assert abs(e.value - 0.015) <= 3 * e.std_error


def test_scan_is_byte_identical(tmp_path):
    cfg = ScenarioConfig.load("table2-scan")
    cli.cmd_scan(cfg, tmp_path / "a")
    cli.cmd_scan(cfg, tmp_path / "b")
    assert read(tmp_path / "a" / "scan.csv") == read(tmp_path / "b" / "scan.csv")
    assert read(tmp_path / "a" / "scan_histograms.csv") == read(tmp_path / "b" / "scan_histograms.csv")


def test_scan_narrow_grid_exit_code(tmp_path):
    text = GOOD + '\n[scan]\nvariable = "x"\nmodes = ["single1"]\ngrid = [-0.1, 0.1, 11]\n'
    cfg = tmp_path / "narrow.toml"
    cfg.write_text(text)
    assert cli.main(["scan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_RUNTIME


def test_witness_separable(tmp_path):
    res = cli.cmd_witness(ScenarioConfig.load("separable"), tmp_path)
    assert res["report"].violations == []
    assert (tmp_path / "correlations.csv").exists()


# The two examples below ask for x/p at 5 sigma and |cross-axis C| < 0.05 with
# only 1e5 pairs per setting.  With the reference optics the counting noise on
# the witness sum is about 0.4 and on each cross-axis coefficient about 0.3,
# so both are expected to fail; see the README.


def test_witness_5_sigma_at_1e5(tmp_path):
    cfg = ScenarioConfig.load("paper-witness").copy(**{"witness.T": {}})
    rep = cli.cmd_witness(cfg, tmp_path)["report"]
    entry = rep.witness["x/p"]
    assert entry["value"] > 1
    assert (entry["value"] - 1) / entry["error"] >= 5


def test_witness_cross_axis_small_at_1e5(tmp_path):
    cfg = ScenarioConfig.load("paper-witness").copy(**{"witness.T": {}})
    rep = cli.cmd_witness(cfg, tmp_path)["report"]
    for key in ("x1,y2", "y1,x2", "p1,q2", "q1,p2"):
        assert abs(rep.correlations[key]["value"]) < 0.05


def test_witness_outputs(tmp_path):
    cfg = ScenarioConfig.load("paper-witness").copy(**{"witness.T": {}})
    cli.cmd_witness(cfg, tmp_path, analytic=True)
    data = json.loads((tmp_path / "witness.json").read_text())
    assert set(data["references"]) == {"x/p table", "x/p reported", "y/q reported"}
    lines = (tmp_path / "correlations.csv").read_text().splitlines()
    assert len(lines) == 5 and len(lines[1].split(",")) == 9


def test_scaling_command(tmp_path):
    cfg = ScenarioConfig.load("scaling").copy(**{"scaling.repeats": 200})
    res = cli.cmd_scaling(cfg, tmp_path)
    assert -1.1 <= res["slope"] <= -0.9
    for row in res["rows"]:
        T, mse = row[0], row[4]
        assert mse <= 1.2 / T
        assert row[6] <= 1.0 / T
    assert dict(res["budget"])[2] == 7
    comp = (tmp_path / "settings_comparison.csv").read_text().splitlines()
    assert comp[0] == "points_per_axis,dimension,scanning_settings,direct_settings"
    assert comp[2] == "10,2,100,7"


# -------------------------------------------------------------- entry point


def test_main_validate():
    assert cli.main(["validate", "--config", "table1"]) == cli.EXIT_OK


def test_main_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(GOOD.replace("T = 2000", "T = -5"))
    assert cli.main(["direct", "--config", str(bad)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "run.T" in err and "line" in err


def test_main_missing_scenario():
    assert cli.main(["validate", "--config", "no-such-scenario"]) == cli.EXIT_CONFIG


def test_main_writes_only_files(tmp_path):
    cfg = tmp_path / "mini.toml"
    cfg.write_text(GOOD)
    out = tmp_path / "out"
    proc = subprocess.run([sys.executable, "-m", "ancilla_moments.cli", "direct", "--config", str(cfg),
                           "--out", str(out), "--seed", "12"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout == ""
    assert json.loads((out / "report.json").read_text())["seed"] == 12
