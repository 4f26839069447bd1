import json
import subprocess
import sys

import pytest

from sphere_amplitudes.harness.cli import main
from sphere_amplitudes.harness.config import ConfigError, load_scenario, parse_scenario
from sphere_amplitudes.harness.report import CSV_COLUMNS, Check, Report, emit, merge
from sphere_amplitudes.harness.suites import ValidationError, run


def test_parse_full_scenario():
    scn = parse_scenario("suite: mu-scan\nseed: 7\nresolution: 32\nd: 0.2\ntolerances:\n  slope_decay: 0.3\n"
                         "params:\n  extra: 1\nformat: csv\n")
    assert (scn.suite, scn.seed, scn.resolution, scn.d, scn.format) == ("mu-scan", 7, 32, 0.2, "csv")
    assert scn.tol("slope_decay", 0.4) == 0.3 and scn.tol("other", 0.5) == 0.5
    assert scn.get("extra") == 1 and scn.get("d", 1.0) == 0.2


@pytest.mark.parametrize("text, line, field", [
    ("suite: geometry\nseed: -1\n", 2, "seed"),
    ("suite: geometry\nresolution: 4\n", 2, "resolution"),
    ("suite: geometry\nd: abc\n", 2, "d"),
    ("suite: geometry\nmu: 0\n", 2, "mu"),
    ("suite: geometry\ndegree: 5\n", 2, "degree"),
    ("suite: geometry\ntolerances:\n  markov: -1e-9\n", 3, "tolerances.markov"),
    ("suite: geometry\ncolour: red\n", 2, "colour"),
    ("suite: geometry\nseed: 1\nseed: 2\n", 3, "seed"),
    ("suite: nonsense\n", 1, "suite"),
    ("suite: geometry\nformat: xml\n", 2, "format"),
    ("suite: geometry\nparams: 3\n", 2, "params"),
])
def test_config_errors_name_line_and_field(text, line, field):
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text, "scn.yaml")
    msg = str(exc.value)
    assert f"line {line}" in msg and f"'{field}'" in msg and msg.startswith("scn.yaml")


def test_config_syntax_and_missing_suite():
    with pytest.raises(ConfigError, match="line 2"):
        parse_scenario("suite: geometry\n  bad: [\n")
    with pytest.raises(ConfigError, match="missing field 'suite'"):
        parse_scenario("seed: 3\n")
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario("/nonexistent/scenario.yaml")


def test_check_modes():
    assert Check("a", "x", 1.0, 1.0, 1e-3, 1e-2).passed
    assert not Check("a", "x", 1.0, 1.0, 1e-1, 1e-2).passed
    assert Check("a", "x", 1.0, None, 0.5, 0.4, mode="min").passed
    assert not Check("a", "x", float("nan"), None, float("nan"), 1.0).passed
    assert Check.boolean("b", "x", True).passed and not Check.boolean("b", "x", False).passed


def test_empty_report_csv_is_header_only():
    assert Report("geometry", 0).to_csv() == ",".join(CSV_COLUMNS) + "\n"


def test_failing_check_row():
    rep = Report("geometry", 0, [Check("bad", "anchor", 2.0, 1.0, 1.0, 1e-3)])
    rows = rep.to_csv().splitlines()
    assert rows[1].endswith(",false") and not rep.passed and rep.summary()["failed"] == 1


def test_json_round_trip():
    rep = Report("x", 5, [Check("a", "b", 1.5, 1.0, 0.5, 1.0), Check("c", "d", None, None, 0.7, 0.5, mode="min")],
                 {"curve": [1.0, 0.5]})
    back = Report.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
    tampered = json.loads(rep.to_json())
    tampered["checks"][0]["pass"] = False
    with pytest.raises(ValueError):
        Report.from_dict(tampered)


def test_emit_and_unwritable_path(tmp_path):
    rep = Report("x", 0, [Check("a", "b", 1.0, 1.0, 0.0, 1.0)])
    assert emit(rep, tmp_path / "r.csv", "csv").read_text() == rep.to_csv()
    with pytest.raises(OSError):
        emit(rep, tmp_path / "missing" / "r.json")


def test_merge_orders_by_suite():
    a = Report("b-suite", 0, [Check("one", "x", 0, 0, 0, 1)])
    b = Report("a-suite", 0, [Check("two", "x", 0, 0, 0, 1)])
    assert [c.check for c in merge([a, b]).checks] == ["a-suite/two", "b-suite/one"]


def test_cli_unknown_suite(capsys):
    assert main(["nonsense"]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("suite: geometry\nresolution: 2\n")
    assert main(["geometry", "--config", str(cfg)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_cli_non_separating_region_is_rejected(tmp_path, capsys):
    cfg = tmp_path / "rp.yaml"
    cfg.write_text("suite: markov-rp\nparams:\n  separator_t: 0.0\n  inside_t: 0.5\n")
    out = tmp_path / "report.json"
    assert main(["markov-rp", "--config", str(cfg), "--out", str(out)]) == 2
    assert "does not separate" in capsys.readouterr().err
    assert not out.exists()


def test_run_raises_validation_error():
    with pytest.raises(ValidationError):
        run(parse_scenario("suite: markov-rp\nparams:\n  separator_t: 0.0\n  inside_t: 0.5\n"))


def test_cli_failing_tolerance_exits_one(tmp_path):
    cfg = tmp_path / "tight.yaml"
    cfg.write_text("suite: geometry\ntolerances:\n  distance_ratio: 1.0e-9\n")
    out = tmp_path / "r.csv"
    assert main(["geometry", "--config", str(cfg), "--format", "csv", "--out", str(out)]) == 1
    rows = out.read_text().splitlines()
    assert rows[0] == ",".join(CSV_COLUMNS)
    assert any(r.endswith(",false") for r in rows[1:])


def test_cli_deterministic_bytes(tmp_path):
    paths = [tmp_path / f"r{i}.json" for i in range(2)]
    for p in paths:
        assert main(["massless-cft", "--seed", "11", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    other = tmp_path / "r_other.json"
    main(["massless-cft", "--seed", "12", "--out", str(other)])
    assert other.read_bytes() != paths[0].read_bytes()


def test_cli_geometry_defaults_pass(capsys):
    assert main(["geometry", "--format", "text"]) == 0
    assert "10/10 passed" in capsys.readouterr().out


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sphere_amplitudes.harness.cli", "nonsense"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
