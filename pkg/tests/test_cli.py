import csv
import dataclasses
import json

import pytest

from cloudsync.cli import (
    EXIT_DESIGN, EXIT_IO, EXIT_MONITOR, EXIT_OK, main, read_certificate, write_certificate,
)
from cloudsync.scenario import ScenarioError, bundled_scenario_path, load_scenario, parse_scenario

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

BUNDLED = bundled_scenario_path()


def raw_bundled():
    with BUNDLED.open("rb") as fh:
        return tomllib.load(fh)


def dump_toml(raw, path):
    """Minimal writer for the flat scenario layout (tables of scalars and arrays)."""
    lines = []
    for sec, body in raw.items():
        lines.append(f"[{sec}]")
        for k, v in body.items():
            lines.append(f"{k} = {json.dumps(v)}")
        lines.append("")
    path.write_text("\n".join(lines))
    return path


@pytest.fixture(scope="module")
def designed(tmp_path_factory):
    out = tmp_path_factory.mktemp("design")
    assert main(["design", "--scenario", str(BUNDLED), "--out-dir", str(out)]) == EXIT_OK
    return out


def test_bundled_scenario_parses():
    sc = load_scenario(BUNDLED)
    assert sc.graph.n_agents == 4 and sc.x0.shape == (4, 2)
    assert sc.contraction_override == (2.3268, 0.7736)
    assert len(sc.design_hash()) == 64


def test_scenario_strictness(tmp_path):
    raw = raw_bundled()
    raw["design"]["varho"] = 0.6
    with pytest.raises(ScenarioError, match="unknown key"):
        parse_scenario(raw)
    raw = raw_bundled()
    raw["extra"] = {}
    with pytest.raises(ScenarioError, match="unknown section"):
        parse_scenario(raw)
    raw = raw_bundled()
    del raw["threshold"]["s0"]
    with pytest.raises(ScenarioError, match="missing"):
        parse_scenario(raw)
    raw = raw_bundled()
    raw["simulation"]["x0"] = [[1.0, 2.0]]
    with pytest.raises(ScenarioError, match="x0"):
        parse_scenario(raw)
    raw = raw_bundled()
    raw["plant"]["b"] = [[1.0, 0.0]]
    with pytest.raises(ScenarioError):
        parse_scenario(raw)
    bad = tmp_path / "bad.toml"
    bad.write_text("[plant\na = 1")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


def test_design_report(designed):
    report = (designed / "design_report.txt").read_text()
    assert "F               : [0.774597" in report
    assert "epsilon         : 0.0636" in report
    cert = json.loads((designed / "certificate.json").read_text())
    assert set(cert) == {"format", "scenario_hash", "checksum", "body"}


def test_round_trip_and_report(designed, tmp_path):
    cert = designed / "certificate.json"
    rc = main(["simulate", "--scenario", str(BUNDLED), "--certificate", str(cert),
               "--out-dir", str(tmp_path), "--horizon-override", "0.5", "--strict-monitors"])
    assert rc == EXIT_OK
    for name in ("trajectory.csv", "events.csv", "summary.json"):
        assert (tmp_path / name).exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert main(["report", "--out-dir", str(tmp_path)]) == EXIT_OK
    agg = json.loads((tmp_path / "report.json").read_text())
    assert agg["settle_time"] == summary["settle_time"]
    assert agg["crossing_time"] == summary["settle_time"]
    rows = list(csv.reader((tmp_path / "access_raster.csv").open()))
    assert rows[0] == ["time_s", "agent"]
    # 0.5 s horizon: nothing falls in [5, 8]
    assert len(rows) == 1


def test_report_raster_window(tmp_path):
    (tmp_path / "summary.json").write_text(json.dumps({"epsilon": 0.1, "settle_time": 0.002}))
    (tmp_path / "trajectory.csv").write_text("t_s,x_1_1,delta_norm\n0.0,1.0,0.5\n0.001,1.0,0.2\n0.002,1.0,0.05\n")
    (tmp_path / "events.csv").write_text(
        "time_s,agent,access_count,next_access_time_s\n4.9,1,1,5.2\n5.2,1,2,8.1\n8.1,1,3,inf\n")
    assert main(["report", "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = list(csv.reader((tmp_path / "access_raster.csv").open()))
    assert rows == [["time_s", "agent"], ["5.2", "1"]]
    assert json.loads((tmp_path / "report.json").read_text())["crossing_time"] == 0.002


def test_report_empty_events(tmp_path):
    (tmp_path / "summary.json").write_text(json.dumps({"epsilon": 0.1, "settle_time": 0.0}))
    (tmp_path / "trajectory.csv").write_text("t_s,delta_norm\n0.0,0.0\n")
    (tmp_path / "events.csv").write_text("time_s,agent,access_count,next_access_time_s\n")
    assert main(["report", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "access_raster.csv").read_text().splitlines() == ["time_s,agent"]


def test_report_malformed(tmp_path):
    assert main(["report", "--out-dir", str(tmp_path)]) == EXIT_IO


def test_corrupted_certificate(designed, tmp_path):
    doc = json.loads((designed / "certificate.json").read_text())
    doc["body"]["epsilon"] = 1.0
    bad = tmp_path / "cert.json"
    bad.write_text(json.dumps(doc))
    rc = main(["simulate", "--scenario", str(BUNDLED), "--certificate", str(bad),
               "--out-dir", str(tmp_path), "--horizon-override", "0.1"])
    assert rc == EXIT_IO


def test_certificate_for_other_scenario(designed, tmp_path):
    raw = raw_bundled()
    raw["threshold"]["s_inf"] = 0.02
    other = dump_toml(raw, tmp_path / "other.toml")
    rc = main(["simulate", "--scenario", str(other), "--certificate", str(designed / "certificate.json"),
               "--out-dir", str(tmp_path), "--horizon-override", "0.1"])
    assert rc == EXIT_IO


def test_simulation_only_section_change_keeps_hash(designed, tmp_path):
    raw = raw_bundled()
    raw["simulation"]["horizon"] = 0.1
    other = dump_toml(raw, tmp_path / "other.toml")
    cert = read_certificate(designed / "certificate.json", load_scenario(other))
    assert cert.n_agents == 4


def test_design_failures_exit_2(tmp_path):
    raw = raw_bundled()
    raw["graph"]["edges"] = [[1, 2], [3, 4]]
    rc = main(["design", "--scenario", str(dump_toml(raw, tmp_path / "g.toml")), "--out-dir", str(tmp_path)])
    assert rc == EXIT_DESIGN
    raw = raw_bundled()
    raw["threshold"]["lambda_s"] = 0.7736
    rc = main(["design", "--scenario", str(dump_toml(raw, tmp_path / "l.toml")), "--out-dir", str(tmp_path)])
    assert rc == EXIT_DESIGN


def test_missing_scenario_exit_4(tmp_path):
    assert main(["design", "--scenario", str(tmp_path / "nope.toml")]) == EXIT_IO


def test_monitor_violation_exit_3(designed, tmp_path):
    sc = load_scenario(BUNDLED)
    cert = read_certificate(designed / "certificate.json", sc)
    # a certificate that promises impossibly long access intervals
    write_certificate(dataclasses.replace(cert, tau_star=(10.0,) * 4), sc, tmp_path / "c.json")
    args = ["simulate", "--scenario", str(BUNDLED), "--certificate", str(tmp_path / "c.json"),
            "--out-dir", str(tmp_path), "--horizon-override", "0.3"]
    assert main(args) == EXIT_MONITOR
    assert (tmp_path / "summary.json").exists()          # record-and-continue by default
    assert main(args + ["--strict-monitors"]) == EXIT_MONITOR
