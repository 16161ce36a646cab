import subprocess
import sys

import pytest

from mgsync.cli import main
from mgsync.engine import read_csv
from mgsync.scenario import bundled, parse_scenario


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert "case1.cfg" in out and "case4.cfg" in out


def test_validate(capsys):
    assert main(["validate", "--scenario", str(bundled("case2"))]) == 0
    assert "ok" in capsys.readouterr().out


def test_run_writes_csv_with_overrides(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code = main(["run", "--scenario", str(bundled("case1")), "--out", str(out),
                 "--set", "duration=1.0", "--set", "controller.kp_phase=0.03", "--decimate", "20"])
    assert code == 0
    ts = read_csv(out)
    assert ts.header["overrides"] == "duration=1.0 controller.kp_phase=0.03 decimate=20"
    assert len(ts) == 51
    assert "time to sync" in capsys.readouterr().out


def test_calibrate_writes_scenario(tmp_path):
    out = tmp_path / "cal.cfg"
    assert main(["calibrate", "--scenario", str(bundled("case1")), "--out", str(out)]) == 0
    s = parse_scenario(out)
    assert s.is_calibrated
    assert s.dgs[0].w_set0 == pytest.approx(parse_scenario(bundled("case1")).dgs[0].w_set0)


@pytest.mark.parametrize("args", [
    ["validate", "--scenario", "/nonexistent.cfg"],
    ["run", "--scenario", "/nonexistent.cfg", "--out", "/tmp/x.csv"],
    ["calibrate", "--scenario", "/nonexistent.cfg", "--out", "/tmp/x.cfg"],
])
def test_missing_file_is_an_error(args, capsys):
    assert main(args) != 0
    assert "error" in capsys.readouterr().err


def test_bad_inputs_are_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(bundled("case1").read_text().replace("dt: 0.001", "dt: -0.001"))
    assert main(["validate", "--scenario", str(bad)]) == 1
    assert "dt" in capsys.readouterr().err
    assert main(["run", "--scenario", str(bundled("case1")), "--out", str(tmp_path / "o.csv"),
                 "--set", "nonsense"]) == 1
    assert main(["run", "--scenario", str(bundled("case1")), "--out", str(tmp_path / "o.csv"),
                 "--set", "controller.nope=1"]) == 1


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "mgsync.cli", "list-scenarios"], capture_output=True, text=True)
    assert r.returncode == 0 and "case3.cfg" in r.stdout
