import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qlink import config as cfgmod
from qlink.cli import main
from qlink.errors import ConfigError, DataError
from qlink.logio import format_log, manifest_path, read_log, write_log
from qlink.presets import preset
from qlink.simengine import EventLog, RunConfig, simulate_run


def parse_summary(line: str) -> dict:
    return dict(tok.split("=", 1) for tok in line.split() if "=" in tok)


class TestConfig:
    def test_defaults(self):
        doc = cfgmod.load(None)
        assert doc.preset == "A"
        assert doc.link == preset("A")

    def test_round_trip(self):
        doc = cfgmod.loads(json.dumps({"preset": "B", "run": {"seed": 9, "target_events": 100},
                                       "link": {"fiber": {"length_km": 12.5}}}))
        again = cfgmod.loads(cfgmod.dumps(doc))
        assert again == doc
        assert cfgmod.dumps(again) == cfgmod.dumps(doc)
        assert again.link.fiber.length_km == 12.5
        assert again.link.decoherence == preset("B").decoherence

    def test_hash_deterministic(self):
        a = cfgmod.config_hash(cfgmod.load(None))
        b = cfgmod.config_hash(cfgmod.loads(cfgmod.dumps(cfgmod.load(None))))
        assert a == b and len(a) == 64
        c = cfgmod.config_hash(cfgmod.loads('{"run": {"seed": 1}}'))
        assert c != a

    @pytest.mark.parametrize("text,match", [
        ('{"bogus": 1}', "unknown key"),
        ('{"link": {"fiber": {"lenght_km": 1}}}', "unknown key"),
        ('{"link": {"fiber": {"length_km": "far"}}}', "link.fiber.length_km"),
        ('{"link": {"fiber": {"length_km": -3}}}', "fiber length"),
        ('{"preset": "Z"}', "preset"),
        ('{"schema_version": "9"}', "schema_version"),
        ('{"run": {"target_events": 1.5}}', "integer"),
        ('{"run": {"target_events": null}}', "run"),
        ('{"link": {"qfc": {"enabled": 1}}}', "true/false"),
    ])
    def test_rejects(self, text, match):
        with pytest.raises(ConfigError, match=match):
            cfgmod.loads(text)

    def test_syntax_error_position(self):
        with pytest.raises(ConfigError, match=r"cfg.json:2:\d+"):
            cfgmod.loads('{\n "run": }', "cfg.json")

    def test_tuple_fields(self):
        doc = cfgmod.loads('{"run": {"atom_angles_deg": [0, 45, 90, 135], "photon_bases": ["HV"]}}')
        rc = doc.run_config()
        assert rc.atom_angles == (0.0, 45.0, 90.0, 135.0)
        doc2 = cfgmod.loads('{"link": {"decoherence": {"v0_per_state": [1, 1, 1, 1]}}}')
        assert doc2.link.decoherence.v0_per_state == (1.0, 1.0, 1.0, 1.0)


class TestLogIO:
    def test_round_trip(self, tmp_path):
        log = simulate_run(RunConfig(preset("A"), target_events=300, seed=8))
        path = tmp_path / "log.csv"
        write_log(path, log, "abc")
        back, meta = read_log(path)
        assert meta["config_sha256"] == "abc"
        for c in EventLog.COLUMNS:
            np.testing.assert_array_equal(getattr(back, c), getattr(log, c))
        assert format_log(back, "abc") == path.read_text()

    def test_truncated(self, tmp_path):
        log = simulate_run(RunConfig(preset("A"), target_events=50, seed=8))
        path = tmp_path / "log.csv"
        write_log(path, log, "abc")
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-5]) + "\n")
        with pytest.raises(DataError, match="record 45"):
            read_log(path)

    def test_bad_record(self, tmp_path):
        log = simulate_run(RunConfig(preset("A"), target_events=20, seed=8))
        path = tmp_path / "log.csv"
        write_log(path, log, "abc")
        lines = path.read_text().splitlines()
        lines[5] = lines[5].replace("signal", "ghost").replace("qfc_noise", "ghost").replace("dark_count", "ghost")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="bad record 3"):
            read_log(path)

    def test_not_a_log(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n")
        with pytest.raises(DataError, match="not an event log"):
            read_log(p)
        with pytest.raises(DataError):
            read_log(tmp_path / "missing.csv")

    def test_manifest_name(self):
        assert manifest_path("out/log.csv").name == "log.csv.manifest.json"


class TestCli:
    def test_simulate_analyze(self, tmp_path, capsys):
        out = tmp_path / "log.csv"
        assert main(["simulate", "--seed", "42", "--out", str(out)]) == 0
        s = parse_summary(capsys.readouterr().out.strip())
        assert int(s["events"]) == 11335
        assert 28 <= float(s["rate_per_min"]) <= 42
        assert 288 <= float(s["simulated_min"]) <= 432
        man = json.loads(manifest_path(out).read_text())
        assert man["seed"] == 42 and man["config_sha256"] == cfgmod.config_hash(cfgmod.load(None))
        assert {"started_unix", "finished_unix"} <= set(man["wall_clock"])

        rep = tmp_path / "rep"
        assert main(["analyze", str(out), "--out", str(rep)]) == 0
        text = capsys.readouterr().out
        assert "v_bar=" in text and "(A)" in text
        report = json.loads((rep / "report.json").read_text())
        assert report["visibility"]["v_bar"] == pytest.approx(0.7349, abs=5e-4)
        assert report["config_sha256"] == man["config_sha256"]
        with open(rep / "fringes.csv") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        assert rows[0] == ["photon_state", "alpha_deg", "dark_fraction", "se", "n_total"]
        assert len(rows) == 33
        assert (rep / "analysis.manifest.json").exists()

    def test_simulate_is_reproducible(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["simulate", "--seed", "5", "--events", "800", "--threads", "1", "--out", str(a)]) == 0
        assert main(["simulate", "--seed", "5", "--events", "800", "--threads", "8", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_config_c_snr(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"preset": "C"}')
        assert main(["simulate", "--config", str(cfg), "--seed", "3", "--events", "4000",
                     "--out", str(tmp_path / "c.csv")]) == 0
        s = parse_summary(capsys.readouterr().out.strip())
        # model SNR against the reported 32.3 within 25%
        assert 0.75 * 32.3 <= float(s["snr_model"]) <= 1.25 * 32.3

    def test_forecast(self, tmp_path, capsys):
        out = tmp_path / "f.csv"
        assert main(["forecast", "--points", "5", "--out", str(out)]) == 0
        line = capsys.readouterr().out
        assert "current=0.637" in line and "improved=0.826" in line
        with open(out) as fh:
            rows = list(csv.reader(line for line in fh if not line.startswith("#")))
        assert rows[0][0] == "distance_km" and len(rows) == 6

    def test_budget(self, capsys):
        assert main(["budget"]) == 0
        text = capsys.readouterr().out
        assert "decoherence" in text and "78.50" in text and "0.000173" in text

    def test_fit_qfc(self, tmp_path, capsys):
        from qlink.qfcfit import synthetic_data, write_table

        data = tmp_path / "q.csv"
        write_table(data, synthetic_data(seed=0))
        out = tmp_path / "q.json"
        assert main(["fit-qfc", str(data), "--out", str(out)]) == 0
        d = json.loads(out.read_text())
        assert d["operating_efficiency"] == pytest.approx(0.57, abs=0.01)

    @pytest.mark.parametrize("argv", [
        ["simulate"],
        ["bogus"],
        ["simulate", "--seed", "-1", "--out", "x.csv"],
    ])
    def test_argument_errors(self, argv, capsys):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1
        capsys.readouterr()

    @pytest.mark.parametrize("argv", [
        ["forecast", "--distance-min", "5", "--distance-max", "1", "--out", "x.csv"],
        ["forecast", "--points", "1", "--out", "x.csv"],
    ])
    def test_range_errors(self, argv, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert main(argv) == 1
        capsys.readouterr()

    def test_config_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"link": {"nope": 1}}')
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 1
        assert "unknown key" in capsys.readouterr().err
        assert main(["budget", "--config", str(tmp_path / "missing.json")]) == 1
        unc = tmp_path / "unc.json"
        unc.write_text('{"link": {"decoherence": {"v0_per_state": null}}}')
        assert main(["budget", "--config", str(unc)]) == 1
        assert "calibrated" in capsys.readouterr().err

    def test_runtime_errors(self, tmp_path, capsys):
        p = tmp_path / "log.csv"
        p.write_text("garbage\n")
        assert main(["analyze", str(p), "--out", str(tmp_path / "r")]) == 2
        assert main(["analyze", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "r")]) == 2
        q = tmp_path / "q.csv"
        q.write_text("curve,pump_power_w,value\narm_p,0.1,0.2\n")
        assert main(["fit-qfc", str(q), "--out", str(tmp_path / "q.json")]) == 2
        assert main(["simulate", "--events", "10", "--out", str(tmp_path / "no" / "dir.csv")]) == 2
        capsys.readouterr()

    def test_console_script(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "qlink.cli", "budget"], capture_output=True, text=True)
        assert r.returncode == 0 and "achieved" in r.stdout
        r = subprocess.run([sys.executable, "-m", "qlink.cli", "frobnicate"], capture_output=True, text=True)
        assert r.returncode == 1

