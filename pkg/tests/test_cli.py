"""Subcommands, exit codes, output files and manifest replay."""

import csv
import json

import pytest

from backpressure.cli import EXIT_CODES, RunManifest, main


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestAnalyzeJunction:
    def test_worked_example(self, capsys):
        assert main(["analyze-junction", "--c", "10", "--eta", "0.4", "--k", "2", "--Q", "40"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["region"] == [1, 2]
        # q_s_act = (1 - c1/c2) Q + (c1/c2) f1 = 20 + 2; bounds shift by f2 - c2 = 8 - 20
        b = rep["bounds"]
        assert b["q_s_act"] == pytest.approx(22)
        assert (b["q_s_lo"], b["q_s_hi"]) == pytest.approx((10, 30))
        assert (b["q_u_lo"], b["q_u_hi"]) == pytest.approx((4, 8))

    def test_writes_file_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        assert main(["analyze-junction", "--k", "4", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["region"]
        m = RunManifest.read(tmp_path / "r.manifest.json")
        assert m.subcommand == "analyze-junction"

    def test_degenerate_k(self, capsys):
        assert main(["analyze-junction", "--k", "1"]) == EXIT_CODES["validation"]
        assert _err(capsys)["error"] == "validation"

    def test_bad_eta(self, capsys):
        assert main(["analyze-junction", "--k", "2", "--eta", "0.9"]) == EXIT_CODES["validation"]


class TestPhaseDiagram:
    def test_closed(self, tmp_path, capsys):
        assert main(["phase-diagram", "--resolution", "4", "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader(open(tmp_path / "phase_diagram.csv")))
        assert len(rows) == 2 * 16
        assert {r["gamma_mode"] for r in rows} == {"uniform", "inverse_capacity"}
        assert (tmp_path / "manifest.json").is_file()

    def test_simulated(self, tmp_path, capsys):
        args = ["phase-diagram", "--resolution", "2", "--mode", "simulated", "--T", "1500",
                "--k-max", "4", "--Q-max", "60", "--out", str(tmp_path)]
        assert main(args) == 0
        rep = json.loads(capsys.readouterr().out)
        assert "agreement_uniform" in rep

    def test_empty_range(self, tmp_path, capsys):
        assert main(["phase-diagram", "--k-min", "5", "--k-max", "2", "--out", str(tmp_path)]) == 2


class TestRun:
    def test_junction_trace(self, tmp_path, capsys):
        sc = tmp_path / "j.json"
        assert main(["gen-scenario", "--kind", "junction", "--k", "4", "--eta", "0.5", "--T", "300",
                     "--out", str(sc)]) == 0
        out = tmp_path / "o"
        assert main(["run", "--scenario", str(sc), "--policy", "bp", "--trace", "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "trace.csv")))
        assert len(rows) == 300
        assert rows[0]["pmax_rolling"] == ""
        assert set(rows[0]) == {"t", "q1", "q2", "p1", "p2", "pmax_rolling", "served"}
        summ = json.loads((out / "summary.json").read_text())
        assert summ["T"] == 300 and summ["policy"] == "bp"

    def test_grid_and_replay(self, tmp_path, capsys):
        sc = tmp_path / "g.json"
        net = tmp_path / "net.json"
        assert main(["gen-scenario", "--rows", "4", "--cols", "4", "--h", "2", "--T", "50",
                     "--out", str(sc), "--export-network", str(net)]) == 0
        assert json.loads(net.read_text())["movements"]
        out = tmp_path / "o"
        assert main(["run", "--scenario", str(sc), "--policy", "new", "--seed", "3", "--out", str(out)]) == 0
        first = (out / "metrics.csv").read_text()
        (out / "metrics.csv").unlink()
        assert main(["replay", str(out / "manifest.json")]) == 0
        assert (out / "metrics.csv").read_text() == first

    def test_network_file(self, tmp_path, capsys):
        sc = tmp_path / "g.json"
        net = tmp_path / "net.json"
        main(["gen-scenario", "--rows", "3", "--cols", "3", "--h", "0", "--out", str(sc),
              "--export-network", str(net)])
        assert main(["run", "--scenario", str(net), "--policy", "fixed", "--T", "20",
                     "--out", str(tmp_path / "o")]) == 0

    def test_custom_gamma(self, tmp_path, capsys):
        sc = tmp_path / "j.json"
        main(["gen-scenario", "--kind", "junction", "--T", "50", "--out", str(sc)])
        g = tmp_path / "g.json"
        g.write_text(json.dumps({"1->3": 1.0, "2->3": 0.5, "3->4": 1.0}))
        assert main(["run", "--scenario", str(sc), "--policy", "custom", "--gamma", str(g),
                     "--out", str(tmp_path / "o")]) == 0

    def test_custom_without_gamma(self, tmp_path, capsys):
        sc = tmp_path / "j.json"
        main(["gen-scenario", "--kind", "junction", "--out", str(sc)])
        assert main(["run", "--scenario", str(sc), "--policy", "custom"]) == 2

    def test_missing_file(self, tmp_path, capsys):
        assert main(["run", "--scenario", str(tmp_path / "nope.json")]) == EXIT_CODES["not_found"]
        assert _err(capsys)["error"] == "not_found"

    def test_bad_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{oops")
        assert main(["run", "--scenario", str(p)]) == EXIT_CODES["validation"]

    def test_invalid_network(self, tmp_path, capsys):
        p = tmp_path / "n.json"
        p.write_text(json.dumps({"kind": "network", "movements": [["a", "b"]], "capacity": [-1]}))
        assert main(["run", "--scenario", str(p)]) == EXIT_CODES["validation"]


class TestMisc:
    def test_unknown_figure(self, tmp_path, capsys):
        assert main(["reproduce", "--figure", "fig99", "--out", str(tmp_path)]) == 2
        assert "fig4" in _err(capsys)["message"]

    def test_reproduce_records_horizons(self, tmp_path, capsys):
        assert main(["reproduce", "--figure", "fig7", "--n-runs", "1", "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader(open(tmp_path / "fig7_scatter.csv")))
        assert {r["link_class"] for r in rows} == {"arterial", "secondary"}
        cfg = RunManifest.read(tmp_path / "manifest.json").config["figure_config"]
        assert cfg["T"] == 500 and cfg["n_runs"] == 1 and cfg["grid"]["rows"] == 10

    def test_missing_manifest(self, tmp_path, capsys):
        assert main(["replay", str(tmp_path / "m.json")]) == EXIT_CODES["not_found"]

    def test_out_env(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("BACKPRESSURE_OUT", str(tmp_path / "env"))
        assert main(["phase-diagram", "--resolution", "2"]) == 0
        assert (tmp_path / "env" / "phase_diagram.csv").is_file()

    def test_usage_error(self, capsys):
        assert main(["run"]) == 2
