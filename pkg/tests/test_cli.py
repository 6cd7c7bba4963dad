import csv
import io
import json
import subprocess
import sys

import pytest

from faultforge.cli import main
from faultforge.network import resolve_network_path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def bus_voltages(payload):
    return {(bus, ph): v["mag"] for bus, phases in payload["buses"].items() for ph, v in phases.items()}


class TestSweep:
    def test_gfl_25_rows(self, capsys, tmp_path):
        out = tmp_path / "gfl.csv"
        code, _, _ = run(
            capsys, "sweep", "--network", "case4_pv.json", "--fault", "3phg", "--bus", "Load",
            "--rmin", "1e-3", "--rmax", "10", "--points", "25", "--out", str(out),
        )
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 25
        header = out.read_text().splitlines()[0].split(",")
        for col in ("r_fault_ohm", "status", "iters", "A_If_A", "C_If_pu", "B_V_pu", "A_P_pu", "C_Q_pu", "I0_pu", "I1_pu", "I2_pu"):
            assert col in header

    @pytest.mark.parametrize(
        "extra",
        [
            ("--rmin", "10", "--rmax", "1"),
            ("--rmin", "1", "--rmax", "1"),
            ("--points", "1"),
            ("--rmin", "-1"),
            ("--jobs", "2"),
            ("--phases", "A,B"),
        ],
    )
    def test_usage_errors(self, capsys, extra):
        code, _, err = run(capsys, "sweep", "--network", "case4_pv.json", "--fault", "lg", "--bus", "Load", *extra)
        assert code == 1
        assert "error" in err

    def test_missing_required_flag(self, capsys):
        code, _, _ = run(capsys, "sweep", "--network", "case4_pv.json", "--bus", "Load")
        assert code == 1

    def test_phases_and_stdout(self, capsys):
        code, out, _ = run(
            capsys, "sweep", "--network", "case4_linear.json", "--fault", "ll", "--phases", "B,C",
            "--bus", "Load", "--points", "3",
        )
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 3
        assert all(float(r["A_If_pu"]) == 0.0 and float(r["B_If_pu"]) > 0 for r in rows)

    def test_island_equals_file_edit(self, capsys, tmp_path):
        raw = json.loads(resolve_network_path("case4_pv_gfm_simple.json").read_text())
        for line in raw["lines"]:
            if line["id"] == "OHLine":
                line["status"] = "open"
        edited = tmp_path / "island.json"
        edited.write_text(json.dumps(raw))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        common = ("--fault", "lg", "--bus", "Load", "--points", "4")
        assert run(capsys, "sweep", "--network", "case4_pv_gfm_simple.json", "--island", "OHLine", "--out", str(a), *common)[0] == 0
        assert run(capsys, "sweep", "--network", str(edited), "--out", str(b), *common)[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_island_line(self, capsys):
        code, _, _ = run(capsys, "sweep", "--network", "case4_pv.json", "--fault", "lg", "--bus", "Load", "--island", "Nope")
        assert code == 1

    def test_plot_and_json(self, capsys, tmp_path):
        svg = tmp_path / "p.svg"
        code, out, _ = run(
            capsys, "sweep", "--network", "case4_linear.json", "--fault", "lg", "--bus", "Load",
            "--points", "3", "--out", str(tmp_path / "s.csv"), "--plot", str(svg), "--json",
        )
        assert code == 0
        assert svg.read_text().startswith("<svg")
        payload = json.loads(out)
        assert payload["statuses"] == ["Feasible"] * 3

    def test_byte_identical_across_processes(self, tmp_path):
        outs = []
        for k in range(2):
            path = tmp_path / f"run{k}.csv"
            subprocess.run(
                [sys.executable, "-m", "faultforge.cli", "sweep", "--network", "case4_pv.json", "--fault", "lg",
                 "--bus", "Load", "--points", "5", "--out", str(path)],
                check=True,
            )
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]


class TestFault:
    def test_near_open_is_prefault(self, capsys):
        code, out, _ = run(capsys, "prefault", "--network", "case4_pv.json", "--json")
        assert code == 0
        base = bus_voltages(json.loads(out))
        code, out, _ = run(
            capsys, "fault", "--network", "case4_pv.json", "--fault", "lg", "--phase", "A", "--bus", "Load",
            "--r", "1e6", "--json",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["result"]["status"] == "Feasible"
        for key, mag in bus_voltages(payload).items():
            assert mag == pytest.approx(base[key], abs=1e-4)
        assert payload["fault_current"]["A"]["mag"] < 1e-5

    def test_infeasible_exit_code(self, capsys, tmp_path):
        raw = json.loads(resolve_network_path("case4_linear.json").read_text())
        raw["buses"][2]["v_min_pu"] = 1.4
        raw["buses"][2]["v_max_pu"] = 2.0
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(raw))
        code, _, err = run(capsys, "fault", "--network", str(path), "--fault", "lg", "--bus", "Load", "--r", "1")
        assert code == 2

    def test_trace_and_dump(self, capsys, tmp_path):
        trace, dump = tmp_path / "t.csv", tmp_path / "d.json"
        code, _, _ = run(
            capsys, "fault", "--network", "case4_pv.json", "--fault", "ll", "--bus", "Load", "--r", "0.1",
            "--trace", str(trace), "--dump-system", str(dump),
        )
        assert code == 0
        assert trace.read_text().startswith("attempt,iteration")
        assert json.loads(dump.read_text())["fault"]["bus"] == "Load"

    def test_wrong_phase_count(self, capsys):
        code, _, _ = run(capsys, "fault", "--network", "case4_pv.json", "--fault", "lg", "--phase", "A,B", "--bus", "Load", "--r", "1")
        assert code == 1

    def test_missing_network(self, capsys, tmp_path):
        code, _, _ = run(capsys, "prefault", "--network", str(tmp_path / "none.json"))
        assert code == 1

    def test_config_env_and_flag_precedence(self, capsys, tmp_path, monkeypatch):
        env_cfg = tmp_path / "env.json"
        env_cfg.write_text(json.dumps({"max_iter": 1, "restarts": 0}))
        monkeypatch.setenv("FAULTFORGE_CONFIG", str(env_cfg))
        argv = ("fault", "--network", "case4_pv.json", "--fault", "3phg", "--bus", "Load", "--r", "0.001", "--json")
        code, out, _ = run(capsys, *argv)
        assert code == 2
        code, out, _ = run(capsys, *argv, "--max-iter", "200", "--restarts", "3")
        assert code == 0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"nope": 1}))
        monkeypatch.setenv("FAULTFORGE_CONFIG", str(bad))
        assert run(capsys, *argv)[0] == 1


class TestValidate:
    def test_linear_passes(self, capsys):
        code, out, _ = run(capsys, "validate", "--network", "case4_linear.json", "--against-oracle", "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["passed"] and payload["worst"] <= 1e-6
        assert len(payload["cases"]) == 1 + 4 * 5

    def test_single_case(self, capsys):
        code, _, _ = run(
            capsys, "validate", "--network", "case4_linear.json", "--against-oracle", "--fault", "3phg", "--bus", "PV", "--r", "0.05"
        )
        assert code == 0

    def test_rejects_inverter_network(self, capsys):
        code, _, err = run(capsys, "validate", "--network", "case4_pv.json", "--against-oracle")
        assert code == 1
        assert "linear" in err

    def test_flag_required(self, capsys):
        assert run(capsys, "validate", "--network", "case4_linear.json")[0] == 1


class TestDumpSystem:
    def test_listing(self, capsys):
        code, out, _ = run(capsys, "dump-system", "--network", "case4_pv.json", "--fault", "lg", "--bus", "Load", "--r", "0.5")
        assert code == 0
        listing = json.loads(out)
        constraints = listing["equalities"] + listing["inequalities"]
        assert any(c["name"].startswith("fault.") for c in constraints)
        assert all({"name", "tag", "variables"} <= set(c) for c in constraints)
        assert len(listing["variables"]) == listing["n_vars"]
