import csv
import hashlib
from pathlib import Path

import pytest

from dltbench.cli import main

SCENARIOS = Path(__file__).parent.parent / "scenarios"


@pytest.fixture()
def quick_scenario(tmp_path):
    path = tmp_path / "quick.yaml"
    path.write_text(
        "name: quick\nplatform: quorum\nmanagers: 2\nclients: 2\n"
        "input_tps: 10\nduration_s: 10\nseed: 42\n"
    )
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_csv(path: Path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRun:
    def test_run_writes_report(self, quick_scenario, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(quick_scenario), "--out", str(out)]) == 0
        rundir = out / "quick-seed42"
        for name in ("report.csv", "nodes.csv", "summary.txt", "raw_metrics.json",
                     "effective_config.yaml"):
            assert (rundir / name).is_file()
        assert (rundir / "figures" / "bytes_per_node.png").is_file()

    def test_missing_scenario_exits_2(self, tmp_path, capsys):
        rc = main(["run", "--scenario", str(tmp_path / "absent.yaml"), "--out", str(tmp_path)])
        assert rc == 2
        assert "absent.yaml" in capsys.readouterr().err

    def test_config_error_names_field(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("managers: 0\n")
        assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "managers" in capsys.readouterr().err

    def test_seed_flag_deterministic(self, quick_scenario, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert main(["run", "--scenario", str(quick_scenario), "--out", str(out),
                         "--seed", "7"]) == 0
            outs.append(out / "quick-seed7")
        for name in ("report.csv", "nodes.csv", "raw_metrics.json"):
            assert _digest(outs[0] / name) == _digest(outs[1] / name)

    def test_platform_flag_beats_file(self, quick_scenario, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(quick_scenario), "--out", str(out),
                     "--platform", "iota", "--no-figures"]) == 0
        rows = _read_csv(out / "quick-seed42" / "report.csv")
        assert rows[0]["platform"] == "iota"

    def test_marketplace_scenario_exports_agreements(self, tmp_path):
        out = tmp_path / "out"
        rc = main(["run", "--scenario", str(SCENARIOS / "rental.yaml"), "--out", str(out),
                   "--no-figures"])
        assert rc == 0
        rows = _read_csv(out / "rental-seed7" / "marketplace_agreements.csv")
        assert len(rows) == 2
        assert all(r["t_settled"] for r in rows)

    def test_marketplace_scenario_exports_channel_history(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(SCENARIOS / "rental.yaml"), "--out", str(out),
                     "--no-figures"]) == 0
        rows = _read_csv(out / "rental-seed7" / "marketplace_channels.csv")
        assert rows, "channel-funded rental must leave a history"
        seqs = [int(r["seq"]) for r in rows if r["channel_id"] == "chan:agr-0001"]
        assert seqs == sorted(seqs) and seqs[0] == 0
        deposits = {int(r["balance_a"]) + int(r["balance_b"]) for r in rows}
        assert len(deposits) == 1  # conservation visible in the export


class TestSweep:
    def test_narrowed_grid_single_row(self, quick_scenario, tmp_path):
        out = tmp_path / "sweep"
        rc = main(["sweep", "--scenario", str(quick_scenario), "--out", str(out),
                   "--managers", "4", "--load", "20", "--no-figures"])
        assert rc == 0
        rows = _read_csv(out / "sweep.csv")
        assert len(rows) == 1
        assert rows[0]["managers"] == "4"

    def test_default_grid_is_4x5(self, quick_scenario, tmp_path, capsys):
        out = tmp_path / "sweep"
        quick = tmp_path / "tiny.yaml"
        quick.write_text("name: tiny\nplatform: quorum\nduration_s: 2\nseed: 1\n")
        rc = main(["sweep", "--scenario", str(quick), "--out", str(out), "--no-figures"])
        assert rc == 0
        rows = _read_csv(out / "sweep.csv")
        assert len(rows) == 20  # 4 manager counts x 5 loads

    def test_resume_skips_existing_cells(self, quick_scenario, tmp_path, capsys):
        out = tmp_path / "sweep"
        args = ["sweep", "--scenario", str(quick_scenario), "--out", str(out),
                "--managers", "4,8", "--load", "20", "--no-figures"]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert "2 simulated" in first
        assert main(args) == 0
        second = capsys.readouterr().out
        assert "0 simulated" in second and "2 reused" in second

    def test_force_recomputes(self, quick_scenario, tmp_path, capsys):
        out = tmp_path / "sweep"
        args = ["sweep", "--scenario", str(quick_scenario), "--out", str(out),
                "--managers", "4", "--load", "20", "--no-figures"]
        assert main(args) == 0
        capsys.readouterr()
        assert main(args + ["--force"]) == 0
        assert "1 simulated" in capsys.readouterr().out

    def test_parallel_workers_match_serial(self, quick_scenario, tmp_path):
        serial, parallel = tmp_path / "s", tmp_path / "p"
        base = ["sweep", "--scenario", str(quick_scenario), "--managers", "4,8",
                "--load", "20", "--no-figures"]
        assert main(base + ["--out", str(serial)]) == 0
        assert main(base + ["--out", str(parallel), "--workers", "2"]) == 0
        assert _digest(serial / "sweep.csv") == _digest(parallel / "sweep.csv")

    def test_sweep_renders_figure(self, quick_scenario, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--scenario", str(quick_scenario), "--out", str(out),
                     "--managers", "4", "--load", "20"]) == 0
        assert (out / "figures" / "tps_vs_managers.png").is_file()

    def test_grid_from_scenario_file_flag_wins(self, tmp_path, capsys):
        sc = tmp_path / "gridded.yaml"
        sc.write_text(
            "name: gridded\nplatform: quorum\nduration_s: 2\nseed: 1\n"
            "sweep:\n  managers: [4, 8]\n  loads: [20]\n"
        )
        out = tmp_path / "sw1"
        assert main(["sweep", "--scenario", str(sc), "--out", str(out), "--no-figures"]) == 0
        assert len(_read_csv(out / "sweep.csv")) == 2  # grid from file
        out2 = tmp_path / "sw2"
        assert main(["sweep", "--scenario", str(sc), "--out", str(out2),
                     "--managers", "4", "--no-figures"]) == 0
        assert len(_read_csv(out2 / "sweep.csv")) == 1  # flag beats file


class TestCarbon:
    def test_golden_micro_kg_column(self, tmp_path):
        out = tmp_path / "carbon"
        assert main(["carbon", "--out", str(out), "--no-figures"]) == 0
        rows = {r["platform"]: r for r in _read_csv(out / "carbon.csv")}
        assert rows["fabric"]["ghg_micro_kg"] == "203"
        assert rows["quorum"]["ghg_micro_kg"] == "211"
        assert rows["iota"]["ghg_micro_kg"] == "198"
        assert rows["solana"]["ghg_micro_kg"] == "198"
        eth = float(rows["ethereum"]["ghg_kg"])
        assert abs(eth - 26_682e-6) / 26_682e-6 < 0.001

    def test_zero_cpu_fixture(self, tmp_path):
        out = tmp_path / "carbon"
        rc = main(["carbon", "--out", str(out), "--no-figures",
                   "--cpu", "fabric=0", "--cpu", "ethereum=0", "--cpu", "quorum=0",
                   "--cpu", "iota=0", "--cpu", "solana=0"])
        assert rc == 0
        rows = _read_csv(out / "carbon.csv")
        assert all(float(r["ghg_kg"]) == 0.0 for r in rows)

    def test_unknown_platform_exits_2(self, tmp_path, capsys):
        rc = main(["carbon", "--out", str(tmp_path), "--cpu", "tezos=5"])
        assert rc == 2
        assert "tezos" in capsys.readouterr().err

    def test_bad_power_exits_2(self, tmp_path, capsys):
        rc = main(["carbon", "--out", str(tmp_path), "--power", "0"])
        assert rc == 2
        assert "positive" in capsys.readouterr().err

    def test_carbon_renders_figure(self, tmp_path):
        out = tmp_path / "carbon"
        assert main(["carbon", "--out", str(out)]) == 0
        assert (out / "figures" / "ghg_per_platform.png").is_file()

    def test_env_var_intensity(self, tmp_path, monkeypatch):
        out = tmp_path / "carbon"
        monkeypatch.setenv("DLTBENCH_GHG_INTENSITY", "1.0")
        assert main(["carbon", "--out", str(out), "--no-figures"]) == 0
        rows = {r["platform"]: r for r in _read_csv(out / "carbon.csv")}
        assert float(rows["fabric"]["intensity_kg_per_kwh"]) == 1.0
        assert float(rows["fabric"]["ghg_kg"]) == pytest.approx(375e-6)

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        out = tmp_path / "carbon"
        monkeypatch.setenv("DLTBENCH_GHG_INTENSITY", "1.0")
        assert main(["carbon", "--out", str(out), "--no-figures", "--intensity", "0.540"]) == 0
        rows = {r["platform"]: r for r in _read_csv(out / "carbon.csv")}
        assert rows["fabric"]["ghg_micro_kg"] == "203"


class TestReport:
    def test_regeneration_is_idempotent(self, quick_scenario, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(quick_scenario), "--out", str(out)]) == 0
        rundir = out / "quick-seed42"
        tracked = ["report.csv", "nodes.csv", "summary.txt",
                   "figures/bytes_per_node.png", "figures/cpu_per_node.png"]
        before = {n: _digest(rundir / n) for n in tracked}
        assert main(["report", "--run", str(rundir)]) == 0
        after = {n: _digest(rundir / n) for n in tracked}
        assert before == after

    def test_missing_run_dir_exits_2(self, tmp_path, capsys):
        rc = main(["report", "--run", str(tmp_path / "nope")])
        assert rc == 2
        assert "raw_metrics.json" in capsys.readouterr().err
