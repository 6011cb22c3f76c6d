"""End-to-end command-line tests: exit codes, outputs, determinism."""

import filecmp
import json
import os

import pytest

from dtaflow.cli import main
from dtaflow.fileio import load_paths

DATA = os.path.join(os.path.dirname(__file__), "..", "data", "braess")


NETWORK = """\
[nodes]
id,x,y,origin,destination,source_priority
a,0,0,1,0,
b,1,0,0,1,
[links]
id,tail,head,length_m,free_speed_mps,capacity_vps,backward_speed_mps
1,a,b,1200,12,0.8,
"""

PATHS = """\
[paths]
id,origin,destination,links
p1,a,b,1
"""

DEMAND = """\
[demand]
origin,destination,demand_veh,target_arrival_s
a,b,40,400
"""


@pytest.fixture
def tiny(tmp_path):
    files = {}
    for name, text in [("network.txt", NETWORK), ("paths.txt", PATHS),
                       ("demand.txt", DEMAND)]:
        f = tmp_path / name
        f.write_text(text)
        files[name] = str(f)
    return files, tmp_path


def due_args(files, out, **over):
    opts = {"--dt": "10", "--horizon": "700", "--alpha": "5e-4",
            "--epsilon": "1e-5", "--max-iters": "200",
            "--init-window": "0:500"}
    opts.update(over)
    argv = ["due", "--network", files["network.txt"],
            "--paths", files["paths.txt"],
            "--demand", files["demand.txt"], "--out", out]
    for k, v in opts.items():
        argv += [k, v]
    return argv


class TestUsageErrors:
    def test_missing_required_argument(self, capsys):
        assert main(["dnl", "--network", "x"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_nonpositive_alpha(self, tiny, capsys):
        files, tmp = tiny
        argv = due_args(files, str(tmp / "out"), **{"--alpha": "0"})
        assert main(argv) == 1
        assert "--alpha" in capsys.readouterr().err

    def test_bad_init_window(self, tiny, capsys):
        files, tmp = tiny
        argv = due_args(files, str(tmp / "out"), **{"--init-window": "oops"})
        assert main(argv) == 1
        assert "LO:HI" in capsys.readouterr().err

    def test_bad_thread_count(self, tiny):
        files, tmp = tiny
        argv = due_args(files, str(tmp / "out")) + ["--threads", "0"]
        assert main(argv) == 1


class TestExitCodes:
    def test_parse_error_is_2(self, tiny, capsys):
        files, tmp = tiny
        bad = tmp / "broken.txt"
        bad.write_text("id,tail\n[links]\n")
        argv = due_args(dict(files, **{"network.txt": str(bad)}), str(tmp / "o"))
        assert main(argv) == 2
        assert "parse error" in capsys.readouterr().err

    def test_validation_error_is_3(self, tiny, capsys):
        files, tmp = tiny
        bad = tmp / "demand_bad.txt"
        bad.write_text("[demand]\norigin,destination,demand_veh,target_arrival_s\n"
                       "b,a,5,600\n")
        argv = due_args(dict(files, **{"demand.txt": str(bad)}), str(tmp / "o"))
        assert main(argv) == 3
        assert "validation error" in capsys.readouterr().err

    def test_runtime_error_is_4(self, tiny, capsys):
        files, tmp = tiny
        h = tmp / "h.csv"
        h.write_text("p1,0.1,0.1\n")  # 2 columns but the grid has 70 steps
        argv = ["dnl", "--network", files["network.txt"],
                "--paths", files["paths.txt"], "--demand", files["demand.txt"],
                "--departures", str(h), "--out", str(tmp / "o"),
                "--dt", "10", "--horizon", "700"]
        assert main(argv) == 2  # dimension mismatch is caught at parse time
        assert "expected N" in capsys.readouterr().err


class TestDnlCommand:
    def test_braess_fixture_replay(self, tmp_path, capsys):
        out = str(tmp_path / "out")
        argv = ["dnl", "--network", os.path.join(DATA, "network.txt"),
                "--paths", os.path.join(DATA, "paths.txt"),
                "--demand", os.path.join(DATA, "demand.txt"),
                "--departures", os.path.join(DATA, "departures.csv"),
                "--out", out, "--dt", "30", "--horizon", "2400"]
        assert main(argv) == 0
        assert "dnl complete" in capsys.readouterr().out
        for name in ("travel_times.csv", "link_timeseries.csv", "summary.json"):
            assert os.path.exists(os.path.join(out, name))
        with open(os.path.join(out, "summary.json")) as fh:
            assert json.load(fh)["mode"] == "dnl"

    def test_coarse_dt_prints_warning(self, tiny, capsys):
        files, tmp = tiny
        h = tmp / "h.csv"
        h.write_text("p1," + ",".join(["0.1"] * 5) + "\n")
        argv = ["dnl", "--network", files["network.txt"],
                "--paths", files["paths.txt"], "--demand", files["demand.txt"],
                "--departures", str(h), "--out", str(tmp / "o"),
                "--dt", "150", "--horizon", "700"]
        assert main(argv) == 0
        assert "exceeds the minimum link free-flow time" in capsys.readouterr().err


class TestDueCommand:
    def test_converges_and_reports(self, tiny, capsys):
        files, tmp = tiny
        out = str(tmp / "out")
        assert main(due_args(files, out)) == 0
        stdout = capsys.readouterr().out
        assert "CONVERGED" in stdout
        assert "log10(relative gap)" in stdout
        with open(os.path.join(out, "summary.json")) as fh:
            summary = json.load(fh)
        assert summary["status"] == "CONVERGED"
        for name in ("h_final.csv", "eff_delay.csv", "od_gaps.csv",
                     "convergence.csv", "travel_times.csv"):
            assert os.path.exists(os.path.join(out, name))

    def test_auto_paths(self, tiny):
        files, tmp = tiny
        out = str(tmp / "out")
        argv = due_args(files, out)
        i = argv.index("--paths")
        argv[i : i + 2] = ["--auto-paths", "2"]
        assert main(argv) == 0
        assert os.path.exists(os.path.join(out, "h_final.csv"))

    def test_repeat_runs_byte_identical(self, tiny):
        files, tmp = tiny
        out1, out2 = str(tmp / "o1"), str(tmp / "o2")
        assert main(due_args(files, out1)) == 0
        assert main(due_args(files, out2)) == 0
        for name in ("h_final.csv", "eff_delay.csv", "convergence.csv"):
            assert filecmp.cmp(os.path.join(out1, name),
                               os.path.join(out2, name), shallow=False), name


class TestPathsCommand:
    def test_enumerates_braess(self, tmp_path, capsys):
        out = str(tmp_path / "paths_out.txt")
        argv = ["paths", "--network", os.path.join(DATA, "network.txt"),
                "--demand", os.path.join(DATA, "demand.txt"),
                "--k", "3", "--out", out]
        assert main(argv) == 0
        assert "wrote" in capsys.readouterr().out
        generated = load_paths(out)
        assert {p.links for p in generated if p.od == ("1", "4")} == \
            {("1", "4"), ("2", "5"), ("1", "3", "5")}


class TestReportCommand:
    @pytest.fixture
    def finished_run(self, tiny):
        files, tmp = tiny
        out = str(tmp / "out")
        assert main(due_args(files, out)) == 0
        return out

    def test_percentiles_and_curves(self, finished_run, capsys):
        assert main(["report", "--in", finished_run, "--paths", "p1"]) == 0
        stdout = capsys.readouterr().out
        assert "percentiles" in stdout
        assert os.path.exists(os.path.join(finished_run, "gap_percentiles.csv"))
        assert os.path.exists(os.path.join(finished_run, "curve_p1_h_final.csv"))

    def test_incomplete_directory_is_2(self, tmp_path):
        assert main(["report", "--in", str(tmp_path)]) == 2

    def test_unknown_path_is_2(self, finished_run, capsys):
        assert main(["report", "--in", finished_run, "--paths", "zz"]) == 2
        assert "not present" in capsys.readouterr().err
