import json
import subprocess
import sys

import pytest

from prv_accountant.cli import run_cli
from prv_accountant.report import ComposeReport, records_from_csv

from oracles import gaussian_delta


def test_compose_json_brackets_gaussian(capsys):
  rc = run_cli(["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "4",
                "--eps", "0.5", "--eps-err", "0.05", "--delta-err", "1e-8",
                "--algorithm", "two-stage", "--format", "json"])
  assert rc == 0
  out = json.loads(capsys.readouterr().out)
  (pt,) = out["points"]
  assert pt["delta_lower"] <= gaussian_delta(1.0, 4, 0.5) <= pt["delta_upper"]
  assert out["k"] == 4 and out["algorithm"] == "two-stage"


def test_compose_without_mechanism_is_usage_error(capsys):
  assert run_cli(["compose"]) == 2
  assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["compose", "--mechanism", "laplace", "--compositions", "4", "--eps", "1"],
    ["compose", "--mechanism", "gaussian", "--sigma", "-1", "--compositions", "4", "--eps", "1"],
    ["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "6", "--eps", "1",
     "--algorithm", "recursive"],
    ["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "4", "--eps", "-1"],
    ["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "4", "--eps", "x"],
    ["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "4", "--eps", "1",
     "--delta-err", "2"],
    ["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "4", "--eps", "1",
     "--override-h", "0.1"],
])
def test_argument_errors(argv, capsys):
  assert run_cli(argv) == 2


def test_numerical_error_exit_code(capsys):
  # the target delta lies below the sandwich floor
  rc = run_cli(["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "4",
                "--delta", "1e-12", "--eps-err", "0.05", "--delta-err", "1e-8"])
  assert rc == 1
  assert "numerical error" in capsys.readouterr().err


def test_compose_delta_query_csv(tmp_path):
  out = tmp_path / "r.csv"
  rc = run_cli(["compose", "--mechanism", "subsampled-gaussian", "--sigma", "1",
                "--sampling-prob", "0.5", "--direction", "both", "--compositions", "8",
                "--delta", "1e-4", "--format", "csv", "--output", str(out)])
  assert rc == 0
  rep = ComposeReport.from_csv(out.read_text())
  (p,) = rep.eps_points
  assert p.eps_lower <= p.eps_estimate <= p.eps_upper
  assert rep.direction == "both"


def test_sweep_with_plot(tmp_path, capsys):
  svg = tmp_path / "s.svg"
  rc = run_cli(["sweep", "--mechanism", "laplace", "--scale", "2", "--compositions", "16",
                "--algorithm", "recursive", "--eps-range", "0,2,5", "--plot", str(svg)])
  assert rc == 0
  out = json.loads(capsys.readouterr().out)
  assert len(out["points"]) == 5 and len(out["buckets_per_stage"]) == 4
  assert svg.exists()


def test_overrides_are_honoured(capsys):
  rc = run_cli(["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "4",
                "--eps", "1", "--override-h1", "0.001", "--override-h2", "0.004",
                "--override-L1", "6", "--override-L2", "12"])
  assert rc == 0
  out = json.loads(capsys.readouterr().out)
  assert out["buckets_per_stage"] == [2 * 6000 + 1, 2 * 3000 + 1]


def test_loose_constants_flagged(capsys):
  rc = run_cli(["compose", "--mechanism", "gaussian", "--sigma", "1", "--compositions", "8",
                "--eps", "1", "--algorithm", "recursive", "--loose-constants"])
  assert rc == 0
  cap = capsys.readouterr()
  assert json.loads(cap.out)["loose_constants"] is True
  assert "warning" in cap.err


def test_benchmark_csv(tmp_path):
  out = tmp_path / "b.csv"
  rc = run_cli(["benchmark", "--mechanism", "subsampled-gaussian", "--sigma", "226.86",
                "--sampling-prob", "0.2", "--k-list", "1024,4096", "--repeats", "2",
                "--scale-noise", "--output", str(out)])
  assert rc == 0
  records = records_from_csv(out.read_text())
  assert [(r.k, r.algorithm) for r in records] == [
      (1024, "single"), (1024, "two-stage"), (4096, "single"), (4096, "two-stage")]
  assert all(r.repeats == 2 for r in records)


def test_module_entry_point():
  proc = subprocess.run([sys.executable, "-m", "prv_accountant", "compose", "--mechanism",
                         "gaussian", "--sigma", "2", "--compositions", "2", "--eps", "0.5"],
                        capture_output=True, text=True, timeout=120)
  assert proc.returncode == 0, proc.stderr
  assert json.loads(proc.stdout)["k"] == 2
