import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from qtask import cli
from qtask.backends import StatevectorBackend
from qtask.experiments import REPORT_COLUMNS

CORPUS = Path(__file__).parent / "qir_corpus"


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def ghz_cut(capsys, *extra, fmt="json"):
    code, out, err = run_cli(capsys, "ghz-cut", "--qubits", "4", "--cuts", "1,2", "--shots", "1000",
                             "--workers", "4", "--seed", "7", "--format", fmt, *extra)
    assert code == 0, err
    return out


def test_ghz_cut_json_row(capsys):
    (row,) = json.loads(ghz_cut(capsys))
    assert tuple(row) == REPORT_COLUMNS
    assert row["cut_circuits"] == "192" and row["n"] == "4"
    assert abs(float(row["value"]) - 1) < 0.12
    assert len(row["value"].split(".")[1]) == 6


def test_formats_share_numbers(capsys):
    (js,) = json.loads(ghz_cut(capsys, fmt="json"))
    (cs,) = list(csv.DictReader(io.StringIO(ghz_cut(capsys, fmt="csv"))))
    table = ghz_cut(capsys, fmt="table").splitlines()
    header, values = table[0].split(), table[2].split()
    tb = dict(zip(header, values))
    for key in ("backend", "value", "sigma", "n", "cut_circuits"):
        assert js[key] == cs[key] == tb[key]


def test_ghz_cut_20_qubits(capsys):
    code, out, _ = run_cli(capsys, "ghz-cut", "--qubits", "20", "--cuts", "6,13", "--shots", "100",
                           "--format", "json", "--workers", "2")
    (row,) = json.loads(out)
    assert code == 0 and row["cut_circuits"] == "192"
    assert abs(float(row["value"]) - 1) < 3 * float(row["sigma"])


@pytest.mark.parametrize("argv,fragment", [
    (["ghz-cut", "--qubits", "4", "--cuts", "0,5"], "invalid cut plan"),
    (["ghz-cut", "--qubits", "4", "--cuts", "x"], "cuts"),
    (["ghz-nocut", "--qubits", "31"], "30"),
    (["ghz-cut", "--qubits", "4", "--cuts", "1", "--policy", "random"], "policy"),
    (["ghz-cut", "--qubits", "4", "--cuts", "1", "--backend", "gpu"], "backend"),
    (["ghz-nocut", "--qubits", "4", "--shots", "0"], "shots"),
    (["qir-run", "--file", "/does/not/exist.ll"], "cannot read"),
])
def test_usage_errors_exit_2(capsys, argv, fragment):
    try:
        code = cli.main(argv)
    except SystemExit as exc:  # argparse-level rejection
        code = exc.code
    _, err = capsys.readouterr()
    assert code == 2
    assert fragment in err


def test_ghz_nocut_exact_and_deterministic(capsys):
    code, out, _ = run_cli(capsys, "ghz-nocut", "--qubits", "20", "--shots", "100", "--exact",
                           "--format", "csv")
    (row,) = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and row["value"] == "1.000000" and row["cut_circuits"] == "no cut"
    a = run_cli(capsys, "ghz-nocut", "--qubits", "4", "--shots", "100", "--seed", "3", "--format", "json")
    b = run_cli(capsys, "ghz-nocut", "--qubits", "4", "--shots", "100", "--seed", "3", "--format", "json")
    va, vb = json.loads(a[1])[0], json.loads(b[1])[0]
    assert (va["value"], va["sigma"]) == (vb["value"], vb["sigma"])
    # parity mean of a GHZ(4) histogram: every shot is even
    assert va["value"] == "1.000000"


def test_qir_run_bell(capsys):
    code, out, _ = run_cli(capsys, "qir-run", "--file", str(CORPUS / "valid" / "bell.ll"),
                           "--shots", "1000", "--format", "json")
    data = json.loads(out)
    assert code == 0
    assert set(data["histogram"]["counts"]) <= {"00", "11"}
    assert sum(data["histogram"]["counts"].values()) == 1000


def test_qir_run_malformed_prints_diagnostics(capsys):
    code, _, err = run_cli(capsys, "qir-run", "--file", str(CORPUS / "invalid" / "branch.ll"))
    assert code == 1
    assert "line 4: error: unsupported control flow" in err


def test_qir_run_mock_delay(capsys):
    code, out, _ = run_cli(capsys, "qir-run", "--file", str(CORPUS / "valid" / "bell.ll"),
                           "--backend", "mock(sv):delay=0.5", "--shots", "10", "--format", "json",
                           "--workers", "1")
    assert code == 0 and json.loads(out)["timing"]["full"] >= 0.5


def test_execution_error_exit_1(capsys, monkeypatch):
    def broken(self, circuit, shots, seed=None):
        raise RuntimeError("simulator crashed")

    monkeypatch.setattr(StatevectorBackend, "run", broken)
    code, _, err = run_cli(capsys, "ghz-nocut", "--qubits", "3", "--workers", "1")
    assert code == 1 and "simulator crashed" in err


def test_output_manifest_and_replay(capsys, tmp_path):
    report = tmp_path / "cut.json"
    ghz_cut(capsys, "--output", str(report))
    manifest = tmp_path / "cut.manifest.json"
    assert manifest.exists()
    original = json.loads(report.read_text())[0]
    for workers in ([], ["--workers", "1"]):
        code, out, _ = run_cli(capsys, "replay", "--manifest", str(manifest), "--format", "json",
                               *workers)
        replayed = json.loads(out)[0]
        assert code == 0
        assert (replayed["value"], replayed["sigma"]) == (original["value"], original["sigma"])


def test_replay_missing_seed(capsys, tmp_path):
    report = tmp_path / "r.csv"
    ghz_cut(capsys, "--output", str(report))
    manifest = tmp_path / "r.manifest.json"
    data = json.loads(manifest.read_text())
    del data["seed"]
    manifest.write_text(json.dumps(data))
    code, _, err = run_cli(capsys, "replay", "--manifest", str(manifest))
    assert code == 2 and "seed" in err and "missing" in err


def test_worker_count_env(capsys, monkeypatch):
    from qtask import experiments

    seen = []
    real = experiments.submit

    def spy(graph, workers, *args, **kwargs):
        seen.append(len(workers))
        return real(graph, workers, *args, **kwargs)

    monkeypatch.setattr(experiments, "submit", spy)
    monkeypatch.setenv("QTASK_WORKERS", "3")
    run_cli(capsys, "ghz-nocut", "--qubits", "3")
    run_cli(capsys, "ghz-nocut", "--qubits", "3", "--workers", "2")
    assert seen == [3, 2]


def test_multiple_backends_and_pipe(capsys):
    code, out, _ = run_cli(capsys, "ghz-cut", "--qubits", "4", "--cuts", "1", "--shots", "50",
                           "--backend", "sv", "--backend", "mock(sv):delay=0", "--workers", "2",
                           "--transport", "pipe", "--policy", "leastloaded", "--format", "json")
    (row,) = json.loads(out)
    assert code == 0 and row["backend"] == "sv+mock(sv):delay=0" and row["cut_circuits"] == "16"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qtask", "ghz-nocut", "--qubits", "2",
                           "--shots", "10", "--exact", "--format", "csv", "--workers", "1"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[0] == ",".join(REPORT_COLUMNS)


def test_estimator_choice(capsys):
    rows = {}
    for estimator in ("factorized", "per-tuple"):
        (rows[estimator],) = json.loads(ghz_cut(capsys, "--estimator", estimator))
    assert float(rows["factorized"]["sigma"]) < float(rows["per-tuple"]["sigma"])
    assert rows["factorized"]["cut_circuits"] == rows["per-tuple"]["cut_circuits"] == "192"
