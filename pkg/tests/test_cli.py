import csv
from pathlib import Path

import pytest

from xcsim.cli import main
from xcsim.metrics import CONFLICT_HEADER, DOS_HEADER, REQUEST_HEADER


def test_read(capsys: pytest.CaptureFixture) -> None:
    assert main(["read"]) == 0
    out = capsys.readouterr().out
    assert "retrievedValue: 42" in out
    assert "consistent: True, conserved: True" in out


def test_quiet(capsys: pytest.CaptureFixture) -> None:
    assert main(["read", "--quiet", "--value", "5"]) == 0
    assert capsys.readouterr().out == ""


def test_write_outputs(tmp_path: Path) -> None:
    trace = tmp_path.joinpath("trace.log")
    metrics = tmp_path.joinpath("requests.csv")
    args = ["write", "--quiet", "--trace", str(trace), "--metrics", str(metrics)]
    assert main(args) == 0
    lines = trace.read_text().splitlines()
    assert lines and all(len(line.split(" ")) == 5 for line in lines)
    with open(metrics) as f:
        rows = list(csv.reader(f))
    assert rows[0] == REQUEST_HEADER
    assert [row[7] for row in rows[1:]] == ["Forwarded", "Completed"]


def test_same_seed_same_trace_file(tmp_path: Path) -> None:
    first, second = tmp_path.joinpath("1"), tmp_path.joinpath("2")
    assert main(["read", "--quiet", "--seed", "9", "--trace", str(first)]) == 0
    assert main(["read", "--quiet", "--seed", "9", "--trace", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_dos(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    metrics = tmp_path.joinpath("dos.csv")
    assert main(["dos", "--capital", "1000", "--cost", "5", "--metrics", str(metrics)]) == 0
    assert "accepted n*: 66" in capsys.readouterr().out
    with open(metrics) as f:
        rows = list(csv.reader(f))
    assert rows[0] == DOS_HEADER
    assert len(rows) == 1 + 67
    assert rows[-1][4] == "0"


def test_dos_bad_cost(capsys: pytest.CaptureFixture) -> None:
    assert main(["dos", "--cost", "five"]) == 1
    assert "bad --cost value" in capsys.readouterr().err


def test_fuzz(capsys: pytest.CaptureFixture) -> None:
    assert main(["fuzz", "--iterations", "100", "--workers", "2"]) == 0
    out = capsys.readouterr().out
    assert "iterations: 100" in out
    assert "s_main_violations: 0" in out


def test_soak(capsys: pytest.CaptureFixture) -> None:
    assert main(["soak", "--requests", "10"]) == 0
    out = capsys.readouterr().out
    assert "compact bypass:" in out and "six-block rule:" in out


def test_missing_config(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    assert main(["read", "--config", str(tmp_path.joinpath("nope.json"))]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_seed_must_fit_u64() -> None:
    with pytest.raises(SystemExit):
        main(["read", "--seed", str(1 << 64)])


def test_check(capsys: pytest.CaptureFixture) -> None:
    assert main(["check"]) == 0
    lines = capsys.readouterr().out.splitlines()
    names = ["read", "write", "dos", "fuzz", "soak", "determinism"]
    assert lines == [f"{name}: ok" for name in names]


def test_conflicts_file(tmp_path: Path) -> None:
    conflicts = tmp_path.joinpath("conflicts.csv")
    assert main(["write", "--quiet", "--conflicts", str(conflicts)]) == 0
    with open(conflicts) as f:
        rows = list(csv.reader(f))
    # a lone remote write races with nothing
    assert rows == [CONFLICT_HEADER]
