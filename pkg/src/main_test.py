"""Test the command line."""

from pathlib import (Path)

import numpy as np
import pytest

import bench
from main import (build_parser, main)
from sim import (load_matrix)


def write_config(path: Path, *lines: str) -> Path:
    """A small benchmark configuration."""
    path.write_text("\n".join(("num_systems = 1", "seed = 5") + lines)
                    + "\n")
    return path


def blocks(text: str) -> dict[str, np.ndarray]:
    """Matrices printed by solve, keyed by their '# name' header."""
    out: dict[str, list[list[float]]] = {}
    name = ""
    for line in text.splitlines():
        if line.startswith("#"):
            name = line[1:].strip()
            out[name] = []
        elif line.strip():
            out[name].append([float(v) for v in line.split(",")])
    return {k: np.array(v) for k, v in out.items()}


def test_usage_errors() -> None:
    """Bad command lines exit with status 1."""
    for argv in (["solve"], ["bench", "--config", "x.txt"], ["frobnicate"],
                 ["solve", "--method", "newton", "--data", "."],
                 ["-v", "-q", "compare", "--out", "."]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 1


def test_parser_lists_methods() -> None:
    """solve offers every method id."""
    args = build_parser().parse_args(
        ["solve", "--method", "sdp-irl2", "--data", "d"])
    assert args.method == "sdp-irl2"
    assert args.config is None


def test_gen_and_solve(tmp_path, capsys) -> None:  # type: ignore
    """gen writes the data; solve recovers K* from it alone."""
    config = write_config(tmp_path / "c.txt")
    data = tmp_path / "data"
    assert main(["gen", "--config", str(config), "--out", str(data)]) == 0
    for name in ("Xbar", "Utilde", "Xtilde", "GammaDx", "GammaXX",
                 "GammaUX", "GammaXU", "Q", "R", "K0"):
        assert (data / f"{name}.csv").exists()
    assert (data / "trajectory.csv").exists()
    assert (data / "config.txt").exists()
    kstar = load_matrix(data / "reference" / "Kstar.csv")
    capsys.readouterr()

    assert main(["solve", "--method", "pi-cl", "--data", str(data)]) == 0
    printed = blocks(capsys.readouterr().out)
    assert np.allclose(printed["K"], kstar, atol=1e-6)
    assert printed["P"].shape == (4, 4)

    assert main(["solve", "--method", "sdp-cl1", "--data", str(data)]) == 0
    printed = blocks(capsys.readouterr().out)
    assert "P" not in printed
    assert np.allclose(printed["K"], kstar, atol=1e-2)


def test_solve_without_data(tmp_path) -> None:  # type: ignore
    """A missing data directory is a configuration error."""
    assert main(["solve", "--method", "pi-cl",
                 "--data", str(tmp_path / "none")]) == 1


def test_weights_and_failures(tmp_path, monkeypatch) -> None:  # type: ignore
    """A non-symmetric Q exits 1; a numpy failure in a method exits 3."""
    config = write_config(tmp_path / "c.txt")
    data = tmp_path / "data"
    assert main(["gen", "--config", str(config), "--out", str(data)]) == 0
    q = data / "Q.csv"
    good = q.read_text()
    Q = np.eye(4)
    Q[0, 1] = 1.0
    np.savetxt(q, Q, delimiter=",")
    assert main(["solve", "--method", "pi-cl", "--data", str(data)]) == 1
    q.write_text(good)

    def singular(problem, config):  # type: ignore[no-untyped-def]
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setitem(bench.RUNNERS, "pi-cl", singular)
    assert main(["solve", "--method", "pi-cl", "--data", str(data)]) == 3


def test_bad_configuration(tmp_path) -> None:  # type: ignore
    """Invalid values and unknown keys exit 1."""
    config = write_config(tmp_path / "c.txt")
    assert main(["gen", "--config", str(config), "--set", "n=0"]) == 1
    bad = write_config(tmp_path / "bad.txt", "horizon = 3")
    assert main(["gen", "--config", str(bad)]) == 1


def test_not_informative_exit(tmp_path) -> None:  # type: ignore
    """Too few windows exit 2."""
    config = write_config(tmp_path / "c.txt", "T = 2")
    assert main(["gen", "--config", str(config),
                 "--out", str(tmp_path / "d")]) == 2


def test_bench_and_compare(tmp_path, capsys) -> None:  # type: ignore
    """bench writes the results that compare summarizes."""
    config = write_config(tmp_path / "c.txt", "methods = pi-cl,pi-irl",
                          "record_timing = false")
    out = tmp_path / "results"
    assert main(["-q", "bench", "--config", str(config),
                 "--out", str(out)]) == 0
    assert (out / "pi-cl.csv").exists()
    assert (out / "summary.csv").exists()
    capsys.readouterr()

    assert main(["compare", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "pi-cl" in text and "pi-irl" in text
    assert main(["compare", "--out", str(tmp_path / "missing")]) == 1
