"""Test configuration parsing and validation."""

import logging

import numpy as np
import pytest

from config import (
    METHODS, ExperimentConfig, coerce, load_config, parse_lines,
    parse_override
)
from errors import (ConfigError)


def test_defaults() -> None:
    """The benchmark defaults."""
    config = ExperimentConfig()
    assert (config.n, config.m, config.T) == (4, 2, 20)
    assert config.num_systems == 100
    assert config.delta == 0.1 and config.hold == 0.01
    assert config.alpha == 200.0 and config.beta == 1.5
    assert config.methods == METHODS
    assert np.array_equal(config.Q, np.eye(4))
    assert np.array_equal(config.R, np.eye(2))
    assert config.schedule().T == 20
    assert config.step_schedule()(0) == 40.0
    assert config.bounds().radius(1) == 10.0
    assert config.gradient_flow().steps == 1000
    assert config.riccati_flow().steps == 10000


def test_validation() -> None:
    """Unusable settings raise ConfigError."""
    bad = [
        {"n": 0},
        {"hold": 0.03},
        {"substeps_per_hold": 3},
        {"sparsity": 1.0},
        {"alpha": -1.0},
        {"eps_p": 0.5},
        {"workers": 0},
        {"methods": ("pi-cl", "newton")},
        {"methods": ()},
    ]
    for kwargs in bad:
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs)


def test_coerce() -> None:
    """Values take the type of their field."""
    assert coerce("n", " 3 ") == 3
    assert coerce("delta", "0.2") == 0.2
    assert coerce("record_timing", "No") is False
    assert coerce("record_timing", "on") is True
    assert coerce("methods", "pi-cl, vi-irl,") == ("pi-cl", "vi-irl")
    assert coerce("out_dir", "runs/a") == "runs/a"
    with pytest.raises(ConfigError, match="unknown configuration key"):
        coerce("horizon", "1")
    with pytest.raises(ConfigError, match="expected int"):
        coerce("n", "four")
    with pytest.raises(ConfigError):
        coerce("record_timing", "maybe")


def test_parse_lines(caplog: pytest.LogCaptureFixture) -> None:
    """Comments and blank lines are skipped; a repeated key warns."""
    lines = [
        "# benchmark",
        "",
        "n = 3   # states",
        "T = 30",
        "n = 2",
    ]
    with caplog.at_level(logging.WARNING):
        values = parse_lines(lines)
    assert values == {"n": 2, "T": 30}
    assert "set twice" in caplog.text

    with pytest.raises(ConfigError, match="<config>:1"):
        parse_lines(["n 3"])


def test_override() -> None:
    """key=value on the command line."""
    assert parse_override("seed=7") == ("seed", 7)
    with pytest.raises(ConfigError):
        parse_override("seed")


def test_load_config(tmp_path) -> None:  # type: ignore[no-untyped-def]
    """A file plus overrides; overrides win."""
    path = tmp_path / "bench.txt"
    path.write_text("num_systems = 5\nseed = 3\nmethods = pi-cl,sdp-cl3\n")
    config = load_config(path, ["seed=4"])
    assert config.num_systems == 5
    assert config.seed == 4
    assert config.methods == ("pi-cl", "sdp-cl3")

    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.txt")


def test_dumps_reads_back(tmp_path) -> None:  # type: ignore[no-untyped-def]
    """The written configuration loads to an equal one."""
    config = ExperimentConfig(n=3, delta=0.05, record_timing=False,
                              methods=("vi-cl", "flow-irl"))
    path = tmp_path / "config.txt"
    path.write_text(config.dumps())
    assert load_config(path) == config
