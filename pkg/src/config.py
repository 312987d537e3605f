"""Benchmark configuration and its flat `key = value` file format."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import (dataclass, field)
from pathlib import (Path)
from typing import (Any, Iterable, Optional)

import numpy as np

from errors import (ConfigError)
from iteration import (BoundingSets, FlowSettings, StepSchedule, StopRule)
from linalg import (Matrix)
from sim import (ExcitationConfig, SampleSchedule)

logger = logging.getLogger(__name__)

METHODS: tuple[str, ...] = (
    "pi-cl", "pi-irl",
    "vi-cl", "vi-irl",
    "flow-cl", "flow-irl",
    "ricflow-cl", "ricflow-irl",
    "sdp-cl1", "sdp-cl2", "sdp-cl3", "sdp-irl1", "sdp-irl2",
)

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a benchmark run."""

    n: int = 4
    m: int = 2
    num_systems: int = 100
    T: int = 20
    delta: float = 0.1
    hold: float = 0.01
    substeps_per_hold: int = 10
    sparsity: float = 0.5
    q_scale: float = 1.0
    r_scale: float = 1.0
    alpha: float = 200.0
    beta: float = 1.5
    eps_c: float = 40.0
    eps_p: float = 0.8
    radius_slope: float = 5.0
    seed: int = 0
    amplitude_scale: float = 1.0
    x0_scale: float = 1.0
    pi_tol: float = 1e-10
    pi_max_iter: int = 50
    vi_iterations: int = 5000
    vi_tol: float = 1e-12
    flow_horizon: float = 1.0
    flow_step: float = 1e-3
    riccati_horizon: float = 10.0
    riccati_step: float = 1e-3
    record_every: int = 10
    workers: int = 1
    timing_repeats: int = 5
    record_timing: bool = True
    methods: tuple[str, ...] = field(default=METHODS)
    out_dir: str = "results"

    def __post_init__(self) -> None:
        """Reject settings no run can use."""
        if self.n < 1 or self.m < 1:
            raise ConfigError("n and m must be positive")
        if self.num_systems < 1 or self.T < 1:
            raise ConfigError("num_systems and T must be positive")
        if self.hold <= 0 or self.delta <= 0:
            raise ConfigError("hold and delta must be positive")
        q = self.delta / self.hold
        if abs(q - round(q)) > 1e-9 * max(1.0, q):
            raise ConfigError("hold must divide delta")
        if self.substeps_per_hold < 2 or self.substeps_per_hold % 2:
            raise ConfigError("substeps_per_hold must be even")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError("sparsity must lie in [0, 1)")
        if self.q_scale <= 0 or self.r_scale <= 0:
            raise ConfigError("q_scale and r_scale must be positive")
        positive = ("alpha", "beta", "eps_c", "radius_slope", "flow_step",
                    "riccati_step", "pi_tol", "vi_tol")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.5 < self.eps_p <= 1.0:
            raise ConfigError("eps_p must lie in (1/2, 1]")
        if self.flow_horizon < 0 or self.riccati_horizon < 0:
            raise ConfigError("flow horizons must be non-negative")
        for name in ("pi_max_iter", "vi_iterations", "record_every",
                     "workers", "timing_repeats"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        unknown = [mid for mid in self.methods if mid not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {', '.join(unknown)}")
        if not self.methods:
            raise ConfigError("no methods selected")

    # SECTION Derived settings

    @property
    def Q(self) -> Matrix:
        """State weight q_scale I_n."""
        return self.q_scale * np.eye(self.n)

    @property
    def R(self) -> Matrix:
        """Input weight r_scale I_m."""
        return self.r_scale * np.eye(self.m)

    def schedule(self) -> SampleSchedule:
        """T consecutive windows of length delta."""
        return SampleSchedule.consecutive(self.T, self.delta,
                                          self.substeps_per_hold)

    def excitation(self, seed: int) -> ExcitationConfig:
        """Excitation of one system, drawn from its own seed."""
        return ExcitationConfig(self.hold, self.amplitude_scale, seed,
                                x0_scale=self.x0_scale)

    def stop_rule(self) -> StopRule:
        """Policy iteration stopping rule."""
        return StopRule(self.pi_tol, self.pi_max_iter)

    def step_schedule(self) -> StepSchedule:
        """Value iteration step sizes."""
        return StepSchedule(self.eps_c, self.eps_p)

    def bounds(self) -> BoundingSets:
        """Value iteration bounding sets."""
        return BoundingSets(self.radius_slope)

    def gradient_flow(self) -> FlowSettings:
        """Settings of both gradient flows."""
        return FlowSettings(self.flow_horizon, self.flow_step,
                            self.record_every)

    def riccati_flow(self) -> FlowSettings:
        """Settings of both Riccati flows."""
        return FlowSettings(self.riccati_horizon, self.riccati_step,
                            self.record_every)

    # !SECTION

    def items(self) -> Iterable[tuple[str, Any]]:
        """(key, value) pairs in declaration order."""
        for f in dataclasses.fields(self):
            yield f.name, getattr(self, f.name)

    def dumps(self) -> str:
        """The configuration in the file format load_config reads."""
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.items())


# SECTION Parsing

def format_value(value: Any) -> str:
    """Render a value the way coerce reads it back."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types() -> dict[str, str]:
    # annotations are strings under postponed evaluation
    return {f.name: str(f.type) for f in dataclasses.fields(ExperimentConfig)}


def coerce(key: str, text: str) -> Any:
    """Convert the text of one value to the type of field `key`."""
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = types[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("tuple"):
            return tuple(s.strip() for s in text.split(",") if s.strip())
        return text
    except ValueError as err:
        raise ConfigError(
            f"bad value {text!r} for {key} (expected {kind})") from err


def parse_lines(lines: Iterable[str],
                source: str = "<config>") -> dict[str, Any]:
    """Parse `key = value` lines; `#` starts a comment."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key = key.strip()
        if key in values:
            logger.warning("%s:%d: %s set twice, keeping the last value",
                           source, lineno, key)
        values[key] = coerce(key, value)
    return values


def parse_override(item: str) -> tuple[str, Any]:
    """Parse one `key=value` command-line override."""
    key, sep, value = item.partition("=")
    if not sep:
        raise ConfigError(f"override {item!r} is not key=value")
    key = key.strip()
    return key, coerce(key, value)


def load_config(path: Optional[Path] = None,
                overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read a configuration file, apply overrides and validate."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read {path}: {err}") from err
        values = parse_lines(text.splitlines(), str(path))
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    config = ExperimentConfig(**values)
    logger.debug("configuration: %s", dict(config.items()))
    return config

# !SECTION
