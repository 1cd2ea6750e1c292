"""Simulation configuration: flat key=value files with CLI-style overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError

BASELINES = ("flykites", "sep", "op-dm", "op-sta", "no-dt")


@dataclass
class SimConfig:
    scenario: str = ""
    robots: int = 4
    seed: int = 1
    dt: float = 0.1
    v_robot: float = 0.6
    v_operator: float = 0.3
    sensor_range: float = 10.0
    comm_model: str = "binary"
    comm_range: float = 5.0
    comm_threshold: float = 0.5
    T_h: float = 60.0
    baseline: str = "flykites"
    operator_mode: str = "reduce"  # reduce | follow | stay | interactive
    coverage_goal: float = 0.995
    time_cap: float = 0.0  # 0 -> derived from the scenario
    min_frontier_size: int = 3
    meeting_slack: float = 10.0
    hold_time: float = 5.0
    interaction_delay: float = 5.0
    c2vrp: str = "greedy"  # greedy | exact
    lbap: str = "threshold"  # threshold | exhaustive
    out: str = ""
    serve_port: int = 0
    realtime_factor: float = 0.0  # 0 -> run as fast as possible

    def __post_init__(self):
        self.baseline = self.baseline.lower()
        if self.baseline not in BASELINES:
            raise ConfigError(f"unknown baseline {self.baseline!r}; expected one of {BASELINES}")
        if self.robots < 1:
            raise ConfigError("robots must be >= 1")
        for name in ("dt", "v_robot", "v_operator", "sensor_range", "comm_range", "T_h"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.coverage_goal <= 1:
            raise ConfigError("coverage_goal must be in (0, 1]")
        if self.operator_mode not in ("reduce", "follow", "stay", "interactive"):
            raise ConfigError(f"unknown operator_mode {self.operator_mode!r}")

    @property
    def out_dir(self) -> str:
        return self.out or os.environ.get("FLYKITES_OUT_DIR", "out")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_pairs(cls, pairs: dict) -> "SimConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        for key, raw in pairs.items():
            name = key.replace(".", "_").replace("-", "_")
            # accept the documented dotted aliases
            name = {
                "comm_range_m": "comm_range",
                "spread_T_h_s": "T_h",
                "spread_min_frontier_size": "min_frontier_size",
                "spread_meeting_slack_s": "meeting_slack",
                "spread_c2vrp": "c2vrp",
                "relay_operator_mode": "operator_mode",
                "relay_lbap": "lbap",
            }.get(name, name)
            if not hasattr(defaults, name):
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(defaults, name)
            try:
                if isinstance(current, bool):
                    kwargs[name] = raw.lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    kwargs[name] = int(raw)
                elif isinstance(current, float):
                    kwargs[name] = float(raw)
                else:
                    kwargs[name] = raw
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "SimConfig":
        pairs = parse_kv_file(path)
        pairs.update(overrides or {})
        return cls.from_pairs(pairs)


def parse_kv_file(path) -> dict:
    """Parse a flat `key = value` file; '#' starts a comment."""
    pairs = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
    return pairs
