"""Global configuration (morgen.ini-style key=value file with sections)."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields


@dataclass
class GlobalConfig:
    # parameter box: T0 in kelvin, RS in J/(kg K)
    T0_range: tuple[float, float] = (273.15, 288.15)
    RS_range: tuple[float, float] = (500.0, 600.0)
    # discretization
    v_max: float = 20.0
    eps: float = 0.01
    dt: float = 60.0
    refine_steps: int = 2
    default_diameter: float = 1.0
    # physics
    friction: str = "schifrinson"
    compressibility: str = "aga88"
    eta: float = 1.0e-5
    p_crit: float = 46.4e5
    T_crit: float = 192.0
    # solvers
    solver: str = "imex1"
    gamma: float = 1.0
    lam: float = 0.5
    # steady state
    steady_tol: float = 1e-12
    max_corrections: int = 10
    march_hours: float = 24.0
    # training
    horizon: float = 3600.0
    input_shape: str = "step"
    perturbation: float = 0.01
    # benchmark
    order_max: int = 150
    order_step: int = 2
    n_test: int = 5
    seed: int = 1009
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    cache_dir: str = ""

    def __post_init__(self):
        for lo, hi in (self.T0_range, self.RS_range):
            if not 0 < lo < hi:
                raise ValueError("parameter ranges must be positive and non-degenerate")

    def replace(self, **changes) -> "GlobalConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _convert(kind: str, text: str):
    text = text.strip()
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(float(text))
    if kind == "str":
        return text
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return tuple(float(v) for v in parts)


def load_config(path=None, **overrides) -> GlobalConfig:
    """Read a config file; sections are optional and only group keys."""
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        if not text.lstrip().startswith("["):
            text = "[config]\n" + text
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        parser.read_string(text)
        types = {f.name: str(f.type) for f in fields(GlobalConfig)}
        for section in parser.sections():
            for key, raw in parser[section].items():
                if key not in types:
                    raise ValueError(f"unknown config key {key!r}")
                values[key] = _convert(types[key].split("[")[0], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return GlobalConfig(**values)
