"""Run configuration: an INI file with one section per stage.

Every key has a default; unknown sections or keys are rejected. Example::

    [data]
    path = data/synthetic_monthly.csv
    split = 1991-01

    [ppo]
    total_episodes = 200000
    seed = 7
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .env import EnvConfig
from .ppo import PpoConfig

CONFIG_ENV_VAR = "GBWM_CONFIG"


@dataclass
class DataConfig:
    path: str = "data/synthetic_monthly.csv"
    date_col: str = "date"
    bond_col: str = "bond_return"
    stock_col: str = "stock_return"
    split: str = "1991-01"


@dataclass
class GeneratorConfig:
    train_windows: tuple = (120,)
    seed: int = 7


@dataclass
class DpConfig:
    nodes: int = 300
    alphas: int = 21


@dataclass
class BenchmarkConfig:
    gamma: float | None = None  # None: take the sweep optimum
    budget: float | None = None
    gamma_grid: str = "0.004:0.05:0.002"
    budget_grid: str = "0.001:0.02:0.001"
    sweep_count: int = 10_000
    sweep_seed: int = 11


@dataclass
class EvalConfig:
    count: int = 10_000
    seed: int = 7
    workers: int = 1
    checkpoint: str = "runs/rl_policy.json"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    dp: DpConfig = field(default_factory=DpConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    benchmarks: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def section(self, name: str):
        return getattr(self, name)

    def replace(self, section: str, **changes) -> "RunConfig":
        """Copy with some keys of one section changed (``None`` values ignored)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        new = dataclasses.replace(self.section(section), **changes)
        return dataclasses.replace(self, **{section: new})

    def to_dict(self) -> dict:
        out = {}
        for sec in fields(self):
            obj = getattr(self, sec.name)
            out[sec.name] = {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
        return out

    def to_ini(self) -> str:
        lines = []
        for sec, values in self.to_dict().items():
            lines.append(f"[{sec}]")
            for k, v in values.items():
                lines.append(f"{k} = {_format(v)}")
            lines.append("")
        return "\n".join(lines)


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(text: str, default, key: str):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, tuple):
        return tuple(int(x) for x in text.split(",") if x.strip())
    if default is None:
        return None if text == "" else float(text)
    if isinstance(default, int):
        return int(float(text)) if "e" in text.lower() else int(text)
    if isinstance(default, float):
        return float(text)
    return text


def load_config(path=None) -> RunConfig:
    """Defaults overlaid with ``path`` (or $GBWM_CONFIG when ``path`` is None)."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    cfg = RunConfig()
    if not path:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(p.read_text())
    known = {f.name for f in fields(RunConfig)}
    for section in parser.sections():
        if section not in known:
            raise ValueError(f"unknown config section [{section}]")
        obj = cfg.section(section)
        defaults = {f.name: getattr(obj, f.name) for f in fields(obj)}
        changes = {}
        for key, raw in parser.items(section):
            if key not in defaults:
                raise ValueError(f"unknown config key {section}.{key}")
            changes[key] = _coerce(raw, defaults[key], f"{section}.{key}")
        cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(obj, **changes)})
    return cfg
