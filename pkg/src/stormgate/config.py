"""Pipeline configuration as a sectioned key-value (INI) file."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

import pandas as pd

from .interp import ParamSpec, _SPEC_KEYS, default_param_specs, param_specs_from_sections


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    outages: str = "outages.csv"
    weather: str = "weather.csv"
    stations: str = "stations.csv"
    statics: str = "counties.csv"
    adjacency: str = "adjacency.csv"
    external: str = "external_events.csv"


@dataclass
class Spans:
    train_start: str = "2021-06-01T00:00:00Z"
    train_end: str = "2021-08-31T23:00:00Z"
    test_start: str = "2021-09-01T00:00:00Z"
    test_end: str = "2021-12-01T23:00:00Z"


@dataclass
class TargetConfig:
    horizon: int = 48
    peak_threshold: float = 50000.0
    window: int = 48
    min_anoms: int = 3
    positive_share: float = 0.34
    max_gap: int = 4


@dataclass
class FeatureConfig:
    idw_k: int = 5
    idw_power: float = 2.0


@dataclass
class ModelConfig:
    tau: float = 0.70
    n_select: int = 8
    folds: int = 3
    c_grid: str = "0.001,0.01,0.1,1"
    positive_weight: float = 5.0
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 2
    val_fraction: float = 0.1
    hidden: int = 16


@dataclass
class EvalConfig:
    deltas: str = "0,6,12,24,36,48"
    omegas: str = "6,12,24,36,48"
    season_lag: int = 24
    ma_k: int = 5
    merge_gap: int = 24
    bootstrap_b: int = 500
    block: int = 168
    pred_events: str = "resampled"
    scope: str = "all"
    permutations: int = 999


@dataclass
class PipelineConfig:
    seed: int = 20210601
    paths: Paths = field(default_factory=Paths)
    spans: Spans = field(default_factory=Spans)
    targets: TargetConfig = field(default_factory=TargetConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    interp: dict = field(default_factory=default_param_specs)

    def validate(self) -> None:
        ts = {k: _utc(getattr(self.spans, k), f"spans.{k}") for k in
              ("train_start", "train_end", "test_start", "test_end")}
        if not ts["train_start"] <= ts["train_end"] < ts["test_start"] <= ts["test_end"]:
            raise ConfigError("spans: train span must strictly precede the test span")
        if self.targets.horizon <= 0:
            raise ConfigError("targets.horizon: must be positive")
        if not 0 < self.model.tau < 1:
            raise ConfigError("model.tau: must lie in (0, 1)")
        if self.eval.scope not in ("all", "available"):
            raise ConfigError("eval.scope: must be 'all' or 'available'")
        if self.eval.pred_events not in ("resampled", "original"):
            raise ConfigError("eval.pred_events: must be 'resampled' or 'original'")
        for name, spec in self.interp.items():
            if spec.method not in ("ordinary", "universal", "join", "gradient"):
                raise ConfigError(f"interp.{name}.method: unknown method {spec.method!r}")
        _ints(self.eval.deltas, "eval.deltas")
        _ints(self.eval.omegas, "eval.omegas")
        _floats(self.model.c_grid, "model.c_grid")

    @property
    def train_span(self):
        return _utc(self.spans.train_start), _utc(self.spans.train_end)

    @property
    def test_span(self):
        return _utc(self.spans.test_start), _utc(self.spans.test_end)

    @property
    def deltas(self):
        return _ints(self.eval.deltas, "eval.deltas")

    @property
    def omegas(self):
        return _ints(self.eval.omegas, "eval.omegas")

    @property
    def c_grid(self):
        return _floats(self.model.c_grid, "model.c_grid")


def _utc(s, where="time"):
    try:
        t = pd.Timestamp(s)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: cannot parse {s!r} ({exc})") from None
    return t.tz_localize("UTC") if t.tzinfo is None else t.tz_convert("UTC")


def _ints(s, where):
    try:
        return tuple(int(x) for x in str(s).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated integers, got {s!r}") from None


def _floats(s, where):
    try:
        return tuple(float(x) for x in str(s).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated numbers, got {s!r}") from None


_SECTIONS = ("paths", "spans", "targets", "features", "model", "eval")
INTERP_PREFIX = "interp."


def _coerce(raw, typ, where):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {typ if isinstance(typ, str) else typ.__name__}, "
                          f"got {raw!r}") from None
    return raw


def to_parser(cfg: PipelineConfig) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp["run"] = {"seed": str(cfg.seed)}
    for sec in _SECTIONS:
        obj = getattr(cfg, sec)
        cp[sec] = {f.name: str(getattr(obj, f.name)) for f in fields(obj)}
    for name, s in cfg.interp.items():
        cp[INTERP_PREFIX + name] = {k: ("" if getattr(s, k) is None else str(getattr(s, k)))
                                    for k in _SPEC_KEYS}
    return cp


def write_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        to_parser(cfg).write(fh)


def from_parser(cp: configparser.ConfigParser) -> PipelineConfig:
    cfg = PipelineConfig()
    known = set(_SECTIONS) | {"run"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith(INTERP_PREFIX):
            raise ConfigError(f"[{sec}]: unknown section")
    if cp.has_section("run"):
        for key, raw in cp["run"].items():
            if key != "seed":
                raise ConfigError(f"run.{key}: unknown key")
            cfg.seed = _coerce(raw, int, "run.seed")
    for sec in _SECTIONS:
        if not cp.has_section(sec):
            continue
        obj = getattr(cfg, sec)
        types = {f.name: f.type for f in fields(obj)}
        for key, raw in cp[sec].items():
            if key not in types:
                raise ConfigError(f"{sec}.{key}: unknown key")
            setattr(obj, key, _coerce(raw.strip(), types[key], f"{sec}.{key}"))
    if any(s.startswith(INTERP_PREFIX) for s in cp.sections()):
        try:
            cfg.interp = param_specs_from_sections(cp, INTERP_PREFIX)
        except ValueError as exc:
            raise ConfigError(f"interp: {exc}") from None
    cfg.validate()
    return cfg


def read_config(path) -> PipelineConfig:
    cp = configparser.ConfigParser()
    try:
        ok = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not ok:
        raise FileNotFoundError(path)
    return from_parser(cp)


def resolve(cfg: PipelineConfig, base: Path, name: str) -> Path:
    p = Path(getattr(cfg.paths, name))
    return p if p.is_absolute() else Path(base) / p


__all__ = ["ConfigError", "PipelineConfig", "ParamSpec", "read_config", "write_config",
           "to_parser", "from_parser", "resolve"]
