""" Experiment configuration: JSON files with nested sections, overridden by flags. """
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import serpy

from constants import NK_MAX_ITER, NK_TOL, OUTPUT_DIR_ENV, Scheme, Strategy

DEFAULT_ALPHA_GRID = [round(-10.0 + 0.5 * k, 12) for k in range(41)]


class ConfigError(ValueError):
    """ Invalid configuration; field is the dotted path of the offending entry. """

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class ModelConfig:
    name: str = "lqr"
    params: dict = field(default_factory=dict)


@dataclass
class IntegratorConfig:
    """ None leaves the model's default in place. """

    scheme: Optional[Scheme] = None
    dt: Optional[float] = None
    t_final: Optional[float] = None


@dataclass
class AnalysisConfig:
    residual_on: bool = False
    residual_stride: int = 1
    corrected: bool = False


@dataclass
class SdcConfig:
    indices: tuple[int, int, int] = (1, 1, 2)
    alpha_grid: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))
    closed_loop: bool = False


@dataclass
class BenchConfig:
    strategies: list[Strategy] = field(default_factory=lambda: [Strategy.OFFLINE_ONLINE, Strategy.CASCADE_NK,
                                                                 Strategy.DIRECT])
    mu: list[float] = field(default_factory=lambda: [1.0, 2.0])


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    strategy: Strategy = Strategy.CASCADE_NK
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    sdc: Optional[SdcConfig] = None
    bench: BenchConfig = field(default_factory=BenchConfig)
    nk_tol: float = NK_TOL
    nk_max_iter: int = NK_MAX_ITER
    precompute_terms: bool = False
    jobs: int = 1
    output_dir: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        return ExperimentConfigSerializer(self).data

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        """
        :raises ConfigError: on unknown sections, unknown keys or ill-typed values.
        """
        data = _section(data, "config", {"model", "strategy", "integrator", "analysis", "sdc", "bench", "nk_tol",
                                         "nk_max_iter", "precompute_terms", "jobs", "output_dir", "seed"})
        cfg = cls()
        if "model" in data:
            m = _section(data["model"], "model", {"name", "params"})
            cfg.model = ModelConfig(_typed(m.get("name", "lqr"), str, "model.name"),
                                    dict(_typed(m.get("params", {}), dict, "model.params")))
        if "strategy" in data:
            cfg.strategy = _enum(Strategy, data["strategy"], "strategy")
        if "integrator" in data:
            i = _section(data["integrator"], "integrator", {"scheme", "dt", "t_final"})
            cfg.integrator = IntegratorConfig(
                None if i.get("scheme") is None else _enum(Scheme, i["scheme"], "integrator.scheme"),
                _positive_or_none(i.get("dt"), "integrator.dt"),
                _positive_or_none(i.get("t_final"), "integrator.t_final"),
            )
        if "analysis" in data:
            a = _section(data["analysis"], "analysis", {"residual_on", "residual_stride", "corrected"})
            stride = _typed(a.get("residual_stride", 1), int, "analysis.residual_stride")
            if stride < 1:
                raise ConfigError("analysis.residual_stride", "must be at least 1")
            cfg.analysis = AnalysisConfig(_typed(a.get("residual_on", False), bool, "analysis.residual_on"), stride,
                                          _typed(a.get("corrected", False), bool, "analysis.corrected"))
        if data.get("sdc") is not None:
            s = _section(data["sdc"], "sdc", {"indices", "alpha_grid", "closed_loop"})
            indices = s.get("indices", [1, 1, 2])
            if not isinstance(indices, list) or len(indices) != 3 or not all(isinstance(v, int) for v in indices):
                raise ConfigError("sdc.indices", "expected three integers [i1, j1, j2]")
            grid = s.get("alpha_grid", DEFAULT_ALPHA_GRID)
            if not isinstance(grid, list) or len(grid) < 2:
                raise ConfigError("sdc.alpha_grid", "expected a list of at least two numbers")
            cfg.sdc = SdcConfig(tuple(indices), [float(_number(v, "sdc.alpha_grid")) for v in grid],
                                _typed(s.get("closed_loop", False), bool, "sdc.closed_loop"))
        if "bench" in data:
            b = _section(data["bench"], "bench", {"strategies", "mu"})
            strategies = _typed(b.get("strategies", []), list, "bench.strategies")
            if not strategies:
                raise ConfigError("bench.strategies", "at least one strategy is required")
            mus = _typed(b.get("mu", [1.0]), list, "bench.mu")
            if not mus:
                raise ConfigError("bench.mu", "at least one value is required")
            cfg.bench = BenchConfig([_enum(Strategy, v, "bench.strategies") for v in strategies],
                                    [float(_number(v, "bench.mu")) for v in mus])
        if "nk_tol" in data:
            cfg.nk_tol = _positive_or_none(data["nk_tol"], "nk_tol")
        if "nk_max_iter" in data:
            cfg.nk_max_iter = _typed(data["nk_max_iter"], int, "nk_max_iter")
        if "precompute_terms" in data:
            cfg.precompute_terms = _typed(data["precompute_terms"], bool, "precompute_terms")
        if "jobs" in data:
            cfg.jobs = _typed(data["jobs"], int, "jobs")
        if "output_dir" in data:
            cfg.output_dir = _typed(data["output_dir"], str, "output_dir")
        if "seed" in data:
            cfg.seed = _typed(data["seed"], int, "seed")
        return cfg


def _section(value: Any, name: str, allowed: set[str]) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(name, f"expected an object, got {type(value).__name__}")
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(name, f"unknown keys {sorted(unknown)}")
    return value


def _typed(value: Any, kind: type, name: str):
    # bool is an int subclass; keep them apart.
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(name, f"expected {kind.__name__}, got {value!r}")
    return value


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    return value


def _positive_or_none(value: Any, name: str) -> Optional[float]:
    if value is None:
        return None
    value = float(_number(value, name))
    if value <= 0:
        raise ConfigError(name, f"must be positive, got {value}")
    return value


def _enum(kind, value: Any, name: str):
    try:
        return kind(value)
    except ValueError:
        choices = ", ".join(k.value for k in kind)
        raise ConfigError(name, f"unknown value {value!r}, expected one of {choices}") from None


def load_config(path: Path) -> ExperimentConfig:
    """
    :raises ConfigError: with the line number when the file is not valid JSON.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(str(path), f"cannot read: {e.strerror}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}", e.msg) from e
    return ExperimentConfig.from_dict(data)


def resolve_output_dir(cfg: ExperimentConfig, flag: Optional[str] = None) -> Path:
    """ Flag, then the environment, then the config file. """
    out = flag or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError("output_dir", f"cannot create {path}: {e.strerror}") from e
    if not os.access(path, os.W_OK):
        raise ConfigError("output_dir", f"{path} is not writable")
    return path


class ModelConfigSerializer(serpy.Serializer):
    name = serpy.StrField()
    params = serpy.Field()


class IntegratorConfigSerializer(serpy.Serializer):
    scheme = serpy.MethodField()
    dt = serpy.Field()
    t_final = serpy.Field()

    def get_scheme(self, obj):
        return None if obj.scheme is None else obj.scheme.value


class AnalysisConfigSerializer(serpy.Serializer):
    residual_on = serpy.BoolField()
    residual_stride = serpy.IntField()
    corrected = serpy.BoolField()


class SdcConfigSerializer(serpy.Serializer):
    indices = serpy.MethodField()
    alpha_grid = serpy.Field()
    closed_loop = serpy.BoolField()

    def get_indices(self, obj):
        return list(obj.indices)


class BenchConfigSerializer(serpy.Serializer):
    strategies = serpy.MethodField()
    mu = serpy.Field()

    def get_strategies(self, obj):
        return [s.value for s in obj.strategies]


class ExperimentConfigSerializer(serpy.Serializer):
    model = ModelConfigSerializer()
    strategy = serpy.MethodField()
    integrator = IntegratorConfigSerializer()
    analysis = AnalysisConfigSerializer()
    sdc = serpy.MethodField()
    bench = BenchConfigSerializer()
    nk_tol = serpy.FloatField()
    nk_max_iter = serpy.IntField()
    precompute_terms = serpy.BoolField()
    jobs = serpy.IntField()
    output_dir = serpy.StrField()
    seed = serpy.IntField()

    def get_strategy(self, obj):
        return obj.strategy.value

    def get_sdc(self, obj):
        return None if obj.sdc is None else SdcConfigSerializer(obj.sdc).data
