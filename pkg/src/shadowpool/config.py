"""Versioned YAML experiment configuration.

One file describes one reproducible experiment. Unknown keys and bad values
raise :class:`~shadowpool.exceptions.ConfigError` naming the dotted field path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .experiment import FixtureConfig

CONFIG_VERSION = 1

# "offline" drops the pathway penalties and shortens alignment; "custom" keeps the file's values
PRESETS = {"custom": {}, "online": {"ft_epochs": 10}, "offline": {"alpha": 0.0, "beta": 0.0, "ft_epochs": 3}}


@dataclass
class DatasetSection:
    kind: str = "blobs"
    path: str = None
    population_path: str = None
    n_classes: int = 10
    dim: int = 20
    spread: float = 0.5
    model_size: int = 3300
    pool_ratio: float = 2.0
    population: int = 1000
    n_queries: int = 400


@dataclass
class ArchitectureSection:
    n_layers: int = 3
    n_experts: int = 3
    stem_widths: list = field(default_factory=lambda: [64])
    expert_width: int = 64


@dataclass
class TrainingSection:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4


@dataclass
class PoolSection:
    alpha: float = 0.05
    beta: float = 0.01
    n_shared: int = 8
    dq_fraction: float = 0.1
    ft_epochs: int = 10
    ft_lr: float = 0.001
    epochs: int = 74
    n_pools: int = 1
    preset: str = "custom"


@dataclass
class MaskEntry:
    scope: str = "fc"
    p: float = 0.1


@dataclass
class BaselineSection:
    n_shadows: int = 4
    masks: list = field(default_factory=lambda: [MaskEntry("fc", 0.1), MaskEntry("conv", 0.1)])


@dataclass
class AttackSection:
    method: str = "lira"
    mode: str = "online"
    fix_variance: bool = True
    gamma: float = 1.0
    a: float = 0.3


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    architecture: ArchitectureSection = field(default_factory=ArchitectureSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    pool: PoolSection = field(default_factory=PoolSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    attack: AttackSection = field(default_factory=AttackSection)

    def validate(self, base_dir: Path = None) -> "ExperimentConfig":
        d, a, p, atk = self.dataset, self.architecture, self.pool, self.attack
        _check(d.kind in ("blobs", "csv"), "dataset.kind", "must be 'blobs' or 'csv'")
        if d.kind == "csv":
            for name in ("path", "population_path"):
                raw = getattr(d, name)
                _check(raw is not None, f"dataset.{name}", "required when kind is 'csv'")
                _check(_resolve(raw, base_dir).exists(), f"dataset.{name}", f"file {raw!r} not found")
        for path, v in (("dataset.n_classes", d.n_classes), ("dataset.dim", d.dim),
                        ("dataset.model_size", d.model_size), ("dataset.n_queries", d.n_queries),
                        ("architecture.n_layers", a.n_layers), ("architecture.n_experts", a.n_experts),
                        ("architecture.expert_width", a.expert_width),
                        ("training.batch_size", self.training.batch_size),
                        ("pool.n_pools", p.n_pools)):
            _check(isinstance(v, int) and v >= 1, path, "must be a positive integer")
        _check(d.n_classes >= 2, "dataset.n_classes", "must be >= 2")
        _check(0 < d.pool_ratio <= 2.0, "dataset.pool_ratio", "must lie in (0, 2]")
        _check(all(isinstance(w, int) and w >= 1 for w in a.stem_widths), "architecture.stem_widths",
               "must be a list of positive integers")
        _check(0 <= p.n_shared <= a.n_experts ** a.n_layers, "pool.n_shared",
               f"must lie in [0, M**L = {a.n_experts ** a.n_layers}]")
        _check(0 < p.dq_fraction <= 1, "pool.dq_fraction", "must lie in (0, 1]")
        _check(p.preset in PRESETS, "pool.preset", f"must be one of {sorted(PRESETS)}")
        _check(p.alpha >= 0 and p.beta >= 0, "pool.alpha" if p.alpha < 0 else "pool.beta",
               "must be >= 0")
        _check(self.baselines.n_shadows >= 0, "baselines.n_shadows", "must be >= 0")
        for i, m in enumerate(self.baselines.masks):
            _check(m.scope in ("fc", "conv"), f"baselines.masks[{i}].scope", "must be 'fc' or 'conv'")
            _check(0 <= m.p <= 1, f"baselines.masks[{i}].p", "must lie in [0, 1]")
        _check(atk.method in ("lira", "rmia"), "attack.method", "must be 'lira' or 'rmia'")
        _check(atk.mode in ("online", "offline"), "attack.mode", "must be 'online' or 'offline'")
        _check(0 <= atk.a <= 1, "attack.a", "must lie in [0, 1]")
        _check(atk.gamma > 0, "attack.gamma", "must be > 0")
        return self

    def fixture_config(self, seed: int = None) -> FixtureConfig:
        d, a, t = self.dataset, self.architecture, self.training
        p = dataclasses.replace(self.pool, **PRESETS[self.pool.preset])
        return FixtureConfig(
            seed=self.seed if seed is None else seed, n_classes=d.n_classes, dim=d.dim,
            spread=d.spread, model_size=d.model_size, pool_ratio=d.pool_ratio,
            n_queries=d.n_queries, population=d.population, n_layers=a.n_layers,
            n_experts=a.n_experts, stem_widths=tuple(a.stem_widths), expert_width=a.expert_width,
            epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, momentum=t.momentum,
            weight_decay=t.weight_decay, alpha=p.alpha, beta=p.beta, n_shared=p.n_shared,
            dq_fraction=p.dq_fraction, ft_epochs=p.ft_epochs, ft_lr=p.ft_lr,
            n_shadows=self.baselines.n_shadows, pool_epochs=p.epochs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def section(self, name: str) -> dict:
        return dataclasses.asdict(getattr(self, name))

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")


def _check(ok, path, msg):
    if not ok:
        raise ConfigError(f"{path}: {msg}", field=path)


def _resolve(raw, base_dir):
    p = Path(raw)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


_FLOAT_OK = (int, float)


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping", field=path or "config")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        fpath = f"{path}.{key}" if path else str(key)
        if key not in known:
            raise ConfigError(f"{fpath}: unknown field", field=fpath)
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, fpath)
        elif key == "masks":
            if not isinstance(value, list):
                raise ConfigError(f"{fpath}: expected a list", field=fpath)
            kwargs[key] = [_build(MaskEntry, v, f"{fpath}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[key] = _coerce(value, default, fpath)
    return cls(**kwargs)


def _coerce(value, default, path):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false", field=path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer", field=path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, _FLOAT_OK):
            raise ConfigError(f"{path}: expected a number", field=path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string", field=path)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list", field=path)
        return value
    return value


def config_from_dict(data: dict, base_dir=None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a mapping at the top level", field="config")
    if "version" not in data:
        raise ConfigError("version: missing (expected 1)", field="version")
    if data["version"] != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {data['version']!r} "
                          f"(expected {CONFIG_VERSION})", field="version")
    return _build(ExperimentConfig, data, "").validate(base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}", field="config") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark else ""
        raise ConfigError(f"config: invalid YAML{where}", field="config") from None
    cfg = config_from_dict(data, base_dir=path.parent)
    d = cfg.dataset
    if d.kind == "csv":
        d.path = str(_resolve(d.path, path.parent).resolve())
        d.population_path = str(_resolve(d.population_path, path.parent).resolve())
    return cfg


def default_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()
