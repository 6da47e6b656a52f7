"""Experiment configuration: nested dataclasses with an INI mapping.

Each INI section is one sub-config (``[dataset]``, ``[encoder]``, ...), the
top-level ``seed`` lives in ``[run]``. Dotted overrides (``gambler.reward=1.6``)
address the same keys.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from augcl.augment import KINDS
from augcl.losses import ContrastiveConfig
from augcl.mining import ESTIMATORS, GamblerConfig, KMeansConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "tu"
    name: str = "MUTAG"
    root: str = ""
    degree_cap: int = 64
    classes: int = 2
    graphs_per_class: int = 50
    intra_p: float = 0.7
    inter_p: float = 0.05
    nodes: int = 16

    def __post_init__(self):
        if self.source not in ("tu", "synthetic"):
            raise ConfigError(f"dataset.source must be 'tu' or 'synthetic', got {self.source!r}")


@dataclass(frozen=True)
class EncoderSettings:
    hidden: int = 32
    layers: int = 3
    proj_dim: int = 32
    readout: str = "sum"
    concat_layers: bool = False

    def __post_init__(self):
        if self.readout not in ("sum", "mean"):
            raise ConfigError(f"encoder.readout must be 'sum' or 'mean', got {self.readout!r}")
        if min(self.hidden, self.layers, self.proj_dim) < 1:
            raise ConfigError("encoder widths and depth must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    switch_epoch: int = 10
    batch_size: int = 0  # 0 picks 32 below 500 graphs, else 128
    learning_rate: float = 1e-3
    augmentations: str = ",".join(KINDS)
    aug_ratio: float = 0.2

    def __post_init__(self):
        if not 0 < self.switch_epoch < self.epochs:
            raise ConfigError(f"need 0 < switch_epoch < epochs, got {self.switch_epoch} and {self.epochs}")
        if self.batch_size != 0 and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (or 0 for automatic)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        unknown = set(self.pool_kinds) - set(KINDS)
        if unknown or not self.pool_kinds:
            raise ConfigError(f"bad augmentation list {self.augmentations!r}")

    @property
    def pool_kinds(self) -> list[str]:
        return [k.strip() for k in self.augmentations.split(",") if k.strip()]

    def resolve_batch_size(self, n_graphs: int) -> int:
        if self.batch_size:
            return self.batch_size
        return 32 if n_graphs < 500 else 128


@dataclass(frozen=True)
class MiningSettings:
    enabled: bool = True
    estimator: str = "extra_class"
    policy: str = "reciprocal_mean"
    alpha: float = 0.0  # used by the fixed policy
    delta_coef: float = 0.0
    alpha_scope: str = "global"
    reinfer: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"mining.estimator must be one of {ESTIMATORS}")
        if self.policy not in ("reciprocal_mean", "fixed"):
            raise ConfigError("mining.policy must be 'reciprocal_mean' or 'fixed'")
        if self.policy == "fixed" and not self.alpha > 0:
            raise ConfigError("mining.alpha must be positive under the fixed policy")
        if self.alpha_scope not in ("global", "batch"):
            raise ConfigError("mining.alpha_scope must be 'global' or 'batch'")


@dataclass(frozen=True)
class ProbeConfig:
    folds: int = 10
    repeats: int = 5
    l2: float = 1e-3
    tolerance: float = 1e-6
    max_iterations: int = 2000
    standardize: bool = True

    def __post_init__(self):
        if self.folds < 2 or self.repeats < 1:
            raise ConfigError("probe.folds must be >= 2 and probe.repeats >= 1")
        if self.l2 < 0 or self.tolerance < 0 or self.max_iterations < 1:
            raise ConfigError("bad probe settings")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    gambler: GamblerConfig = field(default_factory=GamblerConfig)
    mining: MiningSettings = field(default_factory=MiningSettings)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    seed: int = 0

    def replace(self, **overrides: Any) -> ExperimentConfig:
        """``cfg.replace(**{"gambler.reward": 1.6, "seed": 3})``."""
        return apply_overrides(self, {k.replace("__", "."): v for k, v in overrides.items()})


SECTIONS = ("dataset", "encoder", "train", "loss", "kmeans", "gambler", "mining", "probe")


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    out: dict[str, Any] = {s: dataclasses.asdict(getattr(cfg, s)) for s in SECTIONS}
    out["run"] = {"seed": cfg.seed}
    return out


def _coerce(value: Any, typ) -> Any:
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if isinstance(value, str):
        text = value.strip()
        if name == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"not a boolean: {value!r}")
        if name == "int":
            return int(text)
        if name == "float":
            return float(text)
        return text
    if name == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if name == "int" and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def from_dict(data: dict[str, Any]) -> ExperimentConfig:
    parts: dict[str, Any] = {}
    for section in SECTIONS:
        cls = ExperimentConfig.__dataclass_fields__[section].default_factory
        raw = dict(data.get(section, {}))
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(types)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
        try:
            parts[section] = cls(**{k: _coerce(v, types[k]) for k, v in raw.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    run = dict(data.get("run", {}))
    unknown = set(run) - {"seed"}
    if unknown or set(data) - set(SECTIONS) - {"run"}:
        raise ConfigError(f"unknown config entries: {sorted(unknown | (set(data) - set(SECTIONS) - {'run'}))}")
    try:
        seed = int(_coerce(run.get("seed", 0), "int"))
    except ValueError:
        raise ConfigError(f"bad seed {run.get('seed')!r}") from None
    return ExperimentConfig(seed=seed, **parts)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    data = to_dict(cfg)
    for key, value in overrides.items():
        if key == "seed":
            key = "run.seed"
        section, _, name = key.partition(".")
        if section not in data or not name or name not in data[section]:
            raise ConfigError(f"unknown config key {key!r}")
        data[section][name] = value
    return from_dict(data)


def parse_override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    return key.strip(), value.strip()


def to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    for section, values in to_dict(cfg).items():
        parser[section] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_ini(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_dict({s: dict(parser[s]) for s in parser.sections()})


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an INI file, or a report JSON whose ``config`` block is echoed back."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return from_dict(doc.get("config", doc))
    return from_ini(text)
