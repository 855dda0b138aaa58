"""Pipeline configuration: one TOML file, overridable from the command line."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import tomli

from .corpus import CorpusConfig
from .evaluation import METRICS
from .pipeline import BM25Config, ExtractConfig, ModelConfig
from .ranker import TrainConfig
from .sampler import SamplerConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    corpus: Optional[str] = None
    aug_corpus: Optional[str] = None
    queries: Optional[str] = None
    aug_queries: Optional[str] = None
    qrels: Optional[str] = None
    stopwords: Optional[str] = None
    stage1_corpus: Optional[str] = None
    stage1_pairs: Optional[str] = None
    model_in: Optional[str] = None
    model_out: Optional[str] = None
    work_dir: str = "runs"


@dataclass(frozen=True)
class EvalConfig:
    metrics: tuple[str, ...] = METRICS
    k: int = 10


@dataclass(frozen=True)
class HSDConfig:
    B: int = 5000
    seed: int = 0


@dataclass(frozen=True)
class SweepConfig:
    U: tuple[int, ...] = (1, 5, 10, 20, 50)
    V: tuple[int, ...] = (3, 5, 10, 20)
    U_pos_method: str = "pseudo_label"
    V_pos_method: str = "textrank"


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = Paths()
    corpus: CorpusConfig = CorpusConfig()
    sampler: SamplerConfig = SamplerConfig()
    extract: ExtractConfig = ExtractConfig()
    model: ModelConfig = ModelConfig()
    stage1: TrainConfig = TrainConfig(epochs=5)
    stage2: TrainConfig = TrainConfig(epochs=10)
    bm25: BM25Config = BM25Config()
    eval: EvalConfig = EvalConfig()
    hsd: HSDConfig = HSDConfig()
    sweep: SweepConfig = SweepConfig()
    synth: SynthConfig = SynthConfig()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def seeds(self) -> dict[str, int]:
        return {
            "sampler": self.sampler.seed,
            "model": self.model.seed,
            "stage1": self.stage1.seed,
            "stage2": self.stage2.seed,
            "hsd": self.hsd.seed,
            "synth": self.synth.seed,
            "embed": self.extract.embed_seed,
        }


_SECTIONS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _build(base, values: dict, section: str):
    cls = type(base)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    merged = {f: getattr(base, f) for f in known}
    for key, value in values.items():
        if isinstance(merged[key], tuple) and isinstance(value, list):
            value = tuple(value)
        merged[key] = value
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def from_dict(data: dict, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Merge nested ``{section: {key: value}}`` over ``base``."""
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    sections = {}
    for name in _SECTIONS:
        values = data.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        sections[name] = _build(getattr(base, name), values, name)
    return PipelineConfig(**sections)


def load_config(path: Optional[str | Path]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    config = from_dict(data)
    return _resolve_paths(config, Path(path).parent)


def _resolve_paths(config: PipelineConfig, root: Path) -> PipelineConfig:
    """Relative paths in a config file are taken relative to that file."""
    updates = {}
    for f in dataclasses.fields(Paths):
        value = getattr(config.paths, f.name)
        if value is not None and not Path(value).is_absolute():
            updates[f.name] = str(root / value)
    return dataclasses.replace(config, paths=dataclasses.replace(config.paths, **updates))


def override(config: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    """Apply ``{"section.key": value}`` overrides; ``None`` values are ignored."""
    nested: dict[str, dict] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        nested.setdefault(section, {})[key] = value
    return from_dict(nested, config) if nested else config


def to_toml(config: PipelineConfig) -> str:
    """Render a config as TOML (flat sections of scalars and arrays)."""
    lines = []
    for section, values in config.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot render {value!r} as TOML")


def require(config: PipelineConfig, *names: str) -> None:
    """Fail with a config error unless every named path is set and exists."""
    for name in names:
        value = getattr(config.paths, name)
        if value is None:
            raise ConfigError(f"paths.{name} is required (set it in the config or via --{name.replace('_', '-')})")
        if not Path(value).exists():
            raise FileNotFoundError(f"paths.{name}: {value} does not exist")
