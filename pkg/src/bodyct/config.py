"""Pipeline configuration shared by all subcommands."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from bodyct.corpus import DEFAULT_HEADERS, DEFAULT_TERMINATORS
from bodyct.dataset import DEFAULT_RATIOS

OUTPUT_ROOT_ENV = "BODYCT_OUTPUT_ROOT"
BUNDLED_PREFIX = "bundled:"


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    corpus: str | None = None
    dictionary: str | None = None
    labels: str | None = None
    reference: str | None = None
    split: str | None = None
    predictions: str | None = None
    volume: str | None = None
    mask: str | None = None
    output_dir: str = "out"


@dataclass
class SplitConfig:
    seed: int = 0
    ratios: tuple[float, float, float] = DEFAULT_RATIOS


@dataclass
class EvalConfig:
    method: str = "delong"
    alpha: float = 0.05
    seed: int = 0
    resamples: int = 2000


@dataclass
class PrepConfig:
    spline_order: int = 3
    kidney_offset: str = "auto"
    clip: dict = field(default_factory=lambda: {
        "lungs_pleura": [-1000.0, 800.0],
        "liver_gallbladder": [-200.0, 500.0],
        "kidneys_ureters": [-200.0, 500.0],
    })


@dataclass
class FindingsConfig:
    headers: tuple[str, ...] = DEFAULT_HEADERS
    terminators: tuple[str, ...] = DEFAULT_TERMINATORS


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    split: SplitConfig = field(default_factory=SplitConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    prep: PrepConfig = field(default_factory=PrepConfig)
    findings: FindingsConfig = field(default_factory=FindingsConfig)
    jobs: int = 1

    def to_dict(self) -> dict:
        def plain(x):
            if isinstance(x, (tuple, list)):
                return [plain(v) for v in x]
            if isinstance(x, dict):
                return {k: plain(v) for k, v in x.items()}
            return x
        return plain(dataclasses.asdict(self))

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        data = data or {}
        sections = {"paths": Paths, "split": SplitConfig, "eval": EvalConfig,
                    "prep": PrepConfig, "findings": FindingsConfig}
        unknown = set(data) - set(sections) - {"jobs"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, kind in sections.items():
            sub = data.get(name) or {}
            names = {f.name for f in dataclasses.fields(kind)}
            bad = set(sub) - names
            if bad:
                raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
            obj = kind(**sub)
            for f in dataclasses.fields(kind):
                if isinstance(getattr(obj, f.name), list) and f.name != "clip":
                    setattr(obj, f.name, tuple(getattr(obj, f.name)))
            kwargs[name] = obj
        cfg = cls(**kwargs, jobs=int(data.get("jobs", 1)))
        cfg.prep.kidney_offset = str(cfg.prep.kidney_offset)
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(data)

    def output_dir(self) -> Path:
        out = Path(self.paths.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


def resolve_input(path: str | None) -> Path | None:
    """Map ``bundled:<name>`` onto the fixtures shipped with the package."""
    if path is None:
        return None
    if path.startswith(BUNDLED_PREFIX):
        name = path[len(BUNDLED_PREFIX):]
        base = resources.files("bodyct.data")
        target = base.joinpath(name) if name == "default_dictionary.yaml" else base.joinpath("fixtures", name)
        return Path(str(target))
    return Path(path)
