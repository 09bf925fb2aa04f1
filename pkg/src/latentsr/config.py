"""Run configuration: JSON documents with strict (unknown-key) validation.

Every field defaults to the protocol values used throughout the package, so
an empty document is a valid config. Unknown keys are rejected rather than
ignored: silently-defaulted typos have burned enough experiments.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidParameterError


@dataclass
class DataSection:
    hr_size: int = 64
    train_per_group: int = 2000   # generator-training images per (assay, class)
    aux_per_group: int = 400      # embedder / metrics split
    test_per_group: int = 250     # evaluation split


@dataclass
class GeneratorSection:
    d: int = 64
    channels: list = field(default_factory=lambda: [64, 48, 32, 24, 16])
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    betas: list = field(default_factory=lambda: [0.0, 0.99])
    r1_gamma: float = 1.0
    r1_interval: int = 16
    pl_weight: float = 2.0
    pl_interval: int = 8
    pl_decay: float = 0.01
    deterministic: bool = False
    select_interval: int = 2  # epochs between FID-scored snapshots; 0 = off


@dataclass
class FlowSection:
    n_blocks: int = 5
    hidden: int = 256
    epochs: int = 12
    batch_size: int = 256
    lr: float = 1e-3
    holdout_frac: float = 0.1
    n_styles: int = 20000
    deterministic: bool = False


@dataclass
class RlsSection:
    lambda_w: float = 5e-5
    lambda_c: float = 0.01
    iterations: int = 200
    learning_rate: float = 0.5
    init: str = "mean_style"
    init_n: int = 10000
    variant: str = "full"
    batch_size: int = 32


@dataclass
class MetricsSection:
    n_eval: int = 100
    embed_epochs: int = 8


@dataclass
class AssaySection:
    n_per_condition: int = 100
    translocation_factor: int = 16
    golgi_factor: int = 8
    classifier_train_per_condition: int = 300
    classifier_test_per_condition: int = 100
    classifier_epochs: int = 10
    effect_floor: float = 0.5
    uncertainty_samples: int = 5


@dataclass
class RunConfig:
    run_seed: int = 0
    output_dir: str = "runs"
    data: DataSection = field(default_factory=DataSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    flow: FlowSection = field(default_factory=FlowSection)
    rls: RlsSection = field(default_factory=RlsSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    assay: AssaySection = field(default_factory=AssaySection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    f.name: f.default_factory
    for f in dataclasses.fields(RunConfig)
    if f.default_factory is not dataclasses.MISSING
    and dataclasses.is_dataclass(f.default_factory())
}


def _parse_section(cls, data: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InvalidParameterError(
            f"unknown config key(s) {sorted(unknown)} in section '{path}'")
    return cls(**data)


def parse_config(document: dict) -> RunConfig:
    """Strict dict -> RunConfig; raises on any unknown key."""
    if not isinstance(document, dict):
        raise InvalidParameterError("config document must be a JSON object")
    top_names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(document) - top_names
    if unknown:
        raise InvalidParameterError(f"unknown config key(s) {sorted(unknown)}")
    kwargs = {}
    for key, value in document.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidParameterError(f"section '{key}' must be an object")
            kwargs[key] = _parse_section(type(_SECTIONS[key]()), value, key)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))


def save_config(config: RunConfig, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
    return path
