"""Run configuration documents.

A ``RunConfig`` is a JSON object with one section per module. Every
field has a default and unknown keys are rejected at any depth, so a
typo fails before any compute starts.

Example::

    {"seed": 1, "train": {"epochs": 5}, "model": {"num_layers": 1}}
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fragsim import OracleConfig
from .graphprep import EncodingConfig
from .model import ModelConfig
from .spectra import BinningConfig, MetadataScheme
from .train import TrainConfig

__all__ = [
    "ConfigError",
    "DataConfig",
    "GenerationConfig",
    "ArchitectureConfig",
    "EvalConfig",
    "RunConfig",
    "load_run_config",
]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class DataConfig:
    """File names, resolved against the output directory unless absolute."""

    molecules: str = "molecules.tsv"
    spectra: str = "spectra.msp"
    split: str = "split.csv"
    checkpoint: str = "model.ckpt"
    heldout_scaffolds: str = ""
    cache_dir: str = "cache"


@dataclass
class GenerationConfig:
    n_molecules: int = 500
    max_heavy_atoms: int = 28
    ce_grid: list = field(default_factory=lambda: [10.0, 50.0, 100.0, 150.0, 200.0])
    adducts: list = field(default_factory=lambda: ["[M+H]+"])
    split_fractions: list = field(default_factory=lambda: [0.7, 0.1, 0.2])


@dataclass
class ArchitectureConfig:
    """Model shape; bins and metadata width follow from other sections."""

    num_layers: int = 2
    hidden_dim: int = 64
    attn_dim_per_head: int = 16
    num_heads: int = 4
    ffn_dim: int = 128
    mlp_hidden_dims: list = field(default_factory=lambda: [512, 512])
    mask_precursor: bool = False
    output_bias_init: float = 1.0
    head_norm: bool = True


@dataclass
class EvalConfig:
    split: str = "test"
    ce_tolerance: float = 0.0
    n_heldout: int = 0
    ce_grid: list = field(default_factory=lambda: [10.0, 50.0, 100.0, 150.0, 200.0])
    density_mz_width: float = 25.0


_SECTIONS = {
    "data": DataConfig,
    "generation": GenerationConfig,
    "encoding": EncodingConfig,
    "model": ArchitectureConfig,
    "train": TrainConfig,
    "oracle": OracleConfig,
    "binning": BinningConfig,
    "metadata": MetadataScheme,
    "eval": EvalConfig,
}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected an object, got {type(values).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = dict(values)
    for f in dataclasses.fields(cls):
        if f.name in kwargs and isinstance(f.default, tuple):
            kwargs[f.name] = tuple(kwargs[f.name])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    return obj


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "."
    threads: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    model: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    binning: BinningConfig = field(default_factory=BinningConfig)
    metadata: MetadataScheme = field(default_factory=MetadataScheme)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config document must be a JSON object")
        top = {"seed", "out_dir", "threads"} | set(_SECTIONS)
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
        kwargs = {k: d[k] for k in ("seed", "out_dir", "threads") if k in d}
        for name, section_cls in _SECTIONS.items():
            if name in d:
                kwargs[name] = _build(section_cls, d[name], name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return _plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        fr = self.generation.split_fractions
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("generation.split_fractions must be three nonnegative numbers summing to 1")
        if not self.generation.ce_grid or not self.eval.ce_grid:
            raise ConfigError("collision energy grids must be nonempty")
        for a in self.generation.adducts:
            if a not in self.metadata.adducts:
                raise ConfigError(f"generation adduct {a!r} is not in metadata.adducts")
        if self.oracle.collision_type not in self.metadata.collision_types:
            raise ConfigError(f"oracle collision type {self.oracle.collision_type!r} is not in metadata.collision_types")

    def model_config(self) -> ModelConfig:
        arch = self.model
        return ModelConfig(
            num_layers=arch.num_layers,
            hidden_dim=arch.hidden_dim,
            attn_dim_per_head=arch.attn_dim_per_head,
            num_heads=arch.num_heads,
            ffn_dim=arch.ffn_dim,
            mlp_hidden_dims=list(arch.mlp_hidden_dims),
            output_bins=self.binning.n_bins,
            dropout_p=self.train.dropout_p,
            metadata_dim=self.metadata.dim,
            bin_width=self.binning.bin_width,
            mz_min=self.binning.mz_min,
            mask_precursor=arch.mask_precursor,
            output_bias_init=arch.output_bias_init,
            head_norm=arch.head_norm,
            encoding=self.encoding,
        )

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.out_dir) / p


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (or defaults when ``path`` is None) and apply overrides.

    ``overrides`` maps dotted keys such as ``"train.epochs"`` to values.
    """
    doc: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    for key, value in (overrides or {}).items():
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return RunConfig.from_dict(doc)
