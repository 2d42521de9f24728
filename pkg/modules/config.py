# -*- coding: utf-8 -*-
"""
Handles loading and validation of the run configuration.
"""
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from modules.constants import DEGRADATION_KINDS, ENV_PREFIX, LEVELS, SINGLE_KINDS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

CONFIG_SNAPSHOT = "config.yml"

# CLI flag -> dotted RunConfig field. Every flag sets exactly one field.
FLAG_FIELDS: Dict[str, str] = {
    "seed": "system.seed",
    "out_dir": "system.out_dir",
    "device": "system.device",
    "debug": "system.debug",
    "corpus": "paths.corpus",
    "manifest": "paths.manifest",
    "input": "paths.input",
    "output": "paths.output",
    "reference": "paths.reference",
    "checkpoint_dir": "paths.checkpoint_dir",
    "delta_t": "scheduler.delta_t",
    "dam_epochs": "train.dam_epochs",
    "single_epochs": "train.single_epochs",
    "total_epochs": "train.total_epochs",
    "kind": "data.degrade_kind",
    "level": "data.degrade_level",
    "count": "data.count",
}

ENV_FIELDS: Dict[str, str] = {
    f"{ENV_PREFIX}DEVICE": "system.device",
    f"{ENV_PREFIX}OUT_DIR": "system.out_dir",
    f"{ENV_PREFIX}SEED": "system.seed",
}


class SystemConfig(BaseModel):
    """Pydantic model for system settings."""
    seed: int = Field(default=0, ge=0)
    device: str = "auto"
    debug: bool = False
    out_dir: Path = Path("runs/default")
    prefetch: int = Field(default=2, ge=0)

    @field_validator('device')
    @classmethod
    def validate_device(cls, value: str) -> str:
        device = value.strip().lower()
        if device in {'auto', 'cpu', 'cuda', 'mps'} or (device.startswith('cuda:') and device[5:].isdigit()):
            return device
        raise ValueError("system.device must be 'auto', 'cpu', 'mps', 'cuda' or 'cuda:N'")


class PathsConfig(BaseModel):
    """Input and output locations. Relative paths resolve against the working directory."""
    corpus: Optional[Path] = None
    manifest: Optional[Path] = None
    input: Optional[Path] = None
    output: Optional[Path] = None
    reference: Optional[Path] = None
    checkpoint_dir: Optional[Path] = None
    niqe_model: Path = Path("data/niqe_pristine.npz")


class DataConfig(BaseModel):
    """Corpus splitting and synthetic pair generation."""
    split_ratios: List[float] = Field(default_factory=lambda: [0.7, 0.2, 0.1])
    patch_size: int = Field(default=320, gt=0)
    scale: int = Field(default=2, ge=1)
    kinds: List[str] = Field(default_factory=lambda: list(SINGLE_KINDS))
    levels: List[str] = Field(default_factory=lambda: list(LEVELS))
    pairs_per_epoch: int = Field(default=64, ge=1)
    clip_length: int = Field(default=120, ge=1)
    clips_per_epoch: int = Field(default=4, ge=1)
    degrade_clips: bool = True
    degrade_kind: str = "noise"
    degrade_level: str = "L2"
    count: int = Field(default=100, ge=0)

    @field_validator('split_ratios')
    @classmethod
    def validate_ratios(cls, value: List[float]) -> List[float]:
        if len(value) != 3 or any(r < 0 for r in value) or sum(value) <= 0:
            raise ValueError('data.split_ratios must be three non-negative numbers (train, val, test)')
        return value

    @field_validator('kinds')
    @classmethod
    def validate_kinds(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(DEGRADATION_KINDS))
        if not value or unknown:
            raise ValueError(f"data.kinds must be a non-empty subset of {DEGRADATION_KINDS} (unknown: {unknown})")
        return value

    @field_validator('levels')
    @classmethod
    def validate_levels(cls, value: List[str]) -> List[str]:
        if not value or set(value) - set(LEVELS):
            raise ValueError(f"data.levels must be a non-empty subset of {LEVELS}")
        return value

    @model_validator(mode='after')
    def validate_geometry(self):
        if self.degrade_kind not in DEGRADATION_KINDS:
            raise ValueError(f"data.degrade_kind must be one of {DEGRADATION_KINDS}")
        if self.degrade_level not in LEVELS:
            raise ValueError(f"data.degrade_level must be one of {LEVELS}")
        # the degraded patch feeds the encoder, which halves twice
        if self.patch_size % (self.scale * 4):
            raise ValueError(f"data.patch_size must be divisible by 4 * data.scale ({4 * self.scale})")
        return self


class DAMConfig(BaseModel):
    base_channels: int = Field(default=64, gt=0)
    res_blocks: int = Field(default=6, ge=1)
    proj_dim: int = Field(default=256, gt=0)
    queue_size: int = Field(default=1024, ge=0)
    tau: float = Field(default=0.07, gt=0)
    momentum: float = Field(default=0.999, ge=0, le=1)
    crop_size: int = Field(default=160, gt=0)


class DGEMConfig(BaseModel):
    embed_dim: int = Field(default=60, gt=0)
    num_heads: int = Field(default=4, gt=0)
    window_size: int = Field(default=8, gt=0)
    num_blocks: int = Field(default=4, ge=1)
    mlp_ratio: float = Field(default=2.0, gt=0)
    compress_hidden: int = Field(default=96, gt=0)
    shallow_hidden: int = Field(default=3, gt=0)
    recon_channels: int = Field(default=64, gt=0)
    recon_depth: int = Field(default=4, ge=0)
    bicubic_skip: bool = True

    @model_validator(mode='after')
    def validate_heads(self):
        if self.embed_dim % self.num_heads:
            raise ValueError('dgem.num_heads must divide dgem.embed_dim')
        return self


class DRPMConfig(BaseModel):
    model_dim: int = Field(default=128, gt=0)
    context: int = Field(default=16, ge=1)
    num_layers: int = Field(default=2, ge=1)
    num_heads: int = Field(default=4, gt=0)
    ff_dim: int = Field(default=240, gt=0)
    distill: bool = True
    distill_weight: float = Field(default=0.1, ge=0)

    @model_validator(mode='after')
    def validate_heads(self):
        if self.model_dim % self.num_heads:
            raise ValueError('drpm.num_heads must divide drpm.model_dim')
        return self


class CycleConfig(BaseModel):
    """Loss weights, discriminator shape and the degradation model used by the reverse generator."""
    lambda_adv: float = Field(default=1.0, ge=0)
    lambda_cyc: float = Field(default=10.0, ge=0)
    lambda_hf: float = Field(default=0.5, ge=0)
    lambda_cd: float = Field(default=1.0, ge=0)
    disc_channels: int = Field(default=64, gt=0)
    disc_layers: int = Field(default=3, ge=1)
    head_hidden: int = Field(default=64, gt=0)
    head_grid: int = Field(default=8, ge=1)
    head_kernel: int = Field(default=15, ge=1)
    pdm_kind: str = "ses_composite"
    cd_space: Literal["d_vec", "d_map"] = "d_vec"
    highpass_sigma: float = Field(default=1.0, gt=0)

    @field_validator('pdm_kind')
    @classmethod
    def validate_kind(cls, value: str) -> str:
        if value not in DEGRADATION_KINDS:
            raise ValueError(f"cycle.pdm_kind must be one of {DEGRADATION_KINDS}")
        return value

    @field_validator('head_kernel')
    @classmethod
    def validate_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError('cycle.head_kernel must be odd')
        return value


class TrainConfig(BaseModel):
    """Epoch boundaries and optimiser settings of the three training stages."""
    dam_epochs: int = Field(default=20, ge=0)
    single_epochs: int = Field(default=60, ge=1)
    total_epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=4, ge=1)
    lr_dam: float = Field(default=5e-5, gt=0)
    lr_g: float = Field(default=5e-5, gt=0)
    lr_d: float = Field(default=2e-4, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    freeze_dam_stage2: bool = False
    unfreeze_dgem_stage3: bool = False

    @model_validator(mode='after')
    def validate_boundaries(self):
        if self.dam_epochs + self.single_epochs > self.total_epochs:
            raise ValueError('train.dam_epochs + train.single_epochs must not exceed train.total_epochs')
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError('train.betas must lie in [0, 1)')
        if self.dam_epochs == 0:
            logger.warning("Config validation: 'train.dam_epochs' is 0, the degradation encoder will not be pretrained.")
        return self

    @property
    def drpm_epochs(self) -> int:
        return self.total_epochs - self.dam_epochs - self.single_epochs


class SchedulerConfig(BaseModel):
    """Key-frame schedule for video inference."""
    delta_t: int = Field(default=15, ge=1)
    warm_start: bool = True


class AnalysisConfig(BaseModel):
    samples_per_class: int = Field(default=50, ge=1)
    kinds: List[str] = Field(default_factory=lambda: list(SINGLE_KINDS))
    levels: List[str] = Field(default_factory=lambda: list(LEVELS))
    render_scatter: bool = False


class RunConfig(BaseModel):
    """Root Pydantic model for a run."""
    system: SystemConfig = Field(default_factory=SystemConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    dam: DAMConfig = Field(default_factory=DAMConfig)
    dgem: DGEMConfig = Field(default_factory=DGEMConfig)
    drpm: DRPMConfig = Field(default_factory=DRPMConfig)
    cycle: CycleConfig = Field(default_factory=CycleConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)

    @model_validator(mode='after')
    def validate_crops(self):
        if self.dam.crop_size > self.data.patch_size:
            raise ValueError('dam.crop_size must not exceed data.patch_size')
        if self.dam.crop_size % (self.data.scale * 4):
            raise ValueError(f"dam.crop_size must be divisible by 4 * data.scale ({4 * self.data.scale})")
        return self


def _set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    node = data
    *parents, leaf = dotted.split('.')
    for key in parents:
        child = node.get(key)
        if not isinstance(child, dict):
            child = node[key] = {}
        node = child
    node[leaf] = value


def _read_file(path: Path) -> Dict[str, Any]:
    suffix = path.suffix.lower()
    if suffix == '.toml':
        with open(path, 'rb') as f:
            data = tomllib.load(f)
    elif suffix in {'.yml', '.yaml'}:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    else:
        raise ValueError(f"Unsupported configuration format '{suffix}' (expected .toml, .yml or .yaml)")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError('Configuration root must be a mapping')
    return data


def load_config(path: Optional[Path] = None) -> RunConfig:
    """
    Loads, parses, and validates the configuration file.

    Precedence, lowest first: declared defaults, the file, DGVE_* environment variables.
    CLI flags are applied afterwards with apply_overrides.

    Raises:
        FileNotFoundError: If the config file does not exist.
        ValueError: If the file format is unsupported or the root is not a mapping.
        ValidationError: If the configuration does not match the schema.
    """
    config_data: Dict[str, Any] = _read_file(Path(path)) if path is not None else {}

    for variable, dotted in ENV_FIELDS.items():
        value = os.getenv(variable)
        if value:
            logger.debug(f"Applying {variable} to {dotted}")
            _set_dotted(config_data, dotted, value)

    return RunConfig(**config_data)


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Return a re-validated copy of config with {dotted.field: value} applied; None values are skipped."""
    data = config.model_dump()
    for dotted, value in overrides.items():
        if value is not None:
            _set_dotted(data, dotted, value)
    return RunConfig(**data)


def snapshot_config(config: RunConfig, directory: Path) -> Path:
    """Write the effective configuration verbatim as key-value text."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / CONFIG_SNAPSHOT
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(config.model_dump(mode='json'), f, sort_keys=True)
    return path
