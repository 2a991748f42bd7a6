"""
Experiment configuration.

ExperimentConfig nests every stage's config. It is built from a named preset
(src/templates/*.yaml) deep-merged with an optional JSON document and CLI
overrides, then validated by pydantic.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, ValidationError, model_validator

from src.attacks.fsa import FsaConfig
from src.attacks.gda import GdaConfig
from src.attacks.pbs import PbsConfig
from src.attacks.report import AttackKind
from src.config import settings
from src.core.errors import ExperimentError
from src.models.network import ModelConfig
from src.services.augmentation import AugmentationConfig
from src.services.contrastive import LossConfig
from src.services.detector import DetectConfig
from src.services.recovery import RecoveryConfig
from src.services.training import PHASE_A_OPTIMIZER, PHASE_B_OPTIMIZER, OptimizerConfig
from src.templates import get_preset


class DataConfig(BaseModel):
    """Where images come from and how the test split is carved into pools."""

    source: Literal["auto", "cifar10", "blobs"] = "auto"
    data_dir: Path | None = None
    train_size: int = Field(default=2000, ge=2)
    labeled_size: int | None = Field(default=None, ge=1)
    blob_test_size: int = Field(default=3000, ge=10)
    detect_pool: int = Field(default=1024, ge=2)
    eval_size: int = Field(default=1000, ge=1)
    attack_size: int = Field(default=128, ge=1)
    recovery_split: Literal["test", "train"] = "test"


class TrainConfig(BaseModel):
    phase_a_epochs: int = Field(default=50, ge=0)
    phase_b_epochs: int = Field(default=20, ge=0)
    batch: int = Field(default=64, ge=2)
    aug: AugmentationConfig = Field(default_factory=AugmentationConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    phase_a_optimizer: OptimizerConfig = Field(default_factory=lambda: PHASE_A_OPTIMIZER.model_copy())
    phase_b_optimizer: OptimizerConfig = Field(default_factory=lambda: PHASE_B_OPTIMIZER.model_copy())


class AttackSpec(BaseModel):
    """One attack instance of the suite."""

    name: str
    kind: AttackKind
    layer: str | None = None
    n_bits: int = Field(default=64, ge=0)
    msb_only: bool = True
    target_class: int | None = Field(default=None, ge=0)


def _default_runs() -> list[AttackSpec]:
    return [
        AttackSpec(name="pbs", kind="pbs"),
        AttackSpec(name="fsa_l2", kind="fsa_l2"),
        AttackSpec(name="fsa_l0", kind="fsa_l0"),
        AttackSpec(name="gda", kind="gda"),
        AttackSpec(name="random_flip", kind="random_flip", layer="encoder.conv1"),
    ]


class LayerSweep(BaseModel):
    """Attack kinds repeated on each listed layer; the harness orders layers by size."""

    kinds: list[AttackKind] = Field(default_factory=lambda: ["pbs", "fsa_l2", "gda"])
    layers: list[str] = Field(default_factory=list)


def sweep_run_name(kind: str, layer: str) -> str:
    return f"{kind}_{layer.replace('.', '_')}"


class AttackSuiteConfig(BaseModel):
    pbs: PbsConfig = Field(default_factory=PbsConfig)
    fsa: FsaConfig = Field(default_factory=FsaConfig)
    gda: GdaConfig = Field(default_factory=GdaConfig)
    runs: list[AttackSpec] = Field(default_factory=_default_runs)
    sweep: LayerSweep = Field(default_factory=LayerSweep)

    @model_validator(mode="after")
    def _unique_names(self) -> AttackSuiteConfig:
        names = [r.name for r in self.runs]
        names += [sweep_run_name(k, layer) for layer in self.sweep.layers for k in self.sweep.kinds]
        if len(names) != len(set(names)):
            raise ValueError(f"attack run names must be unique: {names}")
        return self


class ExperimentConfig(BaseModel):
    """Everything run_experiment needs; one root seed drives all stages."""

    seed: int = 0
    preset: str = "desk"
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    attacks: AttackSuiteConfig = Field(default_factory=AttackSuiteConfig)
    detect: DetectConfig = Field(default_factory=DetectConfig)
    recover: RecoveryConfig = Field(default_factory=RecoveryConfig)
    output_dir: Path = Field(default_factory=lambda: settings.output_dir)
    workers: int = Field(default_factory=lambda: settings.workers, ge=1)


class ConfigurationError(ExperimentError):
    """The experiment config document is unreadable or invalid."""


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """Recursively overlay `override` on `base`; lists and scalars replace."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_config(
    preset: str = "desk",
    document: Mapping[str, Any] | None = None,
    **overrides: Any,
) -> ExperimentConfig:
    """
    Preset, then JSON document, then keyword overrides (None values skipped).

    Raises:
        ConfigurationError: the merged document does not validate
    """
    merged = deep_merge(get_preset(preset), document or {})
    merged = deep_merge(merged, {k: v for k, v in overrides.items() if v is not None})
    merged.setdefault("preset", preset)
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigurationError(f"invalid experiment config: {e}") from e


def load_config_document(path: str | Path) -> dict[str, Any]:
    """Read a JSON config document."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return document
