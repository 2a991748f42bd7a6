"""
ContrastGuard - Experiment Harness

Ties every module into the experimental protocol:
- ExperimentConfig built from presets, JSON documents and CLI overrides
- run_experiment: train, attack, detect, recover and write artifacts
- ArtifactWriter: digests every file into manifest.json
"""

from src.evaluation.artifacts import ArtifactWriter, read_manifest, verify_manifest
from src.evaluation.config import (
    AttackSpec,
    AttackSuiteConfig,
    DataConfig,
    ExperimentConfig,
    LayerSweep,
    TrainConfig,
    build_config,
    load_config_document,
)
from src.evaluation.experiment import (
    RECOVERY_COLUMNS,
    ExperimentData,
    ExperimentResult,
    attack_runs,
    find_attack,
    prepare_data,
    run_attack,
    run_detection,
    run_experiment,
    run_recovery,
    train_clean,
)

__all__ = [
    "RECOVERY_COLUMNS",
    "ArtifactWriter",
    "AttackSpec",
    "AttackSuiteConfig",
    "DataConfig",
    "ExperimentConfig",
    "ExperimentData",
    "ExperimentResult",
    "LayerSweep",
    "TrainConfig",
    "attack_runs",
    "build_config",
    "find_attack",
    "load_config_document",
    "prepare_data",
    "read_manifest",
    "run_attack",
    "run_detection",
    "run_experiment",
    "run_recovery",
    "train_clean",
    "verify_manifest",
]
