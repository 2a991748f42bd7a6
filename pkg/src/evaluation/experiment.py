"""
Experiment Harness - Train, Attack, Detect, Recover

Runs the whole protocol from one ExperimentConfig:
- Disjoint data pools (training subset, detection, recovery, attack, evaluation)
- Clean Phase (a) + Phase (b) training and the reference profile
- Every configured attack on its own clone of the clean model, in parallel
- Detection loss samples and verdicts for the clean and every attacked model
- Unlabeled and labeled recovery of every attacked model
- Artifacts plus a manifest of SHA-256 digests; wall-clock values in timing.json

Each stage seed is derived from the root seed by name, so nested seed
fields of the config are overwritten.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np

from src.attacks.fsa import fsa_attack
from src.attacks.gda import gda_attack
from src.attacks.pbs import pbs_attack
from src.attacks.random_flip import random_bit_flip
from src.attacks.report import AttackReport
from src.config import settings
from src.core.errors import ContrastGuardError, DatasetError, ExperimentError
from src.core.seeding import derive_seed, substream
from src.evaluation.artifacts import ArtifactWriter
from src.evaluation.config import AttackSpec, ExperimentConfig, sweep_run_name
from src.models.checkpoint import save_checkpoint
from src.models.network import Model, build_model, evaluate_accuracy
from src.models.quantization import quantize_layer, quantize_model
from src.observability.logger import LogContext, get_logger
from src.observability.metrics import metrics_collector
from src.observability.tracer import trace_operation
from src.services.datasets import Dataset, load_cifar10, make_synthetic_blobs
from src.services.detector import DetectionVerdict, ReferenceProfile, build_reference, detect, loss_samples
from src.services.recovery import RecoveryReport, recover
from src.services.training import TrainLog, mean_cross_entropy, train_phase_a, train_phase_b

logger = get_logger(__name__, component="experiment")

RecoveryMode = Literal["unlabeled", "labeled"]
RECOVERY_MODES: tuple[RecoveryMode, ...] = ("unlabeled", "labeled")
RECOVERY_COLUMNS = (
    "attack",
    "param_count",
    "acc_after_attack",
    "unlabeled_acc",
    "unlabeled_epochs",
    "labeled_acc",
    "labeled_epochs",
)
DEFAULT_FLIP_LAYER = "encoder.conv1"


# =============================================================================
# Seeds and hashing
# =============================================================================


def with_stage_seeds(cfg: ExperimentConfig) -> ExperimentConfig:
    """Copy of cfg whose stage seeds are derived from cfg.seed."""
    seed = cfg.seed
    train = cfg.train.model_copy(
        update={"aug": cfg.train.aug.model_copy(update={"seed": derive_seed(seed, "augment")})}
    )
    return cfg.model_copy(
        update={
            "model": cfg.model.model_copy(update={"seed": derive_seed(seed, "init")}),
            "train": train,
            "detect": cfg.detect.model_copy(
                update={"seed": derive_seed(seed, "reference"), "workers": cfg.workers}
            ),
            "recover": cfg.recover.model_copy(update={"seed": derive_seed(seed, "recover")}),
        }
    )


def experiment_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the config, leaving out where outputs go and how many workers run."""
    payload = cfg.model_dump(
        mode="json", exclude={"output_dir": True, "workers": True, "detect": {"workers"}}
    )
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def detection_seed(cfg: ExperimentConfig) -> int:
    """Seed shared by every model's detection samples, so samples are paired."""
    return derive_seed(cfg.seed, "detect")


def detection_aug(profile: ReferenceProfile, cfg: ExperimentConfig) -> ReferenceProfile:
    """Profile whose augmentation stream is separate from training's."""
    aug = profile.aug_cfg.model_copy(update={"seed": derive_seed(cfg.seed, "detect-augment")})
    return profile.model_copy(update={"aug_cfg": aug})


# =============================================================================
# Data
# =============================================================================


@dataclass
class ExperimentData:
    """Training subset plus disjoint pools carved from the held-out split."""

    source: str
    train: Dataset
    labeled: Dataset
    detect_pool: Dataset
    recovery: Dataset
    attack: Dataset
    evaluation: Dataset

    def pool_sizes(self) -> dict[str, int]:
        return {
            "train": len(self.train),
            "labeled": len(self.labeled),
            "detect_pool": len(self.detect_pool),
            "recovery": len(self.recovery),
            "attack": len(self.attack),
            "evaluation": len(self.evaluation),
        }


def resolve_source(cfg: ExperimentConfig) -> tuple[str, Path | None]:
    data_dir = cfg.data.data_dir or settings.data_dir
    source = cfg.data.source
    if source == "auto":
        source = "cifar10" if data_dir is not None else "blobs"
    if source == "cifar10" and data_dir is None:
        raise DatasetError("source cifar10 needs a data directory (--data-dir)")
    return source, data_dir


def prepare_data(cfg: ExperimentConfig) -> ExperimentData:
    """
    Load or generate both splits and carve the pools.

    The test split is permuted once, then cut into detection, recovery,
    attack and evaluation pools in that order.

    Raises:
        DatasetError: the held-out split is too small for the requested pools
    """
    source, data_dir = resolve_source(cfg)
    if source == "cifar10":
        train_full = load_cifar10(data_dir, "train")
        test = load_cifar10(data_dir, "test")
    else:
        train_full = make_synthetic_blobs(cfg.data.train_size, seed=derive_seed(cfg.seed, "data", 0))
        test = make_synthetic_blobs(
            cfg.data.blob_test_size, seed=derive_seed(cfg.seed, "data", 1), split="test"
        )

    train = train_full
    if len(train_full) > cfg.data.train_size:
        idx = substream(cfg.seed, "data", 2).choice(len(train_full), cfg.data.train_size, replace=False)
        train = train_full.subset(np.sort(idx))
    labeled = train
    if cfg.data.labeled_size is not None and cfg.data.labeled_size < len(train):
        labeled = train.subset(np.arange(cfg.data.labeled_size))

    budget = cfg.recover.data_budget
    from_test = budget if cfg.data.recovery_split == "test" else 0
    sizes = [cfg.data.detect_pool, from_test, cfg.data.attack_size, cfg.data.eval_size]
    if sum(sizes) > len(test):
        raise DatasetError(
            f"held-out split has {len(test)} images; pools need {sum(sizes)} "
            f"(detect {sizes[0]}, recovery {sizes[1]}, attack {sizes[2]}, eval {sizes[3]})"
        )
    perm = substream(cfg.seed, "data", 3).permutation(len(test))
    bounds = np.cumsum([0, *sizes])
    pools = [test.subset(np.sort(perm[lo:hi])) for lo, hi in zip(bounds[:-1], bounds[1:], strict=True)]
    recovery = pools[1] if from_test else train.subset(np.arange(min(budget, len(train))))

    data = ExperimentData(
        source=source,
        train=train,
        labeled=labeled,
        detect_pool=pools[0].without_labels(),
        recovery=recovery,
        attack=pools[2],
        evaluation=pools[3],
    )
    logger.info("Data prepared", source=source, **data.pool_sizes())
    return data


# =============================================================================
# Stages
# =============================================================================


@dataclass
class CleanModel:
    """The trained clean model with its logs, reference and baselines."""

    model: Model
    phase_a_log: TrainLog
    phase_b_log: TrainLog
    profile: ReferenceProfile
    accuracy: float
    cross_entropy: float


def train_clean(cfg: ExperimentConfig, data: ExperimentData) -> CleanModel:
    """Phase (a), Phase (b), reference profile, clean accuracy and clean cross-entropy."""
    cfg = with_stage_seeds(cfg)
    model = build_model(cfg.model)
    log_a = train_phase_a(
        model,
        data.train,
        cfg.train.phase_a_epochs,
        cfg.train.batch,
        cfg.train.aug,
        cfg.train.loss,
        cfg.train.phase_a_optimizer,
    )
    log_b = train_phase_b(
        model,
        data.labeled,
        cfg.train.phase_b_epochs,
        cfg.train.batch,
        cfg.train.phase_b_optimizer,
        seed=derive_seed(cfg.seed, "classifier"),
    )
    profile = build_reference(model, data.detect_pool, cfg.detect, cfg.train.aug, cfg.train.loss)
    profile = detection_aug(profile, cfg)
    accuracy = evaluate_accuracy(model, data.evaluation.as_float(), data.evaluation.label_array())
    recovery = data.recovery
    ce = mean_cross_entropy(model, recovery.as_float(), recovery.label_array())
    logger.info("Clean model ready", accuracy=round(accuracy, 4), cross_entropy=round(ce, 5))
    return CleanModel(model, log_a, log_b, profile, accuracy, ce)


def attack_runs(cfg: ExperimentConfig) -> list[AttackSpec]:
    """
    Configured runs, then the layer sweep with layers ordered by parameter
    count (name breaks ties).

    Raises:
        ExperimentError: a sweep layer is not a weight layer of the model
    """
    runs = list(cfg.attacks.runs)
    sweep = cfg.attacks.sweep
    if not sweep.layers:
        return runs
    counts = build_model(cfg.model).layer_param_counts()
    unknown = [layer for layer in sweep.layers if layer not in counts]
    if unknown:
        raise ExperimentError(f"sweep layers {unknown} are not weight layers; known: {', '.join(counts)}")
    for layer in sorted(sweep.layers, key=lambda name: (counts[name], name)):
        runs += [AttackSpec(name=sweep_run_name(kind, layer), kind=kind, layer=layer) for kind in sweep.kinds]
    return runs


def find_attack(cfg: ExperimentConfig, name: str) -> tuple[int, AttackSpec]:
    runs = attack_runs(cfg)
    for index, spec in enumerate(runs):
        if spec.name == name:
            return index, spec
    known = ", ".join(r.name for r in runs)
    raise ExperimentError(f"unknown attack {name!r}; configured runs: {known}")


def run_attack(
    cfg: ExperimentConfig,
    clean: Model,
    spec: AttackSpec,
    index: int,
    data: ExperimentData,
) -> tuple[Model, AttackReport]:
    """Attack a clone of the clean model; the clean model is left untouched."""
    model = clean.clone()
    seed = derive_seed(cfg.seed, "attack", index)
    attack_images, attack_labels = data.attack.as_float(), data.attack.label_array()
    eval_images, eval_labels = data.evaluation.as_float(), data.evaluation.label_array()
    suite = cfg.attacks

    with LogContext(attack=spec.name):
        if spec.kind == "pbs":
            pbs_cfg = suite.pbs.model_copy(update={"seed": seed})
            if spec.layer is not None:
                pbs_cfg = pbs_cfg.model_copy(update={"layers": [spec.layer]})
            quantize_model(model, pbs_cfg.layers)
            report = pbs_attack(model, attack_images, attack_labels, pbs_cfg, eval_images, eval_labels)
        elif spec.kind in ("fsa_l0", "fsa_l2"):
            fsa_cfg = suite.fsa.model_copy(
                update={
                    "norm": "l0" if spec.kind == "fsa_l0" else "l2",
                    "seed": seed,
                    "layer": spec.layer or suite.fsa.layer,
                }
            )
            report = fsa_attack(model, attack_images, attack_labels, fsa_cfg, eval_images, eval_labels)
        elif spec.kind == "gda":
            update: dict[str, Any] = {"seed": seed, "layer": spec.layer or suite.gda.layer}
            if spec.target_class is not None:
                update["target_class"] = spec.target_class
            gda_cfg = suite.gda.model_copy(update=update)
            report = gda_attack(model, attack_images, gda_cfg, eval_images, eval_labels)
        else:
            layer = spec.layer or DEFAULT_FLIP_LAYER
            quantize_layer(model, layer)
            report = random_bit_flip(
                model, layer, spec.n_bits, seed, spec.msb_only, eval_images, eval_labels
            )
    model.phase = f"attacked_{spec.name}"
    return model, report


@dataclass
class DetectionOutcome:
    samples: np.ndarray
    verdict: DetectionVerdict

    @property
    def flag_rate(self) -> float:
        """Fraction of single-batch samples beyond the threshold."""
        return float(np.mean(np.abs(self.samples - self.verdict.l_c) > self.verdict.delta))

    def to_dict(self) -> dict[str, Any]:
        return {**self.verdict.model_dump(mode="json"), "flag_rate": self.flag_rate}


def run_detection(
    cfg: ExperimentConfig,
    model: Model,
    profile: ReferenceProfile,
    pool: Dataset,
) -> DetectionOutcome:
    """cfg.detect.n_samples single-batch losses plus the verdict."""
    seed = detection_seed(cfg)
    delta = cfg.detect.delta if cfg.detect.delta is not None else profile.default_delta()
    samples = loss_samples(
        model,
        pool,
        cfg.detect.n_samples,
        profile.batch,
        profile.aug_cfg,
        profile.loss_cfg,
        seed,
        cfg.workers,
    )
    verdict = detect(profile, model, pool, delta, cfg.detect.n_batches, seed, cfg.workers)
    return DetectionOutcome(samples, verdict)


def run_recovery(
    cfg: ExperimentConfig,
    attacked: Model,
    profile: ReferenceProfile,
    reference_ce: float | None,
    data: ExperimentData,
    mode: RecoveryMode,
    index: int = 0,
    attacked_layers: Sequence[str] | None = None,
) -> tuple[Model, RecoveryReport]:
    """Recover a clone of the attacked model with the clean baselines as references."""
    seeded = with_stage_seeds(cfg)
    delta = cfg.detect.delta if cfg.detect.delta is not None else profile.default_delta()
    recover_cfg = seeded.recover.model_copy(
        update={
            "labeled": mode == "labeled",
            "reference_contrastive": profile.l_c,
            "reference_ce": reference_ce,
            "reference_tolerance": delta,
            "aug_cfg": seeded.train.aug.model_copy(
                update={"seed": derive_seed(cfg.seed, "recover-augment", index)}
            ),
            "loss_cfg": seeded.train.loss,
            "seed": derive_seed(cfg.seed, "recover", index),
        }
    )
    model = attacked.clone()
    recovery_data = data.recovery if mode == "labeled" else data.recovery.without_labels()
    with LogContext(recovery=mode):
        report = recover(model, recovery_data, recover_cfg, data.evaluation, attacked_layers)
    return model, report


# =============================================================================
# Results
# =============================================================================


@dataclass
class ExperimentResult:
    """In-memory summary of a finished run; the files on disk are the contract."""

    output_dir: Path
    config_hash: str
    clean_accuracy: float
    profile: ReferenceProfile
    attacks: dict[str, AttackReport] = field(default_factory=dict)
    detections: dict[str, DetectionOutcome] = field(default_factory=dict)
    recoveries: dict[tuple[str, RecoveryMode], RecoveryReport] = field(default_factory=dict)

    def recovery_rows(self) -> list[tuple[Any, ...]]:
        rows = []
        for name, report in self.attacks.items():
            unlabeled = self.recoveries.get((name, "unlabeled"))
            labeled = self.recoveries.get((name, "labeled"))
            rows.append(
                (
                    name,
                    report.param_count,
                    report.acc_after,
                    unlabeled.acc_after if unlabeled else None,
                    unlabeled.epochs_used if unlabeled else None,
                    labeled.acc_after if labeled else None,
                    labeled.epochs_used if labeled else None,
                )
            )
        return rows

    def to_dict(self) -> dict[str, Any]:
        return {
            "output_dir": str(self.output_dir),
            "config_hash": self.config_hash,
            "clean_accuracy": self.clean_accuracy,
            "reference": self.profile.to_dict(),
            "attacks": {n: r.model_dump(mode="json") for n, r in self.attacks.items()},
            "detections": {n: d.to_dict() for n, d in self.detections.items()},
            "recovery": [dict(zip(RECOVERY_COLUMNS, row, strict=True)) for row in self.recovery_rows()],
        }


def reference_document(clean: CleanModel, cfg: ExperimentConfig) -> dict[str, Any]:
    delta = cfg.detect.delta if cfg.detect.delta is not None else clean.profile.default_delta()
    return {
        **clean.profile.to_dict(),
        "delta": delta,
        "clean_accuracy": clean.accuracy,
        "clean_cross_entropy": clean.cross_entropy,
    }


def write_clean_artifacts(writer: ArtifactWriter, clean: CleanModel, cfg: ExperimentConfig) -> None:
    writer.write_bytes("clean.ckpt", save_checkpoint(clean.model, profile=clean.profile.to_dict()))
    writer.write_text("train_phase_a.csv", clean.phase_a_log.to_csv(include_timing=False))
    writer.write_text("train_phase_b.csv", clean.phase_b_log.to_csv(include_timing=False))
    writer.write_json("reference.json", reference_document(clean, cfg))


def write_attack_artifacts(
    writer: ArtifactWriter, name: str, model: Model, report: AttackReport, profile: ReferenceProfile
) -> None:
    writer.write_bytes(f"attacked_{name}.ckpt", save_checkpoint(model, profile=profile.to_dict()))
    writer.write_json(f"attack_{name}.json", report.model_dump(mode="json"))


def write_recovery_artifact(
    writer: ArtifactWriter, name: str, mode: RecoveryMode, report: RecoveryReport, detected: bool | None
) -> None:
    document = {"attack": name, "mode": mode, "detected": detected, **report.model_dump(mode="json")}
    writer.write_json(f"recovery_{name}_{mode}.json", document)


# =============================================================================
# Orchestration
# =============================================================================


def _execute(cfg: ExperimentConfig, writer: ArtifactWriter, digest: str) -> ExperimentResult:
    data = prepare_data(cfg)
    with (
        trace_operation("experiment.train", {"source": data.source}),
        metrics_collector.stage("experiment.train"),
    ):
        clean = train_clean(cfg, data)
    write_clean_artifacts(writer, clean, cfg)

    result = ExperimentResult(cfg.output_dir, digest, clean.accuracy, clean.profile)
    runs = list(enumerate(attack_runs(cfg)))

    with (
        trace_operation("experiment.attacks", {"runs": len(runs)}),
        metrics_collector.stage("experiment.attacks"),
    ):
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            attacked = list(pool.map(lambda item: run_attack(cfg, clean.model, item[1], item[0], data), runs))
    for (_, spec), (model, report) in zip(runs, attacked, strict=True):
        result.attacks[spec.name] = report
        write_attack_artifacts(writer, spec.name, model, report, clean.profile)

    with trace_operation("experiment.detection"), metrics_collector.stage("experiment.detection"):
        models = [("clean", clean.model)] + [
            (spec.name, model) for (_, spec), (model, _) in zip(runs, attacked, strict=True)
        ]
        for name, model in models:
            result.detections[name] = run_detection(cfg, model, clean.profile, data.detect_pool)
    writer.write_csv(
        "detection_samples.csv",
        ("model", "sample", "loss"),
        (
            (name, i, float(loss))
            for name, outcome in result.detections.items()
            for i, loss in enumerate(outcome.samples)
        ),
    )
    writer.write_json("detection_verdicts.json", {n: d.to_dict() for n, d in result.detections.items()})

    jobs = [
        (index, spec, model, mode, [t.layer_name for t in report.layers_touched])
        for (index, spec), (model, report) in zip(runs, attacked, strict=True)
        for mode in RECOVERY_MODES
    ]

    def recover_job(job: tuple[int, AttackSpec, Model, RecoveryMode, list[str]]) -> RecoveryReport:
        index, _, model, mode, layers = job
        return run_recovery(cfg, model, clean.profile, clean.cross_entropy, data, mode, index, layers)[1]

    with (
        trace_operation("experiment.recovery", {"jobs": len(jobs)}),
        metrics_collector.stage("experiment.recovery"),
    ):
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            recovered = list(pool.map(recover_job, jobs))

    trajectory_rows = []
    for (_, spec, _, mode, _), report in zip(jobs, recovered, strict=True):
        result.recoveries[(spec.name, mode)] = report
        detected = result.detections[spec.name].verdict.attacked
        write_recovery_artifact(writer, spec.name, mode, report, detected)
        trajectory_rows += [(spec.name, mode, *row) for row in report.trajectory_rows()]
    writer.write_csv("recovery.csv", RECOVERY_COLUMNS, result.recovery_rows())
    writer.write_csv(
        "recovery_trajectories.csv", ("attack", "mode", "phase", "epoch", "loss"), trajectory_rows
    )
    return result


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Run the full protocol and write every artifact under cfg.output_dir.

    Errors propagate after a partial manifest is written; exceptions from
    outside the package hierarchy are wrapped in ExperimentError.
    """
    writer = ArtifactWriter(cfg.output_dir)
    digest = experiment_hash(cfg)
    metrics_collector.reset()
    logger.info("Experiment started", seed=cfg.seed, preset=cfg.preset, output_dir=str(cfg.output_dir))

    with LogContext(seed=cfg.seed), trace_operation("experiment.run", {"seed": cfg.seed}):
        try:
            with metrics_collector.stage("experiment.run") as timer:
                result = _execute(cfg, writer, digest)
        except ContrastGuardError as e:
            _fail(writer, cfg, digest, e)
            raise
        except Exception as e:
            _fail(writer, cfg, digest, e)
            raise ExperimentError(f"experiment failed: {e}") from e

    writer.write_timing(metrics_collector.get_summary())
    writer.write_manifest("complete", cfg.seed, digest)
    logger.info(
        "Experiment finished",
        clean_accuracy=round(result.clean_accuracy, 4),
        attacks=len(result.attacks),
        duration_ms=round(timer.duration_ms, 1),
    )
    return result


def _fail(writer: ArtifactWriter, cfg: ExperimentConfig, digest: str, error: Exception) -> None:
    writer.record_error(f"{type(error).__name__}: {error}")
    writer.write_timing(metrics_collector.get_summary())
    writer.write_manifest("partial", cfg.seed, digest)
    logger.error("Experiment failed", error=str(error), files_written=len(writer.digests))
