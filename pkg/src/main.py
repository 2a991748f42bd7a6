"""
ContrastGuard - Command Line

Entry point of the `contrastguard` console script.

Subcommands:
- train: clean model, training logs and reference profile
- attack: one configured attack on a checkpoint
- detect: verdict for a checkpoint against a reference
- recover: unlabeled or labeled recovery of a checkpoint
- experiment: the full protocol with manifest
- report: tables of a finished run

Exit codes: 0 ok, 1 usage, 2 data error, 3 experiment failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from src import __version__
from src.core.errors import CheckpointError, ContrastGuardError, DatasetError
from src.evaluation.artifacts import ArtifactWriter, read_manifest, verify_manifest
from src.evaluation.config import (
    ConfigurationError,
    ExperimentConfig,
    build_config,
    load_config_document,
)
from src.evaluation.experiment import (
    experiment_hash,
    find_attack,
    prepare_data,
    reference_document,
    run_attack,
    run_detection,
    run_experiment,
    run_recovery,
    train_clean,
    write_attack_artifacts,
    write_clean_artifacts,
    write_recovery_artifact,
)
from src.models.checkpoint import CheckpointContents, read_checkpoint, save_checkpoint
from src.observability.logger import get_logger, setup_logging
from src.observability.tracer import setup_tracing, shutdown_tracing
from src.services.detector import ReferenceProfile
from src.templates import PRESET_NAMES, PresetLoadError

logger = get_logger(__name__, component="cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FAILURE = 3

stdout = Console()
stderr = Console(stderr=True)


class UsageError(Exception):
    """Bad command line."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so main owns exit codes."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _common_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset after it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Root seed")
    common.add_argument("--data-dir", type=Path, default=argparse.SUPPRESS, help="CIFAR-10 binary directory")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="Output directory")
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON ExperimentConfig document")
    common.add_argument("--preset", choices=PRESET_NAMES, default=argparse.SUPPRESS, help="Named preset")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="Worker threads")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="DEBUG, INFO, WARNING or ERROR")
    return common


def build_parser() -> CliParser:
    common = _common_flags()
    parser = CliParser(
        prog="contrastguard",
        description="Contrastive-loss fault-injection detection and recovery testbed",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"contrastguard {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    sub.add_parser("train", parents=[common], help="Train the clean model and build the reference")

    attack = sub.add_parser("attack", parents=[common], help="Run one configured attack")
    attack.add_argument("--checkpoint", type=Path, required=True, help="Clean checkpoint")
    attack.add_argument("--name", required=True, help="Attack run name from the config")

    detect = sub.add_parser("detect", parents=[common], help="Detect whether a checkpoint is attacked")
    detect.add_argument("--checkpoint", type=Path, required=True)
    detect.add_argument("--reference", type=Path, help="reference.json or a checkpoint holding a profile")
    detect.add_argument("--delta", type=float, help="Fault tolerance; default max(3 sigma, 5%% of l_c)")

    recover = sub.add_parser("recover", parents=[common], help="Recover an attacked checkpoint")
    recover.add_argument("--checkpoint", type=Path, required=True)
    recover.add_argument("--reference", type=Path, help="reference.json or a checkpoint holding a profile")
    recover.add_argument("--labeled", action="store_true", help="Also fine-tune the classifier on labels")

    sub.add_parser("experiment", parents=[common], help="Run the full protocol")
    sub.add_parser("report", parents=[common], help="Summarize a finished run")
    return parser


# =============================================================================
# Helpers
# =============================================================================


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    document = load_config_document(args.config) if hasattr(args, "config") else None
    data_dir = getattr(args, "data_dir", None)
    return build_config(
        getattr(args, "preset", None) or (document or {}).get("preset", "desk"),
        document,
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "out", None),
        workers=getattr(args, "workers", None),
        data={"data_dir": data_dir} if data_dir is not None else None,
    )


def load_checkpoint_file(path: Path) -> CheckpointContents:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return read_checkpoint(data)


def _profile(document: dict[str, Any], source: Path | str) -> ReferenceProfile:
    try:
        return ReferenceProfile.from_dict(document)
    except ValidationError as e:
        raise CheckpointError(f"invalid reference profile in {source}: {e}") from e


def load_reference(
    reference: Path | None, checkpoint: CheckpointContents
) -> tuple[ReferenceProfile, float | None]:
    """Profile and clean cross-entropy from reference.json, a checkpoint, or the checkpoint itself."""
    if reference is None:
        if checkpoint.profile is None:
            raise CheckpointError("checkpoint carries no reference profile; pass --reference")
        return _profile(checkpoint.profile, "checkpoint"), None
    if reference.suffix == ".json":
        try:
            document = json.loads(reference.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CheckpointError(f"cannot read reference {reference}: {e}") from e
        return _profile(document, reference), document.get("clean_cross_entropy")
    contents = load_checkpoint_file(reference)
    if contents.profile is None:
        raise CheckpointError(f"{reference} carries no reference profile")
    return _profile(contents.profile, reference), None


def emit(document: Any) -> None:
    """Machine-readable result on stdout."""
    sys.stdout.write(json.dumps(document, sort_keys=True, indent=2) + "\n")


def _percent(value: Any) -> str:
    return "-" if value in (None, "") else f"{100 * float(value):.1f}%"


# =============================================================================
# Subcommands
# =============================================================================


def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    writer = ArtifactWriter(cfg.output_dir)
    data = prepare_data(cfg)
    clean = train_clean(cfg, data)
    write_clean_artifacts(writer, clean, cfg)
    writer.write_manifest("complete", cfg.seed, experiment_hash(cfg))
    emit(reference_document(clean, cfg))
    return EXIT_OK


def cmd_attack(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    contents = load_checkpoint_file(args.checkpoint)
    index, spec = find_attack(cfg, args.name)
    model, report = run_attack(cfg, contents.model, spec, index, prepare_data(cfg))
    if contents.profile is not None:
        profile = _profile(contents.profile, args.checkpoint)
        write_attack_artifacts(ArtifactWriter(cfg.output_dir), spec.name, model, report, profile)
    else:
        writer = ArtifactWriter(cfg.output_dir)
        writer.write_bytes(f"attacked_{spec.name}.ckpt", save_checkpoint(model))
        writer.write_json(f"attack_{spec.name}.json", report.model_dump(mode="json"))
    emit(report.model_dump(mode="json"))
    return EXIT_OK


def cmd_detect(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    contents = load_checkpoint_file(args.checkpoint)
    profile, _ = load_reference(args.reference, contents)
    if args.delta is not None:
        cfg = cfg.model_copy(update={"detect": cfg.detect.model_copy(update={"delta": args.delta})})
    outcome = run_detection(cfg, contents.model, profile, prepare_data(cfg).detect_pool)
    emit(outcome.to_dict())
    return EXIT_OK


def cmd_recover(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    contents = load_checkpoint_file(args.checkpoint)
    profile, reference_ce = load_reference(args.reference, contents)
    mode = "labeled" if args.labeled else "unlabeled"
    model, report = run_recovery(cfg, contents.model, profile, reference_ce, prepare_data(cfg), mode)
    name = args.checkpoint.stem
    writer = ArtifactWriter(cfg.output_dir)
    writer.write_bytes(f"recovered_{name}_{mode}.ckpt", save_checkpoint(model, profile=profile.to_dict()))
    write_recovery_artifact(writer, name, mode, report, None)
    emit(report.model_dump(mode="json"))
    return EXIT_OK


def cmd_experiment(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    result = run_experiment(cfg)
    render_report(cfg.output_dir)
    logger.info("Artifacts written", output_dir=str(result.output_dir))
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    render_report(cfg.output_dir)
    return EXIT_OK


def render_report(output_dir: Path) -> None:
    """Rich tables of the reference, detection verdicts and recovery results."""
    manifest = read_manifest(output_dir)
    stale = verify_manifest(output_dir)
    stdout.print(
        f"[bold]Run[/bold] {output_dir}  status={manifest['status']}  seed={manifest['seed']}  "
        f"files={len(manifest['files'])}"
    )
    for error in manifest.get("errors", []):
        stdout.print(f"[red]error[/red] {error}")
    if stale:
        stdout.print(f"[yellow]digest mismatch[/yellow] {', '.join(stale)}")

    reference_path = output_dir / "reference.json"
    if reference_path.exists():
        reference = json.loads(reference_path.read_text(encoding="utf-8"))
        table = Table(title="Reference")
        for column in ("clean acc", "l_c", "sigma_c", "delta", "samples"):
            table.add_column(column, justify="right")
        table.add_row(
            _percent(reference.get("clean_accuracy")),
            f"{reference['l_c']:.4f}",
            f"{reference['sigma_c']:.4f}",
            f"{reference['delta']:.4f}",
            str(reference["n_samples"]),
        )
        stdout.print(table)

    verdicts_path = output_dir / "detection_verdicts.json"
    if verdicts_path.exists():
        verdicts = json.loads(verdicts_path.read_text(encoding="utf-8"))
        table = Table(title="Detection")
        table.add_column("model")
        for column in ("l_d", "|l_d - l_c|", "attacked", "flag rate"):
            table.add_column(column, justify="right")
        for name, v in verdicts.items():
            table.add_row(
                name,
                f"{v['l_d']:.4f}",
                f"{abs(v['l_d'] - v['l_c']):.4f}",
                "yes" if v["attacked"] else "no",
                _percent(v["flag_rate"]),
            )
        stdout.print(table)

    recovery_path = output_dir / "recovery.csv"
    if recovery_path.exists():
        lines = recovery_path.read_text(encoding="utf-8").splitlines()
        table = Table(title="Recovery")
        header = lines[0].split(",")
        for column in header:
            table.add_column(column, justify="left" if column == "attack" else "right")
        for line in lines[1:]:
            cells = dict(zip(header, line.split(","), strict=True))
            table.add_row(
                *(
                    _percent(cells[c]) if c.endswith("acc") or c == "acc_after_attack" else cells[c] or "-"
                    for c in header
                )
            )
        stdout.print(table)


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "detect": cmd_detect,
    "recover": cmd_recover,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one subcommand and map errors to exit codes."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        stderr.print(str(e))
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(getattr(args, "log_level", None))
    setup_tracing()

    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except (PresetLoadError, ConfigurationError) as e:
        stderr.print(f"[red]usage:[/red] {e}")
        return EXIT_USAGE
    except (DatasetError, CheckpointError) as e:
        logger.error("Data error", error=str(e))
        stderr.print(f"[red]data error:[/red] {e}")
        return EXIT_DATA
    except ContrastGuardError as e:
        logger.error("Command failed", command=args.command, error=str(e))
        stderr.print(f"[red]failed:[/red] {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error("Unexpected failure", command=args.command, error_type=type(e).__name__, error=str(e))
        stderr.print(f"[red]failed:[/red] {type(e).__name__}: {e}")
        return EXIT_FAILURE
    finally:
        shutdown_tracing()


if __name__ == "__main__":
    sys.exit(main())
