"""
Exception hierarchy for ContrastGuard.

Every error raised by the library derives from ContrastGuardError so the CLI
can map failures to exit codes in one place.
"""


class ContrastGuardError(Exception):
    """Base class for all ContrastGuard errors."""


class ShapeError(ContrastGuardError):
    """Operand shapes do not conform."""


class BackwardError(ContrastGuardError):
    """Reverse pass requested on an invalid tape."""


class OptimizerError(ContrastGuardError):
    """Optimizer step requested without gradients."""


class ModelConfigError(ContrastGuardError):
    """Invalid model configuration."""


class InvalidInputError(ContrastGuardError):
    """Input values outside the accepted domain (NaN, Inf, missing labels)."""


class QuantizationError(ContrastGuardError):
    """Invalid quantized-view operation."""


class CheckpointError(ContrastGuardError):
    """Malformed or incompatible checkpoint payload."""


class DatasetError(ContrastGuardError):
    """Dataset files missing or malformed."""


class AugmentationError(ContrastGuardError):
    """Invalid augmentation request."""


class LossError(ContrastGuardError):
    """Invalid contrastive loss input."""


class TrainingError(ContrastGuardError):
    """Training cannot proceed with the given data."""


class AttackError(ContrastGuardError):
    """Attack preconditions not met."""


class DetectionError(ContrastGuardError):
    """Detection preconditions not met."""


class RecoveryError(ContrastGuardError):
    """Recovery preconditions not met."""


class ExperimentError(ContrastGuardError):
    """Experiment run failed; partial artifacts are listed in the manifest."""
