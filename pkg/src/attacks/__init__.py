"""
ContrastGuard - Attacks

Simulated fault-injection attacks on model parameters. Every attack mutates
the model it is given; callers attack a clone to keep the original.
- PBS: progressive bit search on quantized weights
- FSA: constrained l0/l2 modification of one layer
- GDA: gradient-driven tampering toward a target class
- Random bit flips
"""

from src.attacks.fsa import FsaConfig, choose_fsa_targets, fsa_attack
from src.attacks.gda import GdaConfig, gda_attack
from src.attacks.pbs import PbsConfig, pbs_attack
from src.attacks.random_flip import random_bit_flip
from src.attacks.report import AttackKind, AttackReport, LayerTouch

__all__ = [
    "AttackKind",
    "AttackReport",
    "FsaConfig",
    "GdaConfig",
    "LayerTouch",
    "PbsConfig",
    "choose_fsa_targets",
    "fsa_attack",
    "gda_attack",
    "pbs_attack",
    "random_bit_flip",
]
