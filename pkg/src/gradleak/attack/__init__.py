"""Gradient-inversion attack on text: losses, edits, projection and the main loop."""
from .config import PRESETS, AttackConfig, preset
from .engine import (
    AttackProblem,
    ReconstructionResult,
    Snapshot,
    StackedObjective,
    initialize,
    run_attack,
    run_attacks,
    select_candidate,
)
from .losses import loss_cos, loss_l2, loss_reg, loss_tag
from .project import project_to_vocabulary
from .transforms import KINDS, transform

__all__ = [
    "AttackConfig",
    "AttackProblem",
    "KINDS",
    "PRESETS",
    "ReconstructionResult",
    "Snapshot",
    "StackedObjective",
    "initialize",
    "loss_cos",
    "loss_l2",
    "loss_reg",
    "loss_tag",
    "preset",
    "project_to_vocabulary",
    "run_attack",
    "run_attacks",
    "select_candidate",
    "transform",
]
