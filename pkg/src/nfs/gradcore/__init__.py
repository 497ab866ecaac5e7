"""Dense-tensor numeric core: taped reverse-mode differentiation and RAdam."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .radam import RAdam, RAdamState, clip_global_norm, radam_step, rectification, rho_inf, rho_t
from .tape import Tape, Tensor, active_tape, recording

__all__ = [
    "Tape",
    "Tensor",
    "RAdam",
    "RAdamState",
    "active_tape",
    "clip_global_norm",
    "grad_check",
    "load_checkpoint",
    "ops",
    "radam_step",
    "recording",
    "rectification",
    "rho_inf",
    "rho_t",
    "save_checkpoint",
]
