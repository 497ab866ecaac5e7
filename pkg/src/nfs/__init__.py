"""Binaural rendering in the Fourier domain.

Mono audio plus a time-aligned source pose track in, two-channel audio out:
per frame and ear the conditioning network predicts per-channel spectral
scales and phase delays, applied by the shift theorem and resynthesized by
weighted overlap-add. Ships its own double-precision reverse-mode tape, so
the whole renderer trains end to end on the composite waveform/spectral loss.
"""

from . import data, dsp, losses, trainer
from .audio_io import AudioBuffer, read_wav, write_wav
from .dsp import FramePlan, Spectrum
from .errors import (
    CheckFailure,
    ContractViolation,
    DomainError,
    IngestionError,
    NonDeterminismError,
    NonFiniteGradientError,
)
from .gradcore import RAdam, Tape, Tensor, grad_check, load_checkpoint, recording, save_checkpoint
from .losses import LossWeights, StftConfig
from .model import NfsConfig, NfsModel, identity_model
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "CheckFailure",
    "ContractViolation",
    "DomainError",
    "FramePlan",
    "IngestionError",
    "LossWeights",
    "NfsConfig",
    "NfsModel",
    "NonDeterminismError",
    "NonFiniteGradientError",
    "RAdam",
    "Spectrum",
    "StftConfig",
    "Tape",
    "Tensor",
    "TrainConfig",
    "data",
    "dsp",
    "evaluate",
    "grad_check",
    "identity_model",
    "load_checkpoint",
    "losses",
    "read_wav",
    "recording",
    "save_checkpoint",
    "train",
    "trainer",
    "write_wav",
    "__version__",
]
