"""Condition networks and the Fourier-domain binaural renderer."""

from .blocks import (
    AttentionParams,
    GmlpParams,
    HeadParams,
    SqueezeExciteParams,
    cross_attention,
    fuse,
    gmlp_block,
    head_forward,
    squeeze_excite,
)
from .config import NfsConfig
from .encoding import fourier_features, linear_features, sinusoidal_encoding
from .network import (
    CapacityReport,
    EarParams,
    EncoderParams,
    NfsModel,
    capacity_report,
    identity_model,
)

__all__ = [
    "AttentionParams",
    "CapacityReport",
    "EarParams",
    "EncoderParams",
    "GmlpParams",
    "HeadParams",
    "NfsConfig",
    "NfsModel",
    "SqueezeExciteParams",
    "capacity_report",
    "cross_attention",
    "fourier_features",
    "fuse",
    "gmlp_block",
    "head_forward",
    "identity_model",
    "linear_features",
    "sinusoidal_encoding",
    "squeeze_excite",
]
