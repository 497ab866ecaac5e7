"""Model configuration, serialized alongside every checkpoint."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from ..dsp import SPEED_OF_SOUND, FramePlan
from ..errors import ContractViolation


@dataclass
class NfsConfig:
    """Architecture and rendering geometry.

    Ablation switches: ``ni`` (noise injection), ``lff`` (learned Fourier
    features vs a plain trained linear layer), ``shifter`` (phase-delay head;
    off means all phases ride the geometric delay alone), ``geowarp``
    (geometric delay bias; off widens the learnable delay bound to a full
    frame so direct arrivals stay expressible).
    """

    sample_rate: int = 48000
    frame_len: int = 9600
    hop: int = 4800
    pad: int = 4800
    chan: int = 128
    embed_dim: int = 128
    se_ratio: int = 4
    gmlp_ff_mult: int = 2
    attn_heads: int = 1
    lff_scale: float = 1.0
    ear_offset: float = 0.09
    lateral_axis: int = 1
    speed_of_sound: float = SPEED_OF_SOUND
    ni: bool = True
    lff: bool = True
    shifter: bool = True
    geowarp: bool = True
    shared_encoders: bool = False
    ni_level_init: float = -6.0
    seed: int = 0

    def __post_init__(self):
        if self.chan < 1 or self.embed_dim < 2:
            raise ContractViolation(f"chan={self.chan}, embed_dim={self.embed_dim} too small")
        if self.embed_dim % 2 != 0:
            raise ContractViolation("embed_dim must be even (sin/cos pairs)")
        if self.attn_heads != 1:
            raise ContractViolation("only single-head cross-attention is supported")
        if self.frame_len % self.hop != 0:
            raise ContractViolation(f"hop {self.hop} must divide frame_len {self.frame_len}")

    @property
    def freq(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def gmlp_ff(self) -> int:
        return self.gmlp_ff_mult * self.embed_dim

    @property
    def se_bottleneck(self) -> int:
        return max(self.chan // self.se_ratio, 1)

    @property
    def lff_rows(self) -> int:
        return self.embed_dim // 2

    def plan(self) -> FramePlan:
        return FramePlan(frame_len=self.frame_len, hop=self.hop, pad=self.pad)

    def delay_bound(self) -> float:
        """Upper bound of the learnable per-frame delay, in samples."""
        return float(self.frame_len if not self.geowarp else self.frame_len // 2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NfsConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def tiny(self) -> "NfsConfig":
        """Down-scaled twin used by gradient checks."""
        d = self.to_dict()
        d.update(frame_len=64, hop=32, pad=32, chan=4, embed_dim=32, gmlp_ff_mult=2)
        return NfsConfig.from_dict(d)
