"""Trainable blocks shared by the scale and shift heads.

Both heads run the same stack: single-head cross-attention fusing orientation
into position, a channel projection to ``chan`` rows, squeeze-and-excitation
over those rows, one spatial-gating MLP block, and linear interpolation of
each row out to the frequency axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..gradcore import Tensor, ops


def _linear_init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(
            wq=_linear_init(rng, dim, (dim, dim)), wk=_linear_init(rng, dim, (dim, dim)),
            wv=_linear_init(rng, dim, (dim, dim)), wo=_linear_init(rng, dim, (dim, dim)),
            bq=_zeros(dim), bk=_zeros(dim), bv=_zeros(dim), bo=_zeros(dim),
        )

    def named(self, prefix: str):
        for f in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"):
            yield f"{prefix}.{f}", getattr(self, f)


def cross_attention(query_emb: Tensor, context_emb: Tensor, p: AttentionParams) -> Tensor:
    """Scaled dot-product attention, query and context being one token each.

    The softmax runs over the (length-1) key axis, so the attention weight is
    identically one and the value path carries the conditioning.
    """
    d = query_emb.data.shape[-1]
    q = ops.dense(query_emb, p.wq, p.bq)
    k = ops.dense(context_emb, p.wk, p.bk)
    v = ops.dense(context_emb, p.wv, p.bv)
    score = ops.reduce_sum(q * k, axis=-1, keepdims=True) * (1.0 / math.sqrt(d))
    weight = ops.softmax(score, axis=-1)
    ctx = weight * v
    out = ops.dense(ctx, p.wo, p.bo)
    return query_emb + out


@dataclass
class SqueezeExciteParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, chan: int, bottleneck: int, rng: np.random.Generator) -> "SqueezeExciteParams":
        return cls(
            w1=_linear_init(rng, chan, (chan, bottleneck)), b1=_zeros(bottleneck),
            w2=_linear_init(rng, bottleneck, (bottleneck, chan)), b2=_zeros(chan),
        )

    def named(self, prefix: str):
        for f in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{f}", getattr(self, f)


def squeeze_excite(x: Tensor, p: SqueezeExciteParams) -> Tensor:
    """Gate the channel rows of [frames, chan, d] by globally pooled features."""
    pooled = ops.reduce_mean(x, axis=-1)
    z = ops.relu(ops.dense(pooled, p.w1, p.b1))
    gate = ops.sigmoid(ops.dense(z, p.w2, p.b2))
    return x * ops.reshape(gate, gate.data.shape + (1,))


@dataclass
class GmlpParams:
    ln_g: Tensor
    ln_b: Tensor
    w1: Tensor
    b1: Tensor
    sgu_ln_g: Tensor
    sgu_ln_b: Tensor
    sgu_w: Tensor
    sgu_b: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, dim: int, ff: int, chan: int, rng: np.random.Generator) -> "GmlpParams":
        # Spatial gate starts near identity: tiny weights, unit bias.
        return cls(
            ln_g=Tensor(np.ones(dim), requires_grad=True), ln_b=_zeros(dim),
            w1=_linear_init(rng, dim, (dim, ff)), b1=_zeros(ff),
            sgu_ln_g=Tensor(np.ones(ff // 2), requires_grad=True), sgu_ln_b=_zeros(ff // 2),
            sgu_w=Tensor(rng.uniform(-1e-3, 1e-3, size=(chan, chan)), requires_grad=True),
            sgu_b=Tensor(np.ones(chan), requires_grad=True),
            w2=_linear_init(rng, ff // 2, (ff // 2, dim)), b2=_zeros(dim),
        )

    def named(self, prefix: str):
        for f in ("ln_g", "ln_b", "w1", "b1", "sgu_ln_g", "sgu_ln_b", "sgu_w", "sgu_b", "w2", "b2"):
            yield f"{prefix}.{f}", getattr(self, f)


def gmlp_block(x: Tensor, p: GmlpParams) -> Tensor:
    """MLP with a spatial gating unit across the channel-row axis, residual."""
    chan = x.data.shape[-2]
    h = ops.layer_norm(x, p.ln_g, p.ln_b)
    z = ops.gelu(ops.dense(h, p.w1, p.b1))
    ff = z.data.shape[-1]
    z1 = z[..., : ff // 2]
    z2 = z[..., ff // 2 :]
    z2 = ops.layer_norm(z2, p.sgu_ln_g, p.sgu_ln_b)
    t = ops.swapaxes(z2, -1, -2)
    t = ops.dense(t, ops.swapaxes(p.sgu_w, 0, 1))
    z2 = ops.swapaxes(t, -1, -2) + ops.reshape(p.sgu_b, (chan, 1))
    gated = z1 * z2
    return x + ops.dense(gated, p.w2, p.b2)


@dataclass
class HeadParams:
    """One prediction head: fusion attention plus the row stack."""

    attn: AttentionParams
    proj_w: Tensor
    proj_b: Tensor
    se: SqueezeExciteParams
    gmlp: GmlpParams

    @classmethod
    def init(cls, dim: int, chan: int, bottleneck: int, ff: int,
             rng: np.random.Generator) -> "HeadParams":
        return cls(
            attn=AttentionParams.init(dim, rng),
            proj_w=_linear_init(rng, 1, (chan,)),
            proj_b=_zeros(chan),
            se=SqueezeExciteParams.init(chan, bottleneck, rng),
            gmlp=GmlpParams.init(dim, ff, chan, rng),
        )

    def named(self, prefix: str):
        yield from self.attn.named(f"{prefix}.attn")
        yield f"{prefix}.proj_w", self.proj_w
        yield f"{prefix}.proj_b", self.proj_b
        yield from self.se.named(f"{prefix}.se")
        yield from self.gmlp.named(f"{prefix}.gmlp")


def fuse(pos_emb: Tensor, ori_emb: Tensor, head: HeadParams) -> Tensor:
    """Cross-attend orientation into position, then lift to channel rows.

    Output is [frames, chan, d]: each channel row is an affine copy of the
    fused embedding, ready for row-wise refinement.
    """
    fused = cross_attention(pos_emb, ori_emb, head.attn)
    n, d = fused.data.shape
    chan = head.proj_w.data.shape[0]
    rows = ops.reshape(fused, (n, 1, d)) * ops.reshape(head.proj_w, (1, chan, 1))
    return rows + ops.reshape(head.proj_b, (1, chan, 1))


def head_forward(fused: Tensor, head: HeadParams, freq: int) -> Tensor:
    """Refine channel rows and resample them onto the frequency axis."""
    h = squeeze_excite(fused, head.se)
    h = gmlp_block(h, head.gmlp)
    return ops.interp_linear(h, freq)
