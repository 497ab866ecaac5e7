"""End-to-end gradient validation on a down-scaled configuration."""

from __future__ import annotations

import numpy as np

from . import losses
from .data import SynthSpec, synth_dataset
from .gradcore import grad_check
from .losses import LossWeights, StftConfig
from .model import NfsConfig, NfsModel

TINY_STFT = StftConfig(resolutions=((64, 16, 32), (128, 32, 64)), metric_fft=128, metric_hop=32)


def tiny_model(seed: int = 0, **overrides) -> NfsModel:
    cfg = NfsConfig(**{**dict(
        frame_len=64, hop=32, pad=32, chan=4, embed_dim=32,
        sample_rate=48000, ni=True, seed=seed,
    ), **overrides})
    return NfsModel.init(cfg, seed=seed)


def tiny_gradcheck(seed: int = 0, samples_per_leaf: int = 4,
                   epsilon: float = 1e-5) -> tuple[float, dict[str, float]]:
    """Composite-loss gradient vs central differences through the whole render.

    Runs the full pipeline (encoders, both heads, shift-scale, synthesis,
    noise injection, every loss term) on a 64-sample frame, 4-channel model.
    The checked scalar is the composite loss normalized by the summed weights,
    so difference-quotient noise stays well under the tolerance.
    """
    model = tiny_model(seed)
    rng = np.random.default_rng(seed + 10)
    crop = 4 * model.config.hop
    mono = rng.standard_normal(crop) * 0.3
    n_frames = model.config.plan().num_frames(crop)
    positions = np.tile(np.array([1.0, -0.4, 0.1]), (n_frames, 1)) \
        + 0.01 * rng.standard_normal((n_frames, 3))
    quats = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n_frames, 1))
    target = np.stack([
        0.5 * np.roll(mono, 3) + 0.01 * rng.standard_normal(crop),
        0.4 * np.roll(mono, 5) + 0.01 * rng.standard_normal(crop),
    ])
    weights = LossWeights()
    scale = 1.0 / (weights.l2 + weights.phase + weights.iid + weights.stft)

    def fn():
        noise = np.random.default_rng(seed + 20)
        est = model.render_crop(mono, positions, quats, rng=noise)
        total, _ = losses.composite(est, target, weights, TINY_STFT)
        return total * scale

    params = model.parameters()
    return grad_check(fn, params, epsilon=epsilon, samples_per_leaf=samples_per_leaf,
                      rng=np.random.default_rng(seed + 30))


def quick_overfit_records(rng: np.random.Generator, duration: float = 60.0,
                          position=(0.8, -0.5, 0.0), ear_gains=(0.09, 0.04)):
    """The desk-scale ground truth: one static source, analytic delay and
    inverse-square gain, left of the midline so the interaural sign is imposed."""
    spec = SynthSpec(duration=duration, position=position, ear_gains=ear_gains,
                     kind="speech_noise")
    return synth_dataset(spec, rng), spec
