"""Composite training loss and the evaluation metric suite.

Every term accepts numpy arrays or taped Tensors shaped [2, n] (stereo) and
returns a scalar Tensor, so the same implementations back training gradients
and standalone evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import frame_signal, periodic_hann, rfft_planes
from .errors import ContractViolation
from .gradcore import Tensor, ops

LN10 = math.log(10.0)
MAG_FLOOR = 1e-8


@dataclass
class LossWeights:
    """Multipliers for the composite: waveform, phase, interaural level, spectra."""

    l2: float = 1000.0
    phase: float = 1.0
    iid: float = 10.0
    stft: float = 1.0


@dataclass
class StftConfig:
    """(fft size, hop, window length) triples for the multi-resolution term,
    plus the single resolution shared by the phase/IID/amplitude metrics."""

    resolutions: tuple = ((512, 50, 240), (1024, 120, 600), (2048, 240, 1200))
    metric_fft: int = 2048
    metric_hop: int = 480
    phase_mask_floor: float = 1e-4
    phase_mask: bool = True

    def __post_init__(self):
        for fft, hop, win in self.resolutions:
            if fft <= 0 or hop <= 0 or win <= 0:
                raise ContractViolation(f"non-positive STFT size in {(fft, hop, win)}")
            if win > fft:
                raise ContractViolation(f"window {win} longer than fft {fft}")


_WINDOWS: dict[int, np.ndarray] = {}


def _window(n: int) -> np.ndarray:
    if n not in _WINDOWS:
        _WINDOWS[n] = periodic_hann(n)
    return _WINDOWS[n]


def _stft(x, fft: int, hop: int, win: int):
    """(re, im) planes of shape [frames, fft/2+1]; differentiable for Tensors."""
    frames = frame_signal(x, win, hop)
    if isinstance(frames, Tensor):
        frames = frames * Tensor(_window(win))
    else:
        frames = frames * _window(win)
    return rfft_planes(frames, n_fft=fft)


def _magnitude(re, im):
    return ops.sqrt(ops.as_tensor(re) ** 2 + ops.as_tensor(im) ** 2 + 1e-24)


def _check_pair(est, ref):
    e = est.data if isinstance(est, Tensor) else np.asarray(est, dtype=np.float64)
    r = ref.data if isinstance(ref, Tensor) else np.asarray(ref, dtype=np.float64)
    if e.shape != r.shape:
        raise ContractViolation(f"signal shapes differ: {e.shape} vs {r.shape}")
    if e.ndim != 2 or e.shape[0] != 2:
        raise ContractViolation(f"expected stereo [2, n] signals, got {e.shape}")
    return e, r


def _channel(x, idx: int):
    return x[idx] if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)[idx]


def l2_wave(est, ref) -> Tensor:
    """Euclidean norm of the sample-wise difference over both channels."""
    _check_pair(est, ref)
    diff = ops.as_tensor(est) - ops.as_tensor(ref)
    return ops.sqrt(ops.reduce_sum(diff * diff) + 1e-30)


def phase_loss(est, ref, cfg: StftConfig | None = None) -> Tensor:
    """Mean absolute wrapped difference of STFT phases.

    The wrap is atan2(sin d, cos d), so opposite near-pi phases count as
    nearly zero error. Bins whose reference magnitude falls below
    ``phase_mask_floor`` times the channel peak are excluded: the phase of
    near-silent bins is noise.
    """
    _check_pair(est, ref)
    cfg = cfg or StftConfig()
    fft, hop = cfg.metric_fft, cfg.metric_hop
    total = None
    count = 0.0
    for ch in range(2):
        e_re, e_im = _stft(_channel(est, ch), fft, hop, fft)
        r_re, r_im = _stft(_channel(ref, ch), fft, hop, fft)
        ph_e = ops.atan2(e_im, e_re)
        r_re_d = r_re.data if isinstance(r_re, Tensor) else r_re
        r_im_d = r_im.data if isinstance(r_im, Tensor) else r_im
        ph_r = np.arctan2(r_im_d, r_re_d)
        delta = ph_e - Tensor(ph_r)
        wrapped = ops.atan2(ops.sin(delta), ops.cos(delta))
        mag_r = np.sqrt(r_re_d**2 + r_im_d**2)
        if cfg.phase_mask:
            mask = (mag_r >= cfg.phase_mask_floor * mag_r.max()).astype(np.float64)
        else:
            mask = np.ones_like(mag_r)
        term = ops.reduce_sum(ops.absolute(wrapped) * Tensor(mask))
        total = term if total is None else total + term
        count += float(mask.sum())
    return total * (1.0 / max(count, 1.0))


def iid(x, cfg: StftConfig | None = None) -> Tensor:
    """Mean log-magnitude difference between left and right spectra.

    Computed per STFT frame over all bins, then averaged across frames.
    Magnitudes are floored at 1e-8 before the log.
    """
    cfg = cfg or StftConfig()
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != 2:
        raise ContractViolation(f"iid expects stereo [2, n], got {data.shape}")
    fft, hop = cfg.metric_fft, cfg.metric_hop
    sides = []
    for ch in range(2):
        re, im = _stft(_channel(x, ch), fft, hop, fft)
        mag = ops.maximum(_magnitude(re, im), Tensor(np.asarray(MAG_FLOOR)))
        sides.append(ops.log(mag) * (1.0 / LN10))
    return ops.reduce_mean(sides[0] - sides[1])


def iid_loss(est, ref, cfg: StftConfig | None = None) -> Tensor:
    _check_pair(est, ref)
    diff = iid(est, cfg) - iid(ref, cfg)
    return ops.sqrt(diff * diff + 1e-30)


def mrstft(est, ref, cfg: StftConfig | None = None) -> Tensor:
    """Sum over resolutions of spectral convergence plus log-magnitude L1.

    Per resolution: |M_ref - M_est|_F / |M_ref|_F  +  mean |log M_ref - log M_est|.
    Channels are averaged.
    """
    _check_pair(est, ref)
    cfg = cfg or StftConfig()
    total = None
    for fft, hop, win in cfg.resolutions:
        for ch in range(2):
            e_re, e_im = _stft(_channel(est, ch), fft, hop, win)
            r_re, r_im = _stft(_channel(ref, ch), fft, hop, win)
            m_e = _magnitude(e_re, e_im)
            m_r = _magnitude(r_re, r_im)
            diff = m_r - m_e
            sc = ops.sqrt(ops.reduce_sum(diff * diff) + 1e-30) \
                / ops.sqrt(ops.reduce_sum(m_r * m_r) + 1e-30)
            log_e = ops.log(ops.maximum(m_e, Tensor(np.asarray(MAG_FLOOR))))
            log_r = ops.log(ops.maximum(m_r, Tensor(np.asarray(MAG_FLOOR))))
            mag_l1 = ops.reduce_mean(ops.absolute(log_r - log_e))
            term = (sc + mag_l1) * 0.5
            total = term if total is None else total + term
    return total


def amplitude_error(est, ref, cfg: StftConfig | None = None) -> Tensor:
    """Mean squared error between magnitude spectrograms, channel-averaged."""
    _check_pair(est, ref)
    cfg = cfg or StftConfig()
    fft, hop = cfg.metric_fft, cfg.metric_hop
    total = None
    for ch in range(2):
        e_re, e_im = _stft(_channel(est, ch), fft, hop, fft)
        r_re, r_im = _stft(_channel(ref, ch), fft, hop, fft)
        diff = _magnitude(e_re, e_im) - _magnitude(r_re, r_im)
        term = ops.reduce_mean(diff * diff) * 0.5
        total = term if total is None else total + term
    return total


@dataclass
class LossBreakdown:
    total: float
    l2: float
    phase: float
    iid: float
    stft: float

    def as_dict(self) -> dict[str, float]:
        return {"total": self.total, "l2": self.l2, "phase": self.phase,
                "iid": self.iid, "stft": self.stft}


def composite(est, ref, weights: LossWeights | None = None,
              cfg: StftConfig | None = None) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of all four terms plus the unweighted per-term breakdown."""
    weights = weights or LossWeights()
    cfg = cfg or StftConfig()
    t_l2 = l2_wave(est, ref)
    t_ph = phase_loss(est, ref, cfg)
    t_iid = iid_loss(est, ref, cfg)
    t_stft = mrstft(est, ref, cfg)
    total = (t_l2 * weights.l2 + t_ph * weights.phase
             + t_iid * weights.iid + t_stft * weights.stft)
    breakdown = LossBreakdown(
        total=float(total.data), l2=float(t_l2.data), phase=float(t_ph.data),
        iid=float(t_iid.data), stft=float(t_stft.data),
    )
    return total, breakdown
