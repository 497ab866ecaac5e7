"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (loops, direct summation) and shares no
code with the package paths it checks.
"""

from __future__ import annotations

import cmath
import math

import numpy as np


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(N^2) transform straight from the definition."""
    n = len(x)
    out = np.zeros(n, dtype=np.complex128)
    for k in range(n):
        acc = 0.0 + 0.0j
        for m in range(n):
            acc += x[m] * cmath.exp(-2j * math.pi * k * m / n)
        out[k] = acc
    return out


def direct_overlap_add(frames: np.ndarray, window: np.ndarray, hop: int,
                       pad: int, out_len: int) -> np.ndarray:
    """Windowed overlap-add with explicit envelope bookkeeping, loop form."""
    n_frames, frame_len = frames.shape
    total = (n_frames - 1) * hop + frame_len
    acc = np.zeros(total)
    env = np.zeros(total)
    for f in range(n_frames):
        for i in range(frame_len):
            acc[f * hop + i] += frames[f, i] * window[i]
            env[f * hop + i] += window[i]
    env = np.maximum(env, 1e-12)
    return (acc / env)[pad : pad + out_len]


def scalar_radam(grads: list[float], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, w0: float = 0.0) -> list[float]:
    """Reference rectified-Adam trajectory for one scalar parameter."""
    w, m, v = w0, 0.0, 0.0
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    path = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        b2t = beta2**t
        rho = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        if rho > 4.0:
            r = math.sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf)
                          / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
            w -= lr * r * m_hat / (math.sqrt(v / (1.0 - b2t)) + eps)
        else:
            w -= lr * m_hat
        path.append(w)
    return path


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def naive_stft(x: np.ndarray, fft: int, hop: int, win: int) -> np.ndarray:
    """Complex STFT by direct slicing, windowing, and numpy's FFT per frame."""
    n_frames = 1 + (len(x) - win) // hop
    window = hann_periodic(win)
    out = np.zeros((n_frames, fft // 2 + 1), dtype=np.complex128)
    for f in range(n_frames):
        seg = x[f * hop : f * hop + win] * window
        out[f] = np.fft.rfft(seg, n=fft)
    return out


def naive_mrstft(est: np.ndarray, ref: np.ndarray, resolutions) -> float:
    """Spectral convergence + log-magnitude L1, summed over resolutions,
    channels averaged; magnitudes regularized exactly like the implementation."""
    total = 0.0
    for fft, hop, win in resolutions:
        for ch in range(2):
            m_e = np.abs(_mag(naive_stft(est[ch], fft, hop, win)))
            m_r = np.abs(_mag(naive_stft(ref[ch], fft, hop, win)))
            sc = math.sqrt(np.sum((m_r - m_e) ** 2) + 1e-30) \
                / math.sqrt(np.sum(m_r**2) + 1e-30)
            l1 = np.mean(np.abs(np.log(np.maximum(m_r, 1e-8))
                                - np.log(np.maximum(m_e, 1e-8))))
            total += 0.5 * (sc + l1)
    return total


def _mag(spec: np.ndarray) -> np.ndarray:
    return np.sqrt(spec.real**2 + spec.imag**2 + 1e-24)


def naive_spectral_convergence(est_ch: np.ndarray, ref_ch: np.ndarray,
                               fft: int, hop: int, win: int) -> float:
    m_e = _mag(naive_stft(est_ch, fft, hop, win))
    m_r = _mag(naive_stft(ref_ch, fft, hop, win))
    return math.sqrt(np.sum((m_r - m_e) ** 2) + 1e-30) / math.sqrt(np.sum(m_r**2) + 1e-30)


def wrap_angle(delta: float) -> float:
    """Principal angular difference via the sin/cos form."""
    return math.atan2(math.sin(delta), math.cos(delta))


def naive_phase_loss(est: np.ndarray, ref: np.ndarray, fft: int, hop: int,
                     mask_floor: float = 1e-4, mask: bool = True) -> float:
    total = 0.0
    count = 0.0
    for ch in range(2):
        s_e = naive_stft(est[ch], fft, hop, fft)
        s_r = naive_stft(ref[ch], fft, hop, fft)
        mag_r = np.abs(s_r)
        keep = mag_r >= mask_floor * mag_r.max() if mask else np.ones_like(mag_r, bool)
        for f in range(s_e.shape[0]):
            for k in range(s_e.shape[1]):
                if keep[f, k]:
                    d = math.atan2(s_e[f, k].imag, s_e[f, k].real) \
                        - math.atan2(s_r[f, k].imag, s_r[f, k].real)
                    total += abs(wrap_angle(d))
                    count += 1.0
    return total / max(count, 1.0)


def naive_iid(x: np.ndarray, fft: int, hop: int) -> float:
    """Direct summation of the per-frame mean log-magnitude difference."""
    s_l = naive_stft(x[0], fft, hop, fft)
    s_r = naive_stft(x[1], fft, hop, fft)
    vals = []
    for f in range(s_l.shape[0]):
        acc = 0.0
        for k in range(s_l.shape[1]):
            ml = max(abs(_mag_scalar(s_l[f, k])), 1e-8)
            mr = max(abs(_mag_scalar(s_r[f, k])), 1e-8)
            acc += math.log10(ml) - math.log10(mr)
        vals.append(acc / s_l.shape[1])
    return float(np.mean(vals))


def _mag_scalar(z: complex) -> float:
    return math.sqrt(z.real**2 + z.imag**2 + 1e-24)
