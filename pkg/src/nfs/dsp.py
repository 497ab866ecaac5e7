"""Signal-processing substrate: framing, transforms, shift-and-scale, geometry.

Public entry points accept either numpy arrays or taped Tensors and return the
matching kind, so the same code path serves oracle-style tests, inference, and
differentiable training. Complex spectra are carried as paired real planes;
no complex dtype ever reaches the tape.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DomainError
from .gradcore.ops import accumulate, as_tensor, register, register_multi, unbroadcast
from .gradcore.tape import Tensor

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
DEFAULT_SAMPLE_RATE = 48000
MIN_SOURCE_DISTANCE = 0.01


def periodic_hann(n: int) -> np.ndarray:
    """Periodic Hann window; shifted copies at 50% overlap sum to exactly 1."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class FramePlan:
    """Frame length, hop, synthesis window, and zero-padding policy.

    Analysis frames are rectangular slices; the window applies at synthesis
    only and is normalized by its summed envelope, which keeps the
    unfold/fold round trip an identity. The window must overlap-add to a
    constant at the given hop.
    """

    frame_len: int = 9600
    hop: int = 4800
    pad: int = 4800
    window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.frame_len <= 0 or self.hop <= 0 or self.pad < 0:
            raise ContractViolation(f"invalid plan: frame_len={self.frame_len} hop={self.hop} pad={self.pad}")
        if self.frame_len % self.hop != 0:
            raise ContractViolation(f"hop {self.hop} must divide frame_len {self.frame_len}")
        win = self.window if self.window is not None else periodic_hann(self.frame_len)
        win = np.asarray(win, dtype=np.float64)
        if win.shape != (self.frame_len,):
            raise ContractViolation(f"window length {win.shape} != frame_len {self.frame_len}")
        object.__setattr__(self, "window", win)
        env = _envelope(win, self.hop, 4 * self.frame_len)
        interior = env[self.frame_len : 3 * self.frame_len]
        if interior.min() <= 0.0 or np.ptp(interior) > 1e-9 * interior.mean():
            raise ContractViolation("window does not satisfy constant overlap-add at this hop")

    @classmethod
    def for_rate(cls, sample_rate: int, frame_ms: float = 200.0, hop_ms: float | None = None,
                 pad: int | None = None) -> "FramePlan":
        frame_len = int(round(sample_rate * frame_ms / 1000.0))
        hop = int(round(sample_rate * hop_ms / 1000.0)) if hop_ms else frame_len // 2
        return cls(frame_len=frame_len, hop=hop, pad=hop if pad is None else pad)

    @property
    def freq_bins(self) -> int:
        return self.frame_len // 2 + 1

    def num_frames(self, n_samples: int) -> int:
        span = n_samples + 2 * self.pad - self.frame_len
        if span < 0:
            raise ContractViolation(
                f"{n_samples} samples shorter than one frame after padding (frame {self.frame_len}, pad {self.pad})"
            )
        if span % self.hop != 0:
            raise ContractViolation(
                f"{n_samples} samples (+2*{self.pad} pad) do not tile frames of {self.frame_len} at hop {self.hop}"
            )
        return span // self.hop + 1

    def fit_length(self, n_samples: int) -> int:
        """Smallest length >= n_samples that tiles exactly under this plan."""
        span = max(n_samples + 2 * self.pad - self.frame_len, 0)
        rem = span % self.hop
        return n_samples + (self.hop - rem if rem else 0)


def _envelope(window: np.ndarray, hop: int, total: int) -> np.ndarray:
    env = np.zeros(total)
    for start in range(0, total - window.size + 1, hop):
        env[start : start + window.size] += window
    return env


# ----------------------------------------------------------------- framing

def unfold(audio, plan: FramePlan) -> np.ndarray:
    """Slice a mono signal into overlapping rectangular frames.

    Zero-pads ``plan.pad`` samples on each side; the result has
    (len + 2*pad - frame_len)/hop + 1 rows.
    """
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolation(f"unfold expects mono 1-D audio, got shape {x.shape}")
    n_frames = plan.num_frames(x.size)
    padded = np.pad(x, plan.pad)
    view = np.lib.stride_tricks.sliding_window_view(padded, plan.frame_len)
    return view[:: plan.hop][:n_frames].copy()


def wola_fold(frames, plan: FramePlan, out_len: int | None = None):
    """Weighted overlap-add synthesis with envelope normalization.

    Accepts [num_frames, frame_len] or batched [batch, num_frames, frame_len];
    windows each frame, overlap-adds at hop spacing, divides by the summed
    window envelope, and trims the plan's padding.
    """
    data = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    if data.ndim == 2:
        n_frames = data.shape[0]
    elif data.ndim == 3:
        n_frames = data.shape[1]
    else:
        raise ContractViolation(f"wola_fold expects 2-D or 3-D frames, got shape {data.shape}")
    if n_frames < 1:
        raise ContractViolation("wola_fold needs at least one frame")
    if data.shape[-1] != plan.frame_len:
        raise ContractViolation(f"frame length {data.shape[-1]} != plan frame_len {plan.frame_len}")
    padded_len = (n_frames - 1) * plan.hop + plan.frame_len
    if out_len is None:
        out_len = padded_len - 2 * plan.pad
    env = _envelope(plan.window, plan.hop, padded_len)
    env = np.maximum(env, 1e-12)

    if isinstance(frames, Tensor):
        return _wola_op(frames, plan, env, out_len)
    return _wola_numpy(data, plan, env, out_len)


def _wola_numpy(data: np.ndarray, plan: FramePlan, env: np.ndarray, out_len: int) -> np.ndarray:
    squeeze = data.ndim == 2
    if squeeze:
        data = data[None]
    batch, n_frames, n = data.shape
    acc = np.zeros((batch, env.size))
    win = plan.window
    for f in range(n_frames):
        start = f * plan.hop
        acc[:, start : start + n] += data[:, f] * win
    out = acc / env
    out = out[:, plan.pad : plan.pad + out_len]
    return out[0] if squeeze else out


def _wola_op(frames: Tensor, plan: FramePlan, env: np.ndarray, out_len: int) -> Tensor:
    data = _wola_numpy(frames.data, plan, env, out_len)
    win = plan.window
    hop, pad = plan.hop, plan.pad
    shape = frames.data.shape

    def bw(g):
        g2 = g if g.ndim == 2 else g[None]
        gp = np.zeros((g2.shape[0], env.size))
        gp[:, pad : pad + out_len] = g2
        gp /= env
        buf = np.empty((g2.shape[0],) + shape[-2:])
        for f in range(shape[-2]):
            start = f * hop
            buf[:, f] = gp[:, start : start + shape[-1]] * win
        accumulate(frames, buf.reshape(shape))

    return register(data, (frames,), bw)


def frame_signal(x, win_len: int, hop: int):
    """Strided framing for analysis transforms: rows start every ``hop`` samples.

    Differentiable when given a Tensor (the adjoint scatter-adds overlaps).
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim != 1:
        raise ContractViolation(f"frame_signal expects 1-D input, got {data.shape}")
    if data.size < win_len:
        raise ContractViolation(f"signal of {data.size} samples shorter than window {win_len}")
    n_frames = 1 + (data.size - win_len) // hop
    view = np.lib.stride_tricks.sliding_window_view(data, win_len)[::hop][:n_frames]
    out = view.copy()
    if not isinstance(x, Tensor):
        return out
    idx = hop * np.arange(n_frames)[:, None] + np.arange(win_len)[None, :]

    def bw(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, idx.ravel(), g.ravel())
        accumulate(x, buf)

    return register(out, (x,), bw)


# -------------------------------------------------------------- transforms

@dataclass
class Spectrum:
    """Complex bins stored as paired real planes.

    ``half`` spectra hold the N/2+1 bins of a real-input transform; their DC
    and Nyquist bins carry zero imaginary part by construction.
    """

    re: np.ndarray
    im: np.ndarray
    frame_len: int
    half: bool = True

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape:
            raise ContractViolation(f"plane shapes differ: {self.re.shape} vs {self.im.shape}")
        expect = self.frame_len // 2 + 1 if self.half else self.frame_len
        if self.re.shape[-1] != expect:
            raise ContractViolation(f"{self.re.shape[-1]} bins, expected {expect} for frame_len {self.frame_len}")

    @property
    def bins(self) -> int:
        return self.re.shape[-1]

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im


def omega(frame_len: int, half: bool = True) -> np.ndarray:
    """Angular bin frequencies 2*pi*k/N."""
    k = np.arange(frame_len // 2 + 1 if half else frame_len)
    return 2.0 * np.pi * k / frame_len


def dft(frame: np.ndarray, half: bool = True) -> Spectrum:
    x = np.asarray(frame, dtype=np.float64)
    n = x.shape[-1]
    spec = np.fft.rfft(x) if half else np.fft.fft(x)
    return Spectrum(spec.real.copy(), spec.imag.copy(), n, half=half)


def idft(spectrum: Spectrum) -> np.ndarray:
    if spectrum.half:
        re = spectrum.re.copy()
        im = spectrum.im.copy()
        im[..., 0] = 0.0
        if spectrum.frame_len % 2 == 0:
            im[..., -1] = 0.0
        return np.fft.irfft(re + 1j * im, n=spectrum.frame_len)
    return np.fft.ifft(spectrum.re + 1j * spectrum.im).real


def rfft_planes(x, n_fft: int | None = None):
    """Real-input DFT to (re, im) half-spectrum planes along the last axis.

    Differentiable when given a Tensor. ``n_fft`` zero-pads (or must equal
    the input length).
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    n_in = data.shape[-1]
    n = n_fft or n_in
    if n < n_in:
        raise ContractViolation(f"n_fft {n} smaller than input length {n_in}")
    spec = np.fft.rfft(data, n=n)
    re, im = spec.real.copy(), spec.imag.copy()
    if not isinstance(x, Tensor):
        return re, im

    def bw(g_re, g_im):
        full = np.zeros(data.shape[:-1] + (n,), dtype=np.complex128)
        full[..., : g_re.shape[-1]] = g_re + 1j * g_im
        grad = n * np.fft.ifft(full).real
        accumulate(x, grad[..., :n_in])

    return register_multi((re, im), (x,), bw)


def irfft_planes(re, im, frame_len: int):
    """Inverse of ``rfft_planes``: Hermitian-symmetric reconstruction to a real frame.

    The imaginary parts of the DC (and even-N Nyquist) bins are discarded, so
    those entries receive zero gradient.
    """
    re_t, im_t = as_tensor(re), as_tensor(im)
    bins = frame_len // 2 + 1
    if re_t.data.shape[-1] != bins or im_t.data.shape[-1] != bins:
        raise ContractViolation(
            f"plane bins {re_t.data.shape[-1]}/{im_t.data.shape[-1]} != {bins} for frame_len {frame_len}"
        )
    imz = im_t.data.copy()
    imz[..., 0] = 0.0
    even = frame_len % 2 == 0
    if even:
        imz[..., -1] = 0.0
    data = np.fft.irfft(re_t.data + 1j * imz, n=frame_len)
    if not (isinstance(re, Tensor) or isinstance(im, Tensor)):
        return data

    weights = np.full(bins, 2.0)
    weights[0] = 1.0
    if even:
        weights[-1] = 1.0

    def bw(g):
        spec = np.fft.rfft(g)
        scale = weights / frame_len
        accumulate(re_t, spec.real * scale)
        g_im = spec.imag * scale
        g_im[..., 0] = 0.0
        if even:
            g_im[..., -1] = 0.0
        accumulate(im_t, g_im)

    return register(data, (re_t, im_t), bw)


# ------------------------------------------------------------ shift, scale

def shift_scale_planes(x_re: np.ndarray, x_im: np.ndarray, scales, delays, frame_len: int):
    """Multiply a spectrum by scales * exp(-i*omega*delays), per channel.

    ``x_re``/``x_im`` are constant planes broadcastable against the
    [..., chan, bins] scales and delays; the result is differentiable with
    respect to scales and delays only.
    """
    s, d = as_tensor(scales), as_tensor(delays)
    w = omega(frame_len)
    theta = w * d.data
    cth, sth = np.cos(theta), np.sin(theta)
    out_re = s.data * (cth * x_re + sth * x_im)
    out_im = s.data * (cth * x_im - sth * x_re)
    if not (isinstance(scales, Tensor) or isinstance(delays, Tensor)):
        return out_re, out_im

    def bw(g_re, g_im):
        accumulate(s, unbroadcast((g_re * out_re + g_im * out_im) / s.data, s.data.shape))
        accumulate(d, unbroadcast(w * (g_re * out_im - g_im * out_re), d.data.shape))

    return register_multi((out_re, out_im), (s, d), bw)


def apply_shift_scale(spectrum: Spectrum, scales, delays):
    """Per-channel spectral scale and fractional-sample phase delay.

    output[c, k] = scales[c, k] * exp(-i*omega_k*delays[c, k]) * X[k].
    Scales must be strictly positive; delays finite. Returns (re, im) with a
    leading channel axis, as Tensors when the inputs are Tensors.
    """
    if not spectrum.half:
        raise ContractViolation("apply_shift_scale expects a half spectrum")
    s_data = scales.data if isinstance(scales, Tensor) else np.asarray(scales, dtype=np.float64)
    d_data = delays.data if isinstance(delays, Tensor) else np.asarray(delays, dtype=np.float64)
    try:
        np.broadcast_shapes(s_data.shape, d_data.shape)
    except ValueError as exc:
        raise ContractViolation(
            f"scale shape {s_data.shape} does not broadcast with delay shape {d_data.shape}"
        ) from exc
    if s_data.shape[-1] != spectrum.bins:
        raise ContractViolation(f"{s_data.shape[-1]} bins in scales, spectrum has {spectrum.bins}")
    if np.any(s_data <= 0.0):
        raise ContractViolation("scales must be strictly positive")
    if not np.all(np.isfinite(d_data)):
        raise DomainError("delays contain non-finite values")
    x_re = spectrum.re[..., None, :] if spectrum.re.ndim == s_data.ndim - 1 else spectrum.re
    x_im = spectrum.im[..., None, :] if spectrum.im.ndim == s_data.ndim - 1 else spectrum.im
    return shift_scale_planes(x_re, x_im, scales, delays, spectrum.frame_len)


def channel_mix(frames, weights):
    """Weighted sum over the channel axis: [..., chan, n] x [chan] -> [..., n]."""
    f = as_tensor(frames)
    w = as_tensor(weights)
    if w.data.ndim != 1 or f.data.ndim < 2 or f.data.shape[-2] != w.data.size:
        raise ContractViolation(f"channel_mix: frames {f.data.shape} vs weights {w.data.shape}")
    data = np.einsum("...cn,c->...n", f.data, w.data)
    if not (isinstance(frames, Tensor) or isinstance(weights, Tensor)):
        return data

    def bw(g):
        accumulate(f, g[..., None, :] * w.data[:, None])
        gw = np.einsum("...cn,...n->...c", f.data, g)
        accumulate(w, gw.reshape(-1, w.data.size).sum(axis=0))

    return register(data, (f, w), bw)


# ---------------------------------------------------------------- geometry

def ear_positions(offset: float = 0.09, lateral_axis: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Listener head at the origin; left ear sits on the negative lateral axis."""
    left = np.zeros(3)
    right = np.zeros(3)
    left[lateral_axis] = -offset
    right[lateral_axis] = offset
    return left, right


def geometric_delay(positions, ear, speed_of_sound: float = SPEED_OF_SOUND,
                    sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Straight-line propagation delay in (fractional) samples, one per pose.

    Distances below 1 cm are clamped: a source never physically occupies the
    ear, and the clamp protects the inverse-square magnitude division.
    """
    if speed_of_sound <= 0 or sample_rate <= 0:
        raise ContractViolation(f"c={speed_of_sound}, fs={sample_rate} must be positive")
    p = np.asarray(positions, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    dist = np.linalg.norm(p - np.asarray(ear, dtype=np.float64), axis=-1)
    clamped = dist < MIN_SOURCE_DISTANCE
    if np.any(clamped):
        log.warning("geometric_delay: %d pose(s) within 1 cm of the ear, distance clamped",
                    int(clamped.sum()))
        dist = np.maximum(dist, MIN_SOURCE_DISTANCE)
    g = dist * sample_rate / speed_of_sound
    return g[0] if single else g


# ------------------------------------------------------------------- noise

def noise_injection(frames, level, rng: np.random.Generator):
    """Add zero-mean Gaussian noise of standard deviation ``level``.

    ``level`` may be a Tensor (trainable, softplus-parameterized upstream);
    the draw itself is a constant of the provided generator, so a seeded rng
    reproduces the same noise.
    """
    shape = frames.data.shape if isinstance(frames, Tensor) else np.shape(frames)
    noise = rng.standard_normal(shape)
    if isinstance(frames, Tensor) or isinstance(level, Tensor):
        return as_tensor(frames) + as_tensor(level) * Tensor(noise)
    return np.asarray(frames, dtype=np.float64) + float(level) * noise


# -------------------------------------------------- fractional delay (FIR)

def fractional_delay_fir(x: np.ndarray, delay_samples: float, taps: int = 129) -> np.ndarray:
    """Delay a band-limited signal by a real number of samples with a windowed sinc.

    Integer part by zero-prepending, fractional part by a Blackman-windowed
    sinc interpolator normalized to unity DC gain. Output keeps the input
    length. Serves as the time-domain counterpart to spectral phase shifts.
    """
    x = np.asarray(x, dtype=np.float64)
    if delay_samples < 0:
        raise ContractViolation(f"negative delay {delay_samples}")
    if taps % 2 == 0:
        taps += 1
    whole = int(np.floor(delay_samples))
    frac = delay_samples - whole
    shifted = np.concatenate([np.zeros(whole), x])[: x.size]
    if frac == 0.0:
        return shifted
    center = (taps - 1) // 2
    h = np.sinc(np.arange(taps) - center - frac) * np.blackman(taps)
    h /= h.sum()
    return np.convolve(shifted, h, mode="full")[center : center + x.size]
