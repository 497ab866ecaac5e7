import numpy as np
import pytest

from nfs import dsp
from nfs.dsp import FramePlan, Spectrum
from nfs.errors import ContractViolation
from nfs.gradcore import Tensor, grad_check, ops
from oracles import direct_overlap_add, naive_dft


@pytest.fixture
def plan48k():
    return FramePlan(frame_len=9600, hop=4800, pad=4800)


# ------------------------------------------------------------------ unfold

def test_unfold_800ms_gives_nine_frames(plan48k):
    x = np.random.default_rng(0).standard_normal(38400)
    frames = dsp.unfold(x, plan48k)
    assert frames.shape == (9, 9600)


def test_unfold_small_example():
    plan = FramePlan(frame_len=4, hop=2, pad=0, window=np.ones(4))
    frames = dsp.unfold(np.arange(10.0), plan)
    assert frames.shape == (4, 4)
    assert np.array_equal(frames[0], [0, 1, 2, 3])
    assert np.array_equal(frames[-1], [6, 7, 8, 9])


def test_unfold_constant_ones_pads_with_zeros():
    plan = FramePlan(frame_len=8, hop=4, pad=4)
    frames = dsp.unfold(np.ones(16), plan)
    assert np.array_equal(frames[0], np.r_[np.zeros(4), np.ones(4)])
    assert np.all(frames[1:-1] == 1.0)
    assert np.array_equal(frames[-1], np.r_[np.ones(4), np.zeros(4)])


def test_unfold_too_short_raises():
    plan = FramePlan(frame_len=8, hop=4, pad=0)
    with pytest.raises(ContractViolation):
        dsp.unfold(np.ones(4), plan)


def test_unfold_rejects_nontiling_length():
    plan = FramePlan(frame_len=8, hop=4, pad=0)
    with pytest.raises(ContractViolation):
        dsp.unfold(np.ones(13), plan)
    assert plan.fit_length(13) == 16


# --------------------------------------------------------------- transform

def test_dft_impulse_flat():
    spec = dsp.dft(np.array([1.0, 0.0, 0.0, 0.0]), half=False)
    assert np.allclose(spec.to_complex(), np.ones(4))


def test_dft_dc_only():
    spec = dsp.dft(np.ones(4), half=False)
    assert np.allclose(spec.to_complex(), [4, 0, 0, 0])


@pytest.mark.parametrize("n", [5, 8, 16, 33, 64])
def test_dft_matches_naive_oracle(n):
    x = np.random.default_rng(n).standard_normal(n)
    ours = dsp.dft(x, half=False).to_complex()
    assert np.allclose(ours, naive_dft(x), atol=1e-9)
    half = dsp.dft(x, half=True).to_complex()
    assert np.allclose(half, naive_dft(x)[: n // 2 + 1], atol=1e-9)


def test_idft_roundtrip_long_frame():
    x = np.random.default_rng(1).standard_normal(9600)
    back = dsp.idft(dsp.dft(x))
    assert np.linalg.norm(back - x) <= 1e-9 * np.linalg.norm(x)


def test_half_spectrum_hermitian_bins():
    x = np.random.default_rng(2).standard_normal(64)
    spec = dsp.dft(x)
    assert spec.im[0] == 0.0 and spec.im[-1] == 0.0


def test_parseval():
    rng = np.random.default_rng(3)
    for n in (16, 64, 256):
        x = rng.standard_normal(n)
        spec = dsp.dft(x, half=False).to_complex()
        lhs = np.sum(x * x)
        rhs = np.sum(np.abs(spec) ** 2) / n
        assert abs(lhs - rhs) <= 1e-9 * abs(lhs)


# ------------------------------------------------------------- shift-scale

def test_integer_shift_is_circular_shift():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    spec = dsp.dft(x)
    re, im = dsp.apply_shift_scale(spec, np.ones((1, 3)), np.ones((1, 3)))
    out = dsp.idft(Spectrum(re, im, 4))
    assert np.allclose(out[0], [4.0, 1.0, 2.0, 3.0], atol=1e-12)


def test_phase_factor_quarter_turn():
    w = dsp.omega(4)
    factor = np.exp(-1j * w[1] * 1.0)
    assert factor == pytest.approx(-1j, abs=1e-12)


@pytest.mark.parametrize("n", [8, 64])
def test_shift_theorem_all_integer_shifts(n):
    x = np.random.default_rng(n).standard_normal(n)
    spec = dsp.dft(x)
    for delta in range(n):
        re, im = dsp.apply_shift_scale(spec, np.ones((1, n // 2 + 1)),
                                       np.full((1, n // 2 + 1), float(delta)))
        out = dsp.idft(Spectrum(re, im, n))[0]
        ref = np.roll(x, delta)
        assert np.linalg.norm(out - ref) <= 1e-9 * np.linalg.norm(ref)


def _bandlimited(n, rng, cutoff=0.35):
    spec = np.fft.rfft(rng.standard_normal(n))
    k = np.arange(spec.size)
    spec[k > cutoff * spec.size] = 0.0
    return np.fft.irfft(spec, n=n)


@pytest.mark.parametrize("delay", [0.5, 17.25])
def test_fractional_shift_matches_windowed_sinc(delay):
    n = 4096
    x = _bandlimited(n, np.random.default_rng(5))
    spec = dsp.dft(x)
    bins = n // 2 + 1
    re, im = dsp.apply_shift_scale(spec, np.ones((1, bins)), np.full((1, bins), delay))
    ours = dsp.idft(Spectrum(re, im, n))[0]
    oracle = dsp.fractional_delay_fir(x, delay, taps=129)
    lo, hi = 200, n - 200
    err = np.linalg.norm(ours[lo:hi] - oracle[lo:hi]) / np.linalg.norm(oracle[lo:hi])
    assert err < 1e-3


def test_shift_scale_linear_in_spectrum():
    n = 64
    rng = np.random.default_rng(6)
    xa, xb = rng.standard_normal(n), rng.standard_normal(n)
    scales = rng.uniform(0.5, 2.0, (3, n // 2 + 1))
    delays = rng.uniform(0.0, 8.0, (3, n // 2 + 1))

    def apply(x):
        re, im = dsp.apply_shift_scale(dsp.dft(x), scales, delays)
        return re + 1j * im

    mixed = apply(2.0 * xa + 3.0 * xb)
    assert np.allclose(mixed, 2.0 * apply(xa) + 3.0 * apply(xb), atol=1e-9)


def test_shift_scale_rejects_nonpositive_scale():
    spec = dsp.dft(np.ones(8))
    bad = np.ones((1, 5))
    bad[0, 2] = -0.1
    with pytest.raises(ContractViolation):
        dsp.apply_shift_scale(spec, bad, np.zeros((1, 5)))


def test_shift_scale_differentiable():
    n = 16
    rng = np.random.default_rng(7)
    spec = dsp.dft(rng.standard_normal(n))
    scales = Tensor(rng.uniform(0.5, 2.0, (2, n // 2 + 1)), requires_grad=True)
    delays = Tensor(rng.uniform(0.0, 4.0, (2, n // 2 + 1)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, n // 2 + 1)))

    def fn():
        re, im = dsp.apply_shift_scale(spec, scales, delays)
        return ops.reduce_sum(re * w) + ops.reduce_sum(im * w * 0.5)

    worst, _ = grad_check(fn, {"scales": scales, "delays": delays})
    assert worst < 1e-4


# ---------------------------------------------------------------- geometry

def test_geometric_delay_arithmetic():
    assert dsp.geometric_delay(np.array([1.715, 0, 0]), np.zeros(3), 343.0, 48000) \
        == pytest.approx(240.0, abs=1e-9)
    assert dsp.geometric_delay(np.array([0, 0, 3.43]), np.zeros(3), 343.0, 48000) \
        == pytest.approx(480.0, abs=1e-9)


def test_left_source_reaches_left_ear_first():
    left, right = dsp.ear_positions()
    rng = np.random.default_rng(8)
    for _ in range(50):
        pos = rng.uniform(-3, 3, size=3)
        pos[1] = -abs(pos[1]) - 1e-3
        gl = dsp.geometric_delay(pos, left)
        gr = dsp.geometric_delay(pos, right)
        assert gl < gr


def test_delay_rotation_invariant_and_linear_in_distance():
    rng = np.random.default_rng(9)
    pos = rng.uniform(-2, 2, size=3)
    ear = rng.uniform(-0.1, 0.1, size=3)
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta), 0],
                    [np.sin(theta), np.cos(theta), 0],
                    [0, 0, 1.0]])
    g1 = dsp.geometric_delay(pos, ear)
    g2 = dsp.geometric_delay(rot @ pos, rot @ ear)
    assert g1 == pytest.approx(g2, rel=1e-12)
    far = ear + 3.0 * (pos - ear)
    assert dsp.geometric_delay(far, ear) == pytest.approx(3.0 * g1, rel=1e-12)


def test_zero_distance_clamped():
    ear = np.array([0.0, 0.09, 0.0])
    g = dsp.geometric_delay(ear, ear)
    assert g == pytest.approx(0.01 * 48000 / 343.0, rel=1e-12)


def test_bad_constants_rejected():
    with pytest.raises(ContractViolation):
        dsp.geometric_delay(np.ones(3), np.zeros(3), speed_of_sound=0.0)


# -------------------------------------------------------------------- wola

def test_wola_reconstructs_unfold(plan48k):
    x = np.random.default_rng(10).standard_normal(38400)
    out = dsp.wola_fold(dsp.unfold(x, plan48k), plan48k)
    assert np.linalg.norm(out - x) <= 1e-6 * np.linalg.norm(x)


def test_wola_matches_direct_overlap_add_oracle():
    plan = FramePlan(frame_len=32, hop=16, pad=16)
    frames = np.random.default_rng(11).standard_normal((5, 32))
    ours = dsp.wola_fold(frames, plan)
    ref = direct_overlap_add(frames, plan.window, 16, 16, ours.size)
    assert np.allclose(ours, ref, atol=1e-12)


def test_wola_single_rect_frame_is_identity():
    plan = FramePlan(frame_len=8, hop=8, pad=0, window=np.ones(8))
    frame = np.arange(8.0)[None, :]
    assert np.allclose(dsp.wola_fold(frame, plan), frame[0])


def test_wola_zero_frames_zero_audio(plan48k):
    out = dsp.wola_fold(np.zeros((9, 9600)), plan48k)
    assert np.all(out == 0.0)


def test_wola_needs_frames(plan48k):
    with pytest.raises(ContractViolation):
        dsp.wola_fold(np.zeros((0, 9600)), plan48k)


def test_cola_violation_rejected_at_construction():
    with pytest.raises(ContractViolation):
        FramePlan(frame_len=64, hop=32, pad=0, window=np.hanning(64))  # symmetric Hann


def test_wola_differentiable():
    plan = FramePlan(frame_len=16, hop=8, pad=8)
    frames = Tensor(np.random.default_rng(12).standard_normal((4, 16)), requires_grad=True)
    out_len = (4 - 1) * plan.hop + plan.frame_len - 2 * plan.pad
    w = Tensor(np.random.default_rng(13).standard_normal(out_len))

    def fn():
        return ops.reduce_sum(dsp.wola_fold(frames, plan) * w)

    worst, _ = grad_check(fn, {"frames": frames})
    assert worst < 1e-4


def test_frame_signal_differentiable():
    x = Tensor(np.random.default_rng(14).standard_normal(64), requires_grad=True)
    w = Tensor(np.random.default_rng(15).standard_normal((5, 16)))

    def fn():
        return ops.reduce_sum(dsp.frame_signal(x, 16, 12) * w)

    worst, _ = grad_check(fn, {"x": x})
    assert worst < 1e-4


def test_fft_planes_differentiable():
    rng = np.random.default_rng(16)
    x = Tensor(rng.standard_normal((3, 12)), requires_grad=True)
    wr = Tensor(rng.standard_normal((3, 9)))
    wi = Tensor(rng.standard_normal((3, 9)))

    def fwd():
        re, im = dsp.rfft_planes(x, n_fft=16)
        return ops.reduce_sum(re * wr) + ops.reduce_sum(im * wi)

    worst, _ = grad_check(fwd, {"x": x})
    assert worst < 1e-4

    re0 = Tensor(rng.standard_normal((3, 9)), requires_grad=True)
    im0 = Tensor(rng.standard_normal((3, 9)), requires_grad=True)
    wt = Tensor(rng.standard_normal((3, 16)))

    def inv():
        return ops.reduce_sum(dsp.irfft_planes(re0, im0, 16) * wt)

    worst, _ = grad_check(inv, {"re": re0, "im": im0})
    assert worst < 1e-4


def test_channel_mix_matches_manual_and_differentiable():
    rng = np.random.default_rng(17)
    frames = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True)
    weights = Tensor(rng.uniform(0.1, 1.0, 3), requires_grad=True)
    out = dsp.channel_mix(frames, weights)
    ref = np.einsum("fcn,c->fn", frames.data, weights.data)
    assert np.allclose(out.data, ref)
    w = Tensor(rng.standard_normal((2, 8)))
    worst, _ = grad_check(lambda: ops.reduce_sum(dsp.channel_mix(frames, weights) * w),
                          {"frames": frames, "weights": weights})
    assert worst < 1e-4


# ------------------------------------------------------------------- noise

def test_noise_level_zero_is_identity():
    frames = np.ones((3, 8))
    out = dsp.noise_injection(frames, 0.0, np.random.default_rng(0))
    assert np.array_equal(out, frames)


def test_noise_std_matches_level():
    out = dsp.noise_injection(np.zeros(10**6), 0.01, np.random.default_rng(1))
    assert abs(out.std() - 0.01) < 0.05 * 0.01


def test_noise_same_seed_identical():
    a = dsp.noise_injection(np.zeros(100), 0.5, np.random.default_rng(7))
    b = dsp.noise_injection(np.zeros(100), 0.5, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_fractional_delay_fir_integer_case():
    x = np.random.default_rng(18).standard_normal(256)
    out = dsp.fractional_delay_fir(x, 3.0)
    assert np.allclose(out[3:], x[:-3])
    assert np.allclose(out[:3], 0.0)
