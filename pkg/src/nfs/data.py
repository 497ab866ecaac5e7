"""Dataset ingestion, pose alignment, batch sampling, and synthetic ground truth.

Paired records hold mono source audio, the binaural recording, and a 120 Hz
pose track aligned to the audio. Pose files are CSV with the 8-column header
t,x,y,z,qw,qx,qy,qz; a manifest is a JSON file listing the per-record paths
and split tags.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import dsp
from .audio_io import AudioBuffer, read_wav, write_wav
from .dsp import FramePlan
from .errors import ContractViolation, IngestionError

log = logging.getLogger(__name__)

POSE_RATE = 120.0
POSE_COLUMNS = ("t", "x", "y", "z", "qw", "qx", "qy", "qz")
MAX_POSE_GAP_FRAMES = 3


@dataclass
class PoseTrack:
    """Time-stamped source positions (meters) and unit quaternions."""

    times: np.ndarray
    positions: np.ndarray
    quats: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.quats = np.asarray(self.quats, dtype=np.float64)
        n = self.times.size
        if self.positions.shape != (n, 3) or self.quats.shape != (n, 4):
            raise ContractViolation(
                f"track shapes inconsistent: t{self.times.shape} p{self.positions.shape} q{self.quats.shape}")

    def __len__(self) -> int:
        return self.times.size


@dataclass
class PairedRecord:
    mono: AudioBuffer
    binaural: AudioBuffer
    track: PoseTrack
    subject: str = ""
    session: str = ""
    geo_track: np.ndarray | None = None  # optional precomputed per-pose delay, [n] or [n, 2]

    @property
    def n_samples(self) -> int:
        return self.mono.n_samples

    @property
    def duration(self) -> float:
        return self.mono.duration


@dataclass
class TrainBatch:
    mono: np.ndarray        # [b, crop]
    target: np.ndarray      # [b, 2, crop]
    positions: np.ndarray   # [b, frames, 3]
    quats: np.ndarray       # [b, frames, 4]
    geo: np.ndarray         # [b, frames, 2]
    record_idx: np.ndarray
    offsets: np.ndarray


# ----------------------------------------------------------------- pose io

def read_pose_csv(path) -> PoseTrack:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != POSE_COLUMNS:
            raise IngestionError(f"{path}: expected header {','.join(POSE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 8:
                raise IngestionError(f"{path}:{lineno}: expected 8 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: no pose rows")
    arr = np.asarray(rows, dtype=np.float64)
    return PoseTrack(arr[:, 0], arr[:, 1:4], arr[:, 4:8])


def write_pose_csv(path, track: PoseTrack) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSE_COLUMNS)
        for t, p, q in zip(track.times, track.positions, track.quats):
            row = [float(t), *map(float, p), *map(float, q)]
            writer.writerow([repr(v) for v in row])


# ---------------------------------------------------------------- loading

def load_pair(mono_path, binaural_path, pose_path, subject: str = "",
              session: str = "", sample_rate: int = 48000) -> PairedRecord:
    """Read and validate one record; every failure names the offending file."""
    mono = read_wav(mono_path)
    binaural = read_wav(binaural_path)
    if mono.sample_rate != sample_rate:
        raise IngestionError(f"{mono_path}: sample rate {mono.sample_rate}, expected {sample_rate}")
    if binaural.sample_rate != sample_rate:
        raise IngestionError(f"{binaural_path}: sample rate {binaural.sample_rate}, expected {sample_rate}")
    if mono.channels != 1:
        raise IngestionError(f"{mono_path}: expected mono, got {mono.channels} channels")
    if binaural.channels != 2:
        raise IngestionError(f"{binaural_path}: expected stereo, got {binaural.channels} channels")
    if mono.n_samples != binaural.n_samples:
        raise IngestionError(
            f"{binaural_path}: {binaural.n_samples} samples, mono has {mono.n_samples}")
    track = read_pose_csv(pose_path)
    validate_track(track, mono.duration, str(pose_path))
    return PairedRecord(mono, binaural, track, subject=subject, session=session)


def validate_track(track: PoseTrack, duration: float, name: str) -> None:
    dt = np.diff(track.times)
    if np.any(dt <= 0.0):
        where = int(np.argmax(dt <= 0.0))
        raise IngestionError(f"{name}: non-monotone timestamps at row {where + 1}")
    gap_limit = MAX_POSE_GAP_FRAMES / POSE_RATE + 1e-9
    gaps = dt > gap_limit
    if np.any(gaps):
        where = int(np.argmax(gaps))
        raise IngestionError(
            f"{name}: pose gap of {dt[where]:.4f} s after t={track.times[where]:.4f} s "
            f"(limit {MAX_POSE_GAP_FRAMES} frames at {POSE_RATE:.0f} Hz)")
    margin = 2.0 / POSE_RATE
    if track.times[0] > margin or track.times[-1] < duration - margin - 1.0 / POSE_RATE:
        raise IngestionError(
            f"{name}: track [{track.times[0]:.3f}, {track.times[-1]:.3f}] s "
            f"does not cover the {duration:.3f} s audio span")
    norms = np.linalg.norm(track.quats, axis=1)
    bad = np.abs(norms - 1.0) > 1e-3
    if np.any(bad):
        where = int(np.argmax(bad))
        raise IngestionError(
            f"{name}: quaternion norm {norms[where]:.4f} at row {where + 1} (beyond 1e-3 of unit)")
    track.quats /= norms[:, None]


# --------------------------------------------------------------- alignment

def frame_center_times(n_samples: int, plan: FramePlan, sample_rate: int) -> np.ndarray:
    """Center time of every frame the plan slices out of an n-sample signal."""
    n_frames = plan.num_frames(n_samples)
    starts = np.arange(n_frames) * plan.hop - plan.pad
    return (starts + plan.frame_len / 2.0) / sample_rate


def poses_for_frames(track: PoseTrack, plan: FramePlan, n_samples: int,
                     sample_rate: int, offset_s: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Pose at each frame's center time: linear positions, normalized-lerp quaternions.

    Centers outside the track clamp to the nearest endpoint (logged once).
    ``offset_s`` shifts the frame centers, for crops taken mid-record.
    """
    centers = frame_center_times(n_samples, plan, sample_rate) + offset_s
    t = track.times
    if centers[0] < t[0] - 1e-9 or centers[-1] > t[-1] + 1e-9:
        log.warning("poses_for_frames: %d frame center(s) outside the track, clamped",
                    int(np.sum((centers < t[0]) | (centers > t[-1]))))
    centers = np.clip(centers, t[0], t[-1])
    hi = np.searchsorted(t, centers, side="right")
    hi = np.clip(hi, 1, t.size - 1)
    lo = hi - 1
    span = t[hi] - t[lo]
    u = np.where(span > 0, (centers - t[lo]) / np.where(span > 0, span, 1.0), 0.0)
    positions = track.positions[lo] * (1.0 - u[:, None]) + track.positions[hi] * u[:, None]
    q0 = track.quats[lo]
    q1 = track.quats[hi]
    flip = np.sum(q0 * q1, axis=1) < 0.0
    q1 = np.where(flip[:, None], -q1, q1)
    quats = q0 * (1.0 - u[:, None]) + q1 * u[:, None]
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return positions, quats


def interp_geo_track(record: PairedRecord, plan: FramePlan, n_samples: int,
                     sample_rate: int, offset_s: float = 0.0) -> np.ndarray | None:
    """Frame-center interpolation of a precomputed delay track, when present."""
    if record.geo_track is None:
        return None
    geo = np.asarray(record.geo_track, dtype=np.float64)
    if geo.ndim == 1:
        geo = np.stack([geo, geo], axis=-1)
    if geo.shape[0] != len(record.track):
        raise IngestionError(
            f"delay track has {geo.shape[0]} rows, pose track has {len(record.track)}")
    centers = frame_center_times(n_samples, plan, sample_rate) + offset_s
    t = record.track.times
    centers = np.clip(centers, t[0], t[-1])
    return np.stack([np.interp(centers, t, geo[:, 0]), np.interp(centers, t, geo[:, 1])], axis=-1)


# ---------------------------------------------------------------- sampling

def sample_batch(records: list[PairedRecord], rng: np.random.Generator,
                 batch: int, crop_ms: float, plan: FramePlan,
                 geo_fn=None) -> TrainBatch:
    """Uniformly sample records and offsets; returns aligned crops and poses.

    ``geo_fn(positions) -> [frames, 2]`` supplies per-ear delays (the model's
    geometry); records carrying a precomputed delay track override it.
    Records shorter than the crop are skipped with a warning.
    """
    sample_rate = records[0].mono.sample_rate
    crop = int(round(crop_ms * sample_rate / 1000.0))
    usable = [i for i, r in enumerate(records) if r.n_samples >= crop]
    skipped = len(records) - len(usable)
    if skipped:
        log.warning("sample_batch: skipped %d record(s) shorter than %d ms", skipped, crop_ms)
    if not usable:
        raise ContractViolation(f"no record is at least {crop_ms} ms long")
    n_frames = plan.num_frames(crop)
    mono = np.empty((batch, crop))
    target = np.empty((batch, 2, crop))
    positions = np.empty((batch, n_frames, 3))
    quats = np.empty((batch, n_frames, 4))
    geo = np.zeros((batch, n_frames, 2))
    idx = np.empty(batch, dtype=np.int64)
    offs = np.empty(batch, dtype=np.int64)
    for b in range(batch):
        ri = usable[int(rng.integers(len(usable)))]
        rec = records[ri]
        off = int(rng.integers(rec.n_samples - crop + 1))
        idx[b], offs[b] = ri, off
        mono[b] = rec.mono.mono()[off : off + crop]
        target[b] = rec.binaural.data[:, off : off + crop]
        offset_s = off / sample_rate
        p, q = poses_for_frames(rec.track, plan, crop, sample_rate, offset_s)
        positions[b], quats[b] = p, q
        pre = interp_geo_track(rec, plan, crop, sample_rate, offset_s)
        if pre is not None:
            geo[b] = pre
        elif geo_fn is not None:
            geo[b] = geo_fn(p)
    return TrainBatch(mono, target, positions, quats, geo, idx, offs)


# ---------------------------------------------------------------- manifest

@dataclass
class ManifestEntry:
    mono: str
    binaural: str
    poses: str
    split: str = "train"
    subject: str = ""
    session: str = ""


def load_manifest(path) -> list[ManifestEntry]:
    with open(path) as fh:
        doc = json.load(fh)
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    for rec in doc["records"]:
        entry = ManifestEntry(
            mono=rec["mono"], binaural=rec["binaural"], poses=rec["poses"],
            split=rec.get("split", "train"), subject=rec.get("subject", ""),
            session=rec.get("session", ""),
        )
        for attr in ("mono", "binaural", "poses"):
            p = getattr(entry, attr)
            if not os.path.isabs(p):
                setattr(entry, attr, os.path.join(root, p))
        entries.append(entry)
    return entries


def save_manifest(path, entries: list[ManifestEntry]) -> None:
    doc = {"records": [
        {"mono": e.mono, "binaural": e.binaural, "poses": e.poses,
         "split": e.split, "subject": e.subject, "session": e.session}
        for e in entries
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_records(entries: list[ManifestEntry], split: str | None = None) -> list[PairedRecord]:
    out = []
    for e in entries:
        if split is not None and e.split != split:
            continue
        out.append(load_pair(e.mono, e.binaural, e.poses, subject=e.subject, session=e.session))
    return out


def write_record(directory, stem: str, record: PairedRecord,
                 encoding: str = "float32", split: str = "train") -> ManifestEntry:
    os.makedirs(directory, exist_ok=True)
    mono_path = os.path.join(directory, f"{stem}_mono.wav")
    bin_path = os.path.join(directory, f"{stem}_binaural.wav")
    pose_path = os.path.join(directory, f"{stem}_poses.csv")
    write_wav(mono_path, record.mono, encoding)
    write_wav(bin_path, record.binaural, encoding)
    write_pose_csv(pose_path, record.track)
    return ManifestEntry(mono_path, bin_path, pose_path, split=split,
                         subject=record.subject, session=record.session)


# --------------------------------------------------------------- synthesis

@dataclass
class SynthSpec:
    """Ground-truth generator: static or linearly moving source, analytic targets.

    Per ear the binaural target is the mono signal delayed by distance/c via a
    windowed-sinc interpolator and scaled by ear_gain/distance**2.
    """

    duration: float = 10.0
    sample_rate: int = 48000
    position: tuple = (1.0, -0.5, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    ear_gains: tuple = (1.0, 1.0)
    ear_offset: float = 0.09
    lateral_axis: int = 1
    speed_of_sound: float = dsp.SPEED_OF_SOUND
    kind: str = "speech_noise"  # or "tone_complex" / "white_noise"
    rms: float = 0.1
    subject: str = "synth"


def _speech_shaped_noise(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    """White noise shaped to a speech-like spectrum: flat to 500 Hz, -6 dB/oct above."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = np.ones_like(f)
    knee = 500.0
    hi = f > knee
    shape[hi] = knee / f[hi]
    shape[f < 80.0] = 0.0
    shape[f > 10000.0] = 0.0
    return np.fft.irfft(spec * shape, n=n)


def _tone_complex(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    f0 = float(rng.uniform(150.0, 320.0))
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    for k in range(1, 9):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += np.sin(2.0 * np.pi * f0 * k * t + phase) / k
    return out


def synth_dataset(spec: SynthSpec, rng: np.random.Generator,
                  n_records: int = 1) -> list[PairedRecord]:
    """Analytic mono/binaural pairs with matching 120 Hz pose tracks."""
    out = []
    for i in range(n_records):
        n = int(round(spec.duration * spec.sample_rate))
        if spec.kind == "speech_noise":
            mono = _speech_shaped_noise(rng, n, spec.sample_rate)
        elif spec.kind == "tone_complex":
            mono = _tone_complex(rng, n, spec.sample_rate)
        elif spec.kind == "white_noise":
            mono = rng.standard_normal(n)
        else:
            raise ContractViolation(f"unknown synth kind '{spec.kind}'")
        mono *= spec.rms / max(np.sqrt(np.mean(mono**2)), 1e-12)

        n_poses = int(np.floor(spec.duration * POSE_RATE)) + 1
        times = np.arange(n_poses) / POSE_RATE
        pos0 = np.asarray(spec.position, dtype=np.float64)
        vel = np.asarray(spec.velocity, dtype=np.float64)
        positions = pos0[None, :] + times[:, None] * vel[None, :]
        quats = np.zeros((n_poses, 4))
        quats[:, 0] = 1.0
        track = PoseTrack(times, positions, quats)

        left, right = dsp.ear_positions(spec.ear_offset, spec.lateral_axis)
        if np.any(vel != 0.0):
            # Piecewise render: per pose sample, delay/gain of the segment midpoint.
            target = _moving_target(mono, track, (left, right), spec)
        else:
            target = np.empty((2, n))
            for e, ear in enumerate((left, right)):
                dist = max(float(np.linalg.norm(pos0 - ear)), dsp.MIN_SOURCE_DISTANCE)
                delay = dist * spec.sample_rate / spec.speed_of_sound
                gain = spec.ear_gains[e] / dist**2
                target[e] = gain * dsp.fractional_delay_fir(mono, delay)
        out.append(PairedRecord(
            AudioBuffer(mono[None, :], spec.sample_rate),
            AudioBuffer(target, spec.sample_rate),
            track, subject=spec.subject, session=f"synth{i}",
        ))
    return out


def _moving_target(mono: np.ndarray, track: PoseTrack, ears, spec: SynthSpec) -> np.ndarray:
    n = mono.size
    seg = int(round(spec.sample_rate / POSE_RATE))
    target = np.zeros((2, n))
    for e, ear in enumerate(ears):
        dists = np.maximum(np.linalg.norm(track.positions - ear, axis=1), dsp.MIN_SOURCE_DISTANCE)
        delays = dists * spec.sample_rate / spec.speed_of_sound
        gains = spec.ear_gains[e] / dists**2
        margin = int(np.ceil(delays.max())) + 256
        for s in range(len(track)):
            a = s * seg
            if a >= n:
                break
            b = min(a + seg, n)
            lo = max(a - margin, 0)
            shifted = dsp.fractional_delay_fir(mono[lo:b], float(delays[s]))
            target[e, a:b] = gains[s] * shifted[a - lo : b - lo]
    return target
