"""WAV files and the in-memory audio buffer.

Supports PCM 16/24-bit and IEEE float32, mono or stereo. Samples are held as
float64 in [-1, 1); integer formats scale by 2**(bits-1) so a read/write
round trip at matching bit depth is lossless.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, IngestionError


@dataclass
class AudioBuffer:
    """Per-channel double-precision samples at a fixed rate. data is [channels, n]."""

    data: np.ndarray
    sample_rate: int = 48000

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] not in (1, 2):
            raise ContractViolation(f"audio must be [1|2, n], got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("audio contains non-finite samples")
        self.data = arr

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def mono(self) -> np.ndarray:
        if self.channels != 1:
            raise ContractViolation(f"expected mono audio, got {self.channels} channels")
        return self.data[0]


_FMT_PCM = 1
_FMT_FLOAT = 3


def read_wav(path) -> AudioBuffer:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise IngestionError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise IngestionError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format == 0xFFFE:
        audio_format = _FMT_FLOAT if bits == 32 else _FMT_PCM
    if channels not in (1, 2):
        raise IngestionError(f"{path}: {channels} channels unsupported")
    n = len(data) // block_align
    if audio_format == _FMT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2", count=n * channels).astype(np.float64) / 32768.0
    elif audio_format == _FMT_PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8, count=n * channels * 3).reshape(-1, 3).astype(np.int64)
        vals = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        vals -= (vals & 0x800000) << 1
        samples = vals.astype(np.float64) / 8388608.0
    elif audio_format == _FMT_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4", count=n * channels).astype(np.float64)
    else:
        raise IngestionError(f"{path}: unsupported format (format={audio_format}, bits={bits})")
    frames = samples.reshape(-1, channels).T
    return AudioBuffer(np.ascontiguousarray(frames), sample_rate=rate)


def write_wav(path, buf: AudioBuffer, encoding: str = "pcm16") -> None:
    """Write atomically: the file appears complete or not at all."""
    inter = np.ascontiguousarray(buf.data.T)
    if encoding == "pcm16":
        scaled = np.clip(np.round(inter * 32768.0), -32768, 32767).astype("<i2")
        payload = scaled.tobytes()
        audio_format, bits = _FMT_PCM, 16
    elif encoding == "pcm24":
        vals = np.clip(np.round(inter * 8388608.0), -8388608, 8388607).astype(np.int64)
        vals = (vals & 0xFFFFFF).astype(np.uint32)
        b = np.empty(vals.shape + (3,), dtype=np.uint8)
        b[..., 0] = vals & 0xFF
        b[..., 1] = (vals >> 8) & 0xFF
        b[..., 2] = (vals >> 16) & 0xFF
        payload = b.tobytes()
        audio_format, bits = _FMT_PCM, 24
    elif encoding == "float32":
        payload = inter.astype("<f4").tobytes()
        audio_format, bits = _FMT_FLOAT, 32
    else:
        raise ContractViolation(f"unknown encoding '{encoding}'")
    channels = buf.channels
    block_align = channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16,
        audio_format, channels, buf.sample_rate,
        buf.sample_rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)
