"""WAV decoding, resampling and framing.

All DSP downstream runs on mono float64 clips at ``ANALYSIS_RATE``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadFrameSpec, CorruptHeader, EmptyAudio, UnsupportedFormat

ANALYSIS_RATE = 16000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Trailing 14 bytes of the KSDATAFORMAT_SUBTYPE GUIDs are shared by PCM and float.
_GUID_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameSequence:
    """Overlapping analysis frames; the window is applied by consumers that need it."""

    frames: np.ndarray  # (n_frames, frame_len)
    sample_rate: int
    frame_len_ms: float
    hop_ms: float
    frame_len: int
    hop: int
    n_samples: int
    window: str = "hann"

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def starts(self) -> np.ndarray:
        return np.arange(len(self)) * self.hop

    @property
    def hop_s(self) -> float:
        return self.hop / self.sample_rate

    def window_values(self) -> np.ndarray:
        if self.window != "hann":
            raise ValueError(f"unknown window {self.window!r}")
        return np.hanning(self.frame_len)


# --------------------------------------------------------------------------- #
# WAV reading / writing
# --------------------------------------------------------------------------- #


@dataclass
class _WavFormat:
    format_tag: int
    channels: int
    sample_rate: int
    bits: int
    block_align: int


def _parse_fmt(body: bytes) -> _WavFormat:
    if len(body) < 16:
        raise CorruptHeader(f"fmt chunk too short ({len(body)} bytes)")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise CorruptHeader("extensible fmt chunk too short")
        sub = body[24:40]
        if sub[2:] != _GUID_TAIL:
            raise UnsupportedFormat("unknown WAVE_FORMAT_EXTENSIBLE sub-format")
        tag = struct.unpack("<H", sub[:2])[0]
    if tag not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedFormat(f"WAV format tag 0x{tag:04x} is not PCM or IEEE float")
    if channels < 1 or rate < 1:
        raise CorruptHeader(f"bad channel count {channels} or sample rate {rate}")
    if tag == WAVE_FORMAT_PCM and bits not in (8, 16, 24, 32):
        raise UnsupportedFormat(f"{bits}-bit integer PCM is not supported")
    if tag == WAVE_FORMAT_IEEE_FLOAT and bits != 32:
        raise UnsupportedFormat(f"{bits}-bit float is not supported")
    if block_align != channels * bits // 8:
        raise CorruptHeader(f"block_align {block_align} inconsistent with {channels}ch x {bits}bit")
    return _WavFormat(tag, channels, rate, bits, block_align)


def _decode(data: bytes, fmt: _WavFormat) -> np.ndarray:
    n_frames = len(data) // fmt.block_align
    data = data[: n_frames * fmt.block_align]
    if fmt.format_tag == WAVE_FORMAT_IEEE_FLOAT:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif fmt.bits == 8:
        x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif fmt.bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif fmt.bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        x = ints.astype(np.float64) / float(1 << 23)
    else:
        x = np.frombuffer(data, dtype="<i4").astype(np.float64) / float(1 << 31)
    x = x.reshape(n_frames, fmt.channels)
    mono = x[:, 0] if fmt.channels == 1 else x.mean(axis=1)
    return np.clip(mono, -1.0, 1.0)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Decode a RIFF/WAVE file to mono float64 samples at the file's own rate."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        if raw[:4] in (b"fLaC", b"OggS", b"ID3\x03", b"ID3\x04") or raw[:2] == b"\xff\xfb":
            raise UnsupportedFormat(f"{path}: compressed audio is not supported")
        raise CorruptHeader(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        size = struct.unpack("<I", raw[pos + 4 : pos + 8])[0]
        body = raw[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            data = body
            if fmt is not None:
                break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise CorruptHeader(f"{path}: no fmt chunk")
    if data is None:
        raise CorruptHeader(f"{path}: no data chunk")
    return _decode(data, fmt), fmt.sample_rate


def write_wav(path: str | Path, samples, sample_rate: int, bits: int = 16, float_format: bool = False) -> None:
    """Write mono samples in [-1, 1]; ``float_format`` stores 32-bit IEEE float."""
    x = np.asarray(samples, dtype=np.float64)
    if float_format:
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = x.astype("<f4").tobytes()
    else:
        tag = WAVE_FORMAT_PCM
        x = np.clip(x, -1.0, 1.0)
        if bits == 8:
            payload = np.clip(np.round(x * 128.0) + 128, 0, 255).astype(np.uint8).tobytes()
        elif bits == 16:
            payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        elif bits == 24:
            ints = np.clip(np.round(x * (1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int32)
            payload = ints.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
        elif bits == 32:
            ints = np.clip(np.round(x * float(1 << 31)), -(1 << 31), (1 << 31) - 1).astype("<i4")
            payload = ints.tobytes()
        else:
            raise UnsupportedFormat(f"cannot write {bits}-bit PCM")
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sample_rate, sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# --------------------------------------------------------------------------- #
# Resampling and loading
# --------------------------------------------------------------------------- #


def resample_linear(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Linear-interpolation resampler. Swappable; adequate for 16 kHz feature analysis."""
    if src_rate == dst_rate or x.size == 0:
        return np.asarray(x, dtype=np.float64).copy()
    n_out = max(1, int(round(x.size * dst_rate / src_rate)))
    t = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t, np.arange(x.size), x)


def load_audio(path: str | Path, target_rate: int = ANALYSIS_RATE, source_id: str | None = None) -> AudioClip:
    samples, rate = read_wav(path)
    if samples.size == 0:
        raise EmptyAudio(f"{path}: zero samples")
    samples = np.clip(resample_linear(samples, rate, target_rate), -1.0, 1.0)
    return AudioClip(samples, target_rate, source_id if source_id is not None else Path(path).stem)


# --------------------------------------------------------------------------- #
# Framing
# --------------------------------------------------------------------------- #


def ms_to_samples(ms: float, rate: int) -> int:
    return int(round(ms * rate / 1000.0))


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < 1:
        return 0
    return math.ceil(max(0, n_samples - frame_len) / hop) + 1


def frame_signal(clip: AudioClip, frame_len_ms: float, hop_ms: float) -> FrameSequence:
    """Split into overlapping frames; the final partial frame is zero-padded."""
    if hop_ms <= 0 or frame_len_ms <= 0 or hop_ms > frame_len_ms:
        raise BadFrameSpec(f"need frame_len_ms >= hop_ms > 0, got frame={frame_len_ms} hop={hop_ms}")
    rate = clip.sample_rate
    frame_len = ms_to_samples(frame_len_ms, rate)
    hop = ms_to_samples(hop_ms, rate)
    if hop < 1 or frame_len < hop:
        raise BadFrameSpec(f"frame spec too small for {rate} Hz")
    n = clip.n_samples
    count = frame_count(n, frame_len, hop)
    padded_len = (count - 1) * hop + frame_len if count else 0
    padded = np.zeros(padded_len)
    padded[:n] = clip.samples
    if count:
        frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[::hop][:count].copy()
    else:
        frames = np.zeros((0, frame_len))
    frames.flags.writeable = False
    return FrameSequence(frames, rate, frame_len_ms, hop_ms, frame_len, hop, n)
