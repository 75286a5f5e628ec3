"""Paralinguistic feature extraction: pitch, rates, loudness and voice quality.

Every function here is pure. Thresholds live in :class:`DSPConfig` so that
experiments can change them from a config file without touching code.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, FrameSequence, frame_signal
from .errors import ConfigError, EmptyAudio

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

FEATURES = (
    "pitch",
    "speech_rate",
    "volume",
    "jitter",
    "shimmer",
    "intensity",
    "articulation_rate",
)

# Profile field carrying each feature's continuous value.
PROFILE_FIELDS = {
    "pitch": "pitch_hz",
    "speech_rate": "speech_rate_sps",
    "volume": "volume_db",
    "jitter": "jitter_ratio",
    "shimmer": "shimmer_ratio",
    "intensity": "intensity_db",
    "articulation_rate": "articulation_rate_sps",
}

DB_FLOOR = -96.0


@dataclass(frozen=True)
class DSPConfig:
    frame_ms: float = 25.0
    pitch_frame_ms: float = 40.0
    hop_ms: float = 10.0
    f0_min: float = 60.0
    f0_max: float = 500.0
    voicing_threshold: float = 0.45
    # A shorter-lag correlation peak within this fraction of the best one wins (octave guard).
    octave_ratio: float = 0.9
    # Adjacent voiced frames whose f0 differs by more than this ratio start a new run.
    pitch_jump_ratio: float = 1.25
    vad_relative_db: float = 25.0
    vad_floor_db: float = -60.0
    vad_gap_ms: float = 100.0
    nucleus_smooth_ms: float = 50.0
    nucleus_median_margin_db: float = 2.0
    nucleus_dip_db: float = 2.0
    db_floor: float = DB_FLOOR

    def __post_init__(self):
        if not 0 < self.f0_min < self.f0_max:
            raise ConfigError(f"need 0 < f0_min < f0_max, got {self.f0_min}, {self.f0_max}")
        if not 0 < self.hop_ms <= min(self.frame_ms, self.pitch_frame_ms):
            raise ConfigError("hop_ms must be positive and no longer than either frame length")

    @classmethod
    def from_mapping(cls, data: dict) -> "DSPConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown DSP config keys: {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in data.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad DSP config value: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "DSPConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_mapping(data.get("dsp", data))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class F0Track:
    voiced: np.ndarray  # bool per frame
    f0_hz: np.ndarray  # NaN where unvoiced
    strength: np.ndarray  # normalized correlation at the chosen lag
    starts: np.ndarray  # frame start offsets (samples)
    frame_len: int
    sample_rate: int

    @property
    def voiced_count(self) -> int:
        return int(self.voiced.sum())


@dataclass(frozen=True)
class PeriodSequence:
    boundaries: np.ndarray  # seconds, strictly increasing within a run
    periods: np.ndarray  # seconds
    amplitudes: np.ndarray  # per-cycle peak |x|
    run_ids: np.ndarray  # per-period run index; consecutive comparisons stay inside a run

    @classmethod
    def empty(cls) -> "PeriodSequence":
        z = np.zeros(0)
        return cls(z, z, z, np.zeros(0, dtype=int))

    @classmethod
    def from_periods(cls, periods, amplitudes=None) -> "PeriodSequence":
        """Single-run sequence from explicit periods (seconds); amplitudes default to 1."""
        p = np.asarray(periods, dtype=float)
        a = np.ones_like(p) if amplitudes is None else np.asarray(amplitudes, dtype=float)
        if a.shape != p.shape:
            raise ValueError("periods and amplitudes differ in length")
        b = np.concatenate([[0.0], np.cumsum(p)]) if p.size else np.zeros(0)
        return cls(b, p, a, np.zeros(p.size, dtype=int))

    def __len__(self) -> int:
        return int(self.periods.size)


@dataclass(frozen=True)
class VadMask:
    speech: np.ndarray  # bool per frame
    hop_s: float
    frame_db: np.ndarray

    @property
    def speech_time_s(self) -> float:
        return float(self.speech.sum()) * self.hop_s


@dataclass(frozen=True)
class AcousticProfile:
    pitch_hz: float
    speech_rate_sps: float
    volume_db: float
    jitter_ratio: float
    shimmer_ratio: float
    intensity_db: float
    articulation_rate_sps: float
    syllable_count: int = 0
    voiced_frame_count: int = 0
    speech_time_s: float = 0.0
    duration_s: float = 0.0

    def value(self, feature: str) -> float:
        return getattr(self, PROFILE_FIELDS[feature])

    def to_dict(self) -> dict:
        """The seven feature values, keyed by profile field name."""
        return {PROFILE_FIELDS[f]: self.value(f) for f in FEATURES}

    def audit(self) -> dict:
        return {
            "syllable_count": self.syllable_count,
            "voiced_frame_count": self.voiced_frame_count,
            "speech_time_s": self.speech_time_s,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AcousticProfile":
        names = [f.name for f in fields(cls)]
        return cls(**{k: data[k] for k in names if k in data})

    @property
    def is_silent(self) -> bool:
        """No speech frames at all: the sentinel profile."""
        return self.speech_time_s == 0.0


# --------------------------------------------------------------------------- #
# helpers
# --------------------------------------------------------------------------- #


def _to_db(rms, floor: float = DB_FLOOR):
    rms = np.asarray(rms, dtype=float)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(rms)
    return np.maximum(db, floor)


def frame_rms(frames: FrameSequence) -> np.ndarray:
    return np.sqrt(np.mean(frames.frames**2, axis=1)) if len(frames) else np.zeros(0)


def _parabolic(y_left: float, y_mid: float, y_right: float) -> tuple[float, float]:
    """Vertex offset in [-0.5, 0.5] and height of the parabola through three points."""
    denom = y_left - 2.0 * y_mid + y_right
    if denom >= 0:
        return 0.0, y_mid
    off = 0.5 * (y_left - y_right) / denom
    off = min(max(off, -0.5), 0.5)
    return off, y_mid - 0.25 * (y_left - y_right) * off


# --------------------------------------------------------------------------- #
# pitch
# --------------------------------------------------------------------------- #


def _nccf(frames: np.ndarray, lag_lo: int, lag_hi: int) -> np.ndarray:
    """Normalized cross-correlation x[n]·x[n+k] over the overlap, lags lag_lo..lag_hi."""
    n_frames, length = frames.shape
    x = frames - frames.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * length - 1).bit_length()
    spec = np.fft.rfft(x, nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : lag_hi + 1]
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(x**2, axis=1)], axis=1)
    lags = np.arange(lag_lo, lag_hi + 1)
    e_head = csum[:, length - lags]  # sum x[0 : L-k]^2
    e_tail = csum[:, [length]] - csum[:, lags]  # sum x[k : L]^2
    denom = np.sqrt(e_head * e_tail)
    num = acf[:, lags]
    out = np.zeros_like(num)
    ok = denom > 1e-12 * length
    out[ok] = num[ok] / denom[ok]
    return out


def estimate_f0_track(
    frames: FrameSequence,
    f0_min: float = 60.0,
    f0_max: float = 500.0,
    voicing_threshold: float = 0.45,
    octave_ratio: float = 0.9,
) -> F0Track:
    """Per-frame F0 by normalized autocorrelation with parabolic peak refinement."""
    if not 0 < f0_min < f0_max:
        raise ValueError("need 0 < f0_min < f0_max")
    rate = frames.sample_rate
    n = len(frames)
    voiced = np.zeros(n, dtype=bool)
    f0 = np.full(n, np.nan)
    strength = np.zeros(n)
    track = lambda: F0Track(voiced, f0, strength, frames.starts, frames.frame_len, rate)  # noqa: E731
    lag_min = max(2, int(math.floor(rate / f0_max)))
    lag_max = min(int(math.ceil(rate / f0_min)), frames.frame_len - 2)
    if n == 0 or lag_max <= lag_min:
        return track()

    # one extra lag each side so interior local maxima can be refined
    r = _nccf(frames.frames, lag_min - 1, lag_max + 1)
    for i in range(n):
        ri = r[i]
        mid = ri[1:-1]
        is_peak = (mid >= ri[:-2]) & (mid > ri[2:])
        cand = np.flatnonzero(is_peak)
        if cand.size == 0:
            continue
        best = mid[cand].max()
        if best < voicing_threshold:
            continue
        j = cand[mid[cand] >= octave_ratio * best][0] + 1  # index into ri
        off, height = _parabolic(ri[j - 1], ri[j], ri[j + 1])
        lag = (lag_min - 1) + j + off
        voiced[i] = True
        f0[i] = min(max(rate / lag, f0_min), f0_max)
        strength[i] = min(height, 1.0)
    return track()


# --------------------------------------------------------------------------- #
# glottal cycles
# --------------------------------------------------------------------------- #


def _voiced_runs(track: F0Track, jump_ratio: float) -> list[tuple[int, int]]:
    """Inclusive frame-index ranges of contiguous voiced frames with continuous f0."""
    runs = []
    start = None
    for i, v in enumerate(track.voiced):
        if v and start is not None:
            prev = track.f0_hz[i - 1]
            cur = track.f0_hz[i]
            if max(prev, cur) / min(prev, cur) > jump_ratio:
                runs.append((start, i - 1))
                start = i
        elif v:
            start = i
        elif start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(track.voiced) - 1))
    return runs


def _rising_crossings(x: np.ndarray) -> np.ndarray:
    """Fractional sample positions where x goes from <= 0 to > 0."""
    idx = np.flatnonzero((x[:-1] <= 0) & (x[1:] > 0))
    return idx + (-x[idx]) / (x[idx + 1] - x[idx])


def _cycle_peak(x: np.ndarray, lo: float, hi: float) -> float:
    a = int(math.ceil(lo))
    b = int(math.floor(hi)) + 1
    seg = np.abs(x[a:b])
    if seg.size == 0:
        return 0.0
    k = int(np.argmax(seg))
    peak = float(seg[k])
    i = a + k
    if 0 < i < x.size - 1 and 0 < k < seg.size - 1:
        _, peak = _parabolic(abs(x[i - 1]), abs(x[i]), abs(x[i + 1]))
    return float(peak)


def extract_periods(
    clip: AudioClip,
    track: F0Track,
    f0_min: float | None = None,
    f0_max: float | None = None,
    jump_ratio: float = 1.25,
) -> PeriodSequence:
    """Mark glottal cycles at rising zero crossings inside each voiced run.

    From each boundary, the next one is the rising crossing whose distance is
    closest to the run's predicted period among those inside the f0 band.
    """
    x = clip.samples
    rate = clip.sample_rate
    runs = _voiced_runs(track, jump_ratio)
    if not runs:
        return PeriodSequence.empty()
    f0_lo = f0_min if f0_min is not None else float(np.nanmin(track.f0_hz))
    f0_hi = f0_max if f0_max is not None else float(np.nanmax(track.f0_hz))
    min_gap = rate / f0_hi
    max_gap = rate / f0_lo
    centers = track.starts + track.frame_len / 2.0

    bounds: list[float] = []
    periods: list[float] = []
    amps: list[float] = []
    run_ids: list[int] = []
    run_id = 0
    for k, (i0, i1) in enumerate(runs):
        lo = float(track.starts[i0])
        hi = float(min(track.starts[i1] + track.frame_len, x.size))
        if k > 0 and runs[k - 1][1] == i0 - 1:
            lo = 0.5 * (centers[i0 - 1] + centers[i0])
        if k + 1 < len(runs) and runs[k + 1][0] == i1 + 1:
            hi = 0.5 * (centers[i1] + centers[i1 + 1])
        a = int(math.floor(lo))
        b = int(math.ceil(hi))
        cross = _rising_crossings(x[a:b]) + a
        cross = cross[(cross >= lo) & (cross < hi)]
        if cross.size < 2:
            continue
        predicted = rate / float(np.nanmean(track.f0_hz[i0 : i1 + 1]))
        pos = 0
        chain_started = False
        while pos < cross.size - 1:
            gaps = cross[pos + 1 :] - cross[pos]
            ok = np.flatnonzero((gaps >= min_gap * 0.999) & (gaps <= max_gap * 1.001))
            if ok.size == 0:
                # no admissible successor: break the chain and restart at the next crossing
                if chain_started:
                    run_id += 1
                    chain_started = False
                pos += 1
                continue
            nxt = pos + 1 + ok[np.argmin(np.abs(gaps[ok] - predicted))]
            if not chain_started:
                bounds.append(cross[pos] / rate)
                chain_started = True
            bounds.append(cross[nxt] / rate)
            periods.append((cross[nxt] - cross[pos]) / rate)
            amps.append(_cycle_peak(x, cross[pos], cross[nxt]))
            run_ids.append(run_id)
            pos = nxt
        if chain_started:
            run_id += 1

    if not periods:
        return PeriodSequence.empty()
    return PeriodSequence(np.array(bounds), np.array(periods), np.array(amps), np.array(run_ids))


def _local_perturbation(values: np.ndarray, run_ids: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    same = run_ids[1:] == run_ids[:-1]
    if not same.any():
        return 0.0
    diffs = np.abs(np.diff(values))[same]
    mean = float(values.mean())
    return float(diffs.mean() / mean) if mean > 0 else 0.0


def compute_jitter(periods: PeriodSequence) -> float:
    """Local jitter: mean absolute difference of consecutive periods over mean period."""
    return _local_perturbation(periods.periods, periods.run_ids)


def compute_shimmer(periods: PeriodSequence) -> float:
    """Local shimmer: mean absolute difference of consecutive cycle peaks over mean peak."""
    return _local_perturbation(periods.amplitudes, periods.run_ids)


# --------------------------------------------------------------------------- #
# energy, VAD, syllable nuclei
# --------------------------------------------------------------------------- #


def compute_volume(clip: AudioClip, floor: float = DB_FLOOR) -> float:
    """Whole-utterance RMS level in dBFS, pauses included."""
    if clip.n_samples == 0:
        return floor
    return float(_to_db(np.sqrt(np.mean(clip.samples**2)), floor))


def _close_gaps(mask: np.ndarray, max_gap_frames: float) -> np.ndarray:
    out = mask.copy()
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        return out
    for a, b in zip(idx[:-1], idx[1:]):
        gap = b - a - 1
        if 0 < gap < max_gap_frames:
            out[a + 1 : b] = True
    return out


def detect_voice_activity(
    frames: FrameSequence,
    relative_db: float = 25.0,
    floor_db: float = -60.0,
    gap_ms: float = 100.0,
    db_floor: float = DB_FLOOR,
) -> VadMask:
    """Energy VAD: within ``relative_db`` of the loudest frame and above ``floor_db``; short gaps closed."""
    db = _to_db(frame_rms(frames), db_floor)
    if db.size == 0:
        return VadMask(np.zeros(0, dtype=bool), frames.hop_s, db)
    speech = (db > db.max() - relative_db) & (db > floor_db)
    speech = _close_gaps(speech, gap_ms / frames.hop_ms)
    return VadMask(speech, frames.hop_s, db)


def compute_intensity(frames: FrameSequence, vad: VadMask, floor: float = DB_FLOOR) -> float:
    """Mean frame level in dBFS over speech frames only."""
    if not vad.speech.any():
        return floor
    db = _to_db(frame_rms(frames), floor)
    return float(db[vad.speech].mean())


def smoothed_intensity(frames: FrameSequence, smooth_ms: float = 50.0, floor: float = DB_FLOOR) -> np.ndarray:
    """Frame power smoothed with a centred moving average, in dB."""
    power = np.mean(frames.frames**2, axis=1) if len(frames) else np.zeros(0)
    width = max(1, int(round(smooth_ms / frames.hop_ms)))
    if width > 1 and power.size:
        kernel = np.ones(width) / width
        power = np.convolve(power, kernel, mode="same")
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return np.maximum(db, floor)


def detect_syllable_nuclei(
    frames: FrameSequence,
    vad: VadMask,
    smooth_ms: float = 50.0,
    median_margin_db: float = 2.0,
    dip_db: float = 2.0,
    floor: float = DB_FLOOR,
) -> int:
    """Count intensity peaks that look like syllable nuclei."""
    if not vad.speech.any():
        return 0
    s = smoothed_intensity(frames, smooth_ms, floor)
    threshold = float(np.median(s[vad.speech])) - median_margin_db
    left = np.concatenate([[-np.inf], s[:-1]])
    right = np.concatenate([s[1:], [-np.inf]])
    peaks = np.flatnonzero((s > left) & (s >= right) & vad.speech & (s >= threshold))

    count = 0
    ref = None  # index of the highest peak in the current nucleus
    for p in peaks:
        if ref is None:
            ref, count = p, 1
            continue
        valley = s[ref : p + 1].min()
        if min(s[ref], s[p]) - valley >= dip_db:
            ref = p
            count += 1
        elif s[p] > s[ref]:
            ref = p
    return count


# --------------------------------------------------------------------------- #
# orchestration
# --------------------------------------------------------------------------- #


def extract_acoustic_profile(clip: AudioClip, cfg: DSPConfig | None = None) -> AcousticProfile:
    cfg = cfg or DSPConfig()
    if clip.n_samples == 0:
        raise EmptyAudio(f"{clip.source_id or 'clip'}: zero samples")
    energy_frames = frame_signal(clip, cfg.frame_ms, cfg.hop_ms)
    pitch_frames = frame_signal(clip, cfg.pitch_frame_ms, cfg.hop_ms)

    track = estimate_f0_track(pitch_frames, cfg.f0_min, cfg.f0_max, cfg.voicing_threshold, cfg.octave_ratio)
    cycles = extract_periods(clip, track, cfg.f0_min, cfg.f0_max, cfg.pitch_jump_ratio)
    vad = detect_voice_activity(energy_frames, cfg.vad_relative_db, cfg.vad_floor_db, cfg.vad_gap_ms, cfg.db_floor)
    syllables = detect_syllable_nuclei(
        energy_frames, vad, cfg.nucleus_smooth_ms, cfg.nucleus_median_margin_db, cfg.nucleus_dip_db, cfg.db_floor
    )

    duration = clip.duration_s
    speech_time = min(vad.speech_time_s, duration)
    voiced = track.voiced_count
    return AcousticProfile(
        pitch_hz=float(np.nanmean(track.f0_hz)) if voiced else 0.0,
        speech_rate_sps=syllables / duration,
        volume_db=compute_volume(clip, cfg.db_floor),
        jitter_ratio=compute_jitter(cycles),
        shimmer_ratio=compute_shimmer(cycles),
        intensity_db=compute_intensity(energy_frames, vad, cfg.db_floor),
        articulation_rate_sps=syllables / speech_time if speech_time > 0 else 0.0,
        syllable_count=int(syllables),
        voiced_frame_count=int(voiced),
        speech_time_s=float(speech_time),
        duration_s=float(duration),
    )
