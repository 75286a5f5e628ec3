"""Synthetic test signals with known prosodic ground truth.

Used by the test-suite and by the fixture corpus generator; every signal is
deterministic given its arguments (and seed, where one is taken).
"""

from __future__ import annotations

import numpy as np

from .audio_io import ANALYSIS_RATE, AudioClip


def tone(freq: float, duration: float, amplitude: float = 1.0, rate: int = ANALYSIS_RATE, phase: float = 0.0) -> np.ndarray:
    t = np.arange(int(round(duration * rate))) / rate
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


def silence(duration: float, rate: int = ANALYSIS_RATE) -> np.ndarray:
    return np.zeros(int(round(duration * rate)))


def cycle_train(periods_s, amplitudes=None, rate: int = ANALYSIS_RATE) -> np.ndarray:
    """Concatenate single sine cycles, each with its own period and peak amplitude.

    Phase is continuous at every cycle boundary (each cycle starts at a rising
    zero crossing), so the boundaries are exactly the cycle marks.
    """
    periods = np.asarray(periods_s, dtype=float)
    amps = np.ones_like(periods) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    edges = np.concatenate([[0.0], np.cumsum(periods)])
    n = int(np.floor(edges[-1] * rate))
    t = np.arange(n) / rate
    k = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, periods.size - 1)
    phase = (t - edges[k]) / periods[k]
    return amps[k] * np.sin(2 * np.pi * phase)


def alternating_periods(short_s: float, long_s: float, n_cycles: int, amplitude: float = 0.5, rate: int = ANALYSIS_RATE) -> np.ndarray:
    periods = [short_s if i % 2 == 0 else long_s for i in range(n_cycles)]
    return cycle_train(periods, [amplitude] * n_cycles, rate)


def alternating_amplitudes(freq: float, low: float, high: float, n_cycles: int, rate: int = ANALYSIS_RATE) -> np.ndarray:
    amps = [low if i % 2 == 0 else high for i in range(n_cycles)]
    return cycle_train([1.0 / freq] * n_cycles, amps, rate)


def burst_train(
    n_bursts: int,
    on_s: float,
    off_s: float,
    freq: float = 220.0,
    amplitude: float = 0.5,
    lead_s: float = 0.0,
    tail_s: float = 0.0,
    rate: int = ANALYSIS_RATE,
) -> np.ndarray:
    """``n_bursts`` tone bursts separated by ``off_s`` of digital silence."""
    parts = [silence(lead_s, rate)]
    for i in range(n_bursts):
        parts.append(tone(freq, on_s, amplitude, rate))
        if i < n_bursts - 1:
            parts.append(silence(off_s, rate))
    parts.append(silence(tail_s, rate))
    return np.concatenate(parts)


def random_burst_fixture(rng: np.random.Generator, rate: int = ANALYSIS_RATE) -> np.ndarray:
    """Random burst train: 2-8 bursts of 80-300 ms, gaps 150-400 ms, 100-300 Hz, amplitude 0.35-0.5."""
    n = int(rng.integers(2, 9))
    parts = [silence(float(rng.uniform(0.0, 0.3)), rate)]
    for i in range(n):
        parts.append(tone(float(rng.uniform(100, 300)), float(rng.uniform(0.08, 0.3)), float(rng.uniform(0.35, 0.5)), rate))
        parts.append(silence(float(rng.uniform(0.15, 0.4)), rate))
    return np.concatenate(parts)


def clip(samples: np.ndarray, source_id: str = "synthetic", rate: int = ANALYSIS_RATE) -> AudioClip:
    return AudioClip(samples, rate, source_id)
