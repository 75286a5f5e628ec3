"""Tiny synthetic corpus for offline end-to-end runs: generated tones plus scripted transcripts."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import ANALYSIS_RATE, write_wav
from .evaluation import write_manifest
from .synth import burst_train

# label -> (base f0 Hz, burst on s, burst off s, amplitude, scripted lines)
SCRIPT = {
    "neutral": (140.0, 0.16, 0.12, 0.25, [
        "The train leaves at noon from the second platform.",
        "Please send the report to the office by Monday.",
        "We moved the meeting to the room on the third floor.",
    ]),
    "happy": (240.0, 0.12, 0.08, 0.45, [
        "I love this, what a wonderful surprise party!",
        "This is great news, I am so happy for you.",
        "We won the game and everyone is delighted.",
    ]),
    "sad": (110.0, 0.24, 0.18, 0.15, [
        "I miss her so much, everything feels empty now.",
        "I am sorry, the dog died last night.",
        "I feel lonely and tired of all of this.",
    ]),
    "surprised": (280.0, 0.1, 0.1, 0.4, [
        "Wow, I did not expect to see you here at all!",
        "Really? They moved the whole thing to tonight?",
        "No way, you finished the whole marathon?",
    ]),
    "angry": (200.0, 0.1, 0.06, 0.6, [
        "I hate this terrible delay, it is unacceptable!",
        "You lied to me again and I am furious about it.",
        "Stop wasting my time with these stupid excuses!",
    ]),
}


def make_fixture_corpus(
    out_dir: str | Path,
    per_label: int = 11,
    n_sessions: int = 5,
    seed: int = 0,
    dataset_id: str = "synthetic",
    rate: int = ANALYSIS_RATE,
) -> Path:
    """Write WAVs and ``<dataset_id>.jsonl``; returns the manifest path.

    Every utterance gets distinct audio (f0 and timing are jittered per item),
    and sessions are assigned round-robin so each session holds every label.
    """
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    i = 0
    for label, (f0, on, off, amp, lines) in SCRIPT.items():
        for j in range(per_label):
            uid = f"{label[:3]}_{j:03d}"
            freq = f0 * float(rng.uniform(0.92, 1.08))
            n_bursts = int(rng.integers(3, 7))
            x = burst_train(
                n_bursts,
                on * float(rng.uniform(0.85, 1.15)),
                off * float(rng.uniform(0.85, 1.15)),
                freq=freq,
                amplitude=amp * float(rng.uniform(0.9, 1.1)),
                lead_s=0.1,
                tail_s=0.1,
                rate=rate,
            )
            rel = Path("audio") / f"{uid}.wav"
            write_wav(out / rel, x, rate)
            rows.append(
                {
                    "utterance_id": uid,
                    "audio_path": rel.as_posix(),
                    "transcript": lines[j % len(lines)],
                    "label": label,
                    "session": f"Ses{(i % n_sessions) + 1:02d}",
                    "language": "en",
                }
            )
            i += 1
    return write_manifest(out / f"{dataset_id}.jsonl", rows)
