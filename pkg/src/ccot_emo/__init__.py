"""Emotion-graph prompting for zero-shot speech emotion recognition."""

__version__ = "0.1.0"
PIPELINE_VERSION = f"ccot-emo/{__version__}"
