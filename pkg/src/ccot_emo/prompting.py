"""Prompt assembly for the graph-guided, direct and two-stage zero-shot CoT strategies.

A CCoT prompt is the ordered concatenation ``[I][Eg][C][Pin][S]``: audio
reference, serialized emotion graph, context instruction, task with options,
and the output-format instruction. All fixed strings come from versioned
templates under ``data/prompts``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import string
from dataclasses import asdict, dataclass
from typing import Callable

from .emotion_graph import (
    EmotionGraph,
    dumps_canonical,
    graph_to_dict,
    render_flat,
    render_freeform_dict,
    truncate_dict,
)
from .errors import InvalidAblation, PromptStructureError
from .resources import load_json, load_template

logger = logging.getLogger(__name__)

STRATEGIES = ("ccot", "direct", "zscot")
FORMATS = ("json", "freeform", "unstructured_no_json")
ATTRIBUTE_SOURCES = ("dsp", "model_described")

TAG_ORDER = {
    "ccot": ("I", "Eg", "C", "Pin", "S"),
    "direct": ("I", "Pin", "S"),
    "zscot_stage1": ("I", "T"),
    "zscot_stage2": ("I", "R", "Pin", "S"),
    "describe_acoustics": ("I", "T"),
}

RENDERERS: dict[str, Callable[[dict], str]] = {
    "json": dumps_canonical,
    "freeform": render_freeform_dict,
    "unstructured_no_json": render_flat,
}


@dataclass(frozen=True)
class LabelSet:
    options: tuple[tuple[str, str], ...]
    dataset_id: str = "default"
    label_map: tuple[tuple[str, str], ...] = ()
    drop: tuple[str, ...] = ()
    notes: str = ""

    def __post_init__(self):
        letters = [l for l, _ in self.options]
        if letters != list(string.ascii_uppercase[: len(letters)]):
            raise ValueError(f"option letters must run consecutively from A, got {letters}")
        names = [n for _, n in self.options]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate option names {names}")

    @classmethod
    def from_names(cls, names, dataset_id: str = "default", label_map=None, drop=(), notes: str = "") -> "LabelSet":
        opts = tuple(zip(string.ascii_uppercase, names))
        return cls(opts, dataset_id, tuple(sorted((label_map or {}).items())), tuple(drop), notes)

    @classmethod
    def for_dataset(cls, dataset_id: str) -> "LabelSet":
        data = load_json("labelsets.json")["datasets"]
        key = dataset_id.lower()
        if key not in data:
            key = next((k for k in data if key.startswith(k)), "default")
        entry = data[key]
        return cls.from_names(entry["labels"], dataset_id, entry.get("map", {}), entry.get("drop", ()), entry.get("notes", ""))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for _, n in self.options)

    def letter_for(self, name: str) -> str:
        for letter, n in self.options:
            if n == name:
                return letter
        raise KeyError(name)

    def map_label(self, raw: str) -> str | None:
        """Corpus label -> option name; None when the label is configured to be dropped."""
        lab = raw.strip().lower()
        if lab in self.drop:
            return None
        return dict(self.label_map).get(lab, lab)

    def options_text(self) -> str:
        return " ".join(f"({letter}) {name.capitalize()}" for letter, name in self.options)


@dataclass(frozen=True)
class AblationConfig:
    drop_acoustic: bool = False
    drop_text: bool = False
    drop_relations: bool = False
    format: str = "json"
    token_budget: int = 256
    attribute_source: str = "dsp"

    def validate(self) -> "AblationConfig":
        if self.format not in FORMATS:
            raise InvalidAblation(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.attribute_source not in ATTRIBUTE_SOURCES:
            raise InvalidAblation(f"attribute_source must be one of {ATTRIBUTE_SOURCES}")
        if self.drop_acoustic and self.drop_text:
            raise InvalidAblation("dropping both acoustic and text sections leaves no graph content")
        if self.drop_acoustic and self.attribute_source == "model_described":
            raise InvalidAblation("model_described attributes replace the acoustic section; it cannot also be dropped")
        if self.token_budget < 1:
            raise InvalidAblation("token_budget must be positive")
        return self

    @classmethod
    def from_mapping(cls, data: dict) -> "AblationConfig":
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise InvalidAblation(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class PromptBundle:
    audio_ref: str
    segments: tuple[tuple[str, str], ...]
    strategy: str
    ablation: AblationConfig | None = None

    def __post_init__(self):
        expected = TAG_ORDER.get(self.strategy)
        if expected is None:
            raise PromptStructureError(f"unknown strategy {self.strategy!r}")
        tags = tuple(t for t, _ in self.segments)
        if tags != expected:
            raise PromptStructureError(f"{self.strategy} needs segments {expected}, got {tags}")

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.segments)

    def segment(self, tag: str) -> str:
        return dict(self.segments)[tag]

    def flatten(self) -> str:
        """Text sent to the model; the audio slot travels separately as an attachment."""
        return "\n".join(text for tag, text in self.segments if tag != "I" and text)


def _fixed(prompt_dir=None) -> dict:
    return {
        "C": load_template("context", override_dir=prompt_dir),
        "S": load_template("output_instruction", override_dir=prompt_dir),
        "T": load_template("zscot_trigger", override_dir=prompt_dir),
    }


def task_prompt(labelset: LabelSet, prompt_dir=None) -> str:
    return load_template("task", override_dir=prompt_dir).format(options=labelset.options_text())


def build_ccot_prompt(eg_text: str, labelset: LabelSet, audio_ref: str = "", ablation: AblationConfig | None = None, prompt_dir=None) -> PromptBundle:
    if not eg_text or not eg_text.strip():
        raise PromptStructureError("emotion graph text is empty")
    fixed = _fixed(prompt_dir)
    segs = (("I", audio_ref), ("Eg", eg_text), ("C", fixed["C"]), ("Pin", task_prompt(labelset, prompt_dir)), ("S", fixed["S"]))
    return PromptBundle(audio_ref, segs, "ccot", ablation)


def build_direct_prompt(labelset: LabelSet, audio_ref: str = "", prompt_dir=None) -> PromptBundle:
    fixed = _fixed(prompt_dir)
    return PromptBundle(audio_ref, (("I", audio_ref), ("Pin", task_prompt(labelset, prompt_dir)), ("S", fixed["S"])), "direct")


def build_zscot_prompts(labelset: LabelSet, audio_ref: str = "", prompt_dir=None):
    """Stage one asks for reasoning; the returned builder makes stage two from the rationale."""
    fixed = _fixed(prompt_dir)
    stage1 = PromptBundle(audio_ref, (("I", audio_ref), ("T", fixed["T"])), "zscot_stage1")
    pin = task_prompt(labelset, prompt_dir)

    def stage2(rationale: str) -> PromptBundle:
        if not rationale.strip():
            logger.warning("empty ZS-CoT rationale for %r; stage two carries an empty slot", audio_ref)
        return PromptBundle(audio_ref, (("I", audio_ref), ("R", rationale), ("Pin", pin), ("S", fixed["S"])), "zscot_stage2")

    return stage1, stage2


def build_describe_prompt(audio_ref: str = "", prompt_dir=None) -> PromptBundle:
    """Pre-call for the model-described acoustic attribute ablation."""
    text = load_template("describe_acoustics", override_dir=prompt_dir)
    return PromptBundle(audio_ref, (("I", audio_ref), ("T", text)), "describe_acoustics")


def ablation_view(eg: EmotionGraph, cfg: AblationConfig, model_description: str | None = None) -> dict:
    """Dict form of ``eg`` with the configured sections removed (before budgeting)."""
    cfg.validate()
    d = graph_to_dict(eg)
    if cfg.attribute_source == "model_described":
        if model_description is None:
            raise InvalidAblation("model_described attributes need the model's description text")
        d["acoustic_features"] = {"description": model_description.strip()}
        # relations were judged on DSP levels, which this variant withholds
        d.pop("cross_modal_relations", None)
    if cfg.drop_acoustic:
        d.pop("acoustic_features", None)
        d.pop("cross_modal_relations", None)
    if cfg.drop_text:
        d.pop("textual_sentiment", None)
        d.pop("keywords", None)
    if cfg.drop_relations:
        d.pop("cross_modal_relations", None)
    if "cross_modal_relations" not in d and "provenance" in d:
        # the backend id would otherwise leak the dropped section's name
        d["provenance"].pop("relation_backend", None)
    return d


def apply_ablation(eg: EmotionGraph, cfg: AblationConfig, model_description: str | None = None) -> str:
    """Prompt-ready graph text: drop sections, render in the configured format, fit the budget."""
    render = RENDERERS[cfg.validate().format]
    view = ablation_view(eg, cfg, model_description)
    return render(truncate_dict(view, cfg.token_budget, render))
