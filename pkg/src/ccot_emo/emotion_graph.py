"""Emotion Graph assembly, canonical JSON, token budgeting and prose rendering.

Graphs are handled in two forms: the typed :class:`EmotionGraph` and its
ordered ``dict`` form (what gets serialized). Budgeting and ablation work on
the dict form so that partially dropped graphs stay representable.

Canonical JSON: UTF-8, two-space indent, top-level keys in the order of
``TOP_LEVEL_KEYS``, acoustic features and relations in ``FEATURES`` order.
The schema is documented in ``docs/emotion_graph.schema.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from . import PIPELINE_VERSION
from .calibration import AcousticAttributes
from .crossmodal import CrossModalRelation
from .errors import BudgetInfeasible, InconsistentComponents
from .prosody_dsp import FEATURES
from .text_attributes import TextAttributes

TOP_LEVEL_KEYS = ("acoustic_features", "textual_sentiment", "keywords", "cross_modal_relations", "provenance")
PROVENANCE_KEYS = ("corpus_id", "calibration_id", "text_backend", "relation_backend", "transcript_hash", "pipeline_version")
KEEP_TOP_KEYWORDS = 3

DISPLAY_NAMES = {f: f.replace("_", " ") for f in FEATURES}

# Terms that identify each droppable section in any of the three renderings.
SECTION_TERMS = {
    "acoustic": ("acoustic", "Acoustic") + FEATURES + tuple(DISPLAY_NAMES.values()),
    "text": ("textual_sentiment", "textual sentiment", "keywords", "Keywords"),
    "relations": ("cross_modal", "Cross-modal", "cross-modal", "relation", "supports", "contradicts"),
}


@dataclass(frozen=True)
class Provenance:
    corpus_id: str
    calibration_id: str
    text_backend: str
    relation_backend: str
    transcript_hash: str
    pipeline_version: str = PIPELINE_VERSION

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in PROVENANCE_KEYS}


@dataclass(frozen=True)
class EmotionGraph:
    acoustic: AcousticAttributes
    text: TextAttributes
    relations: tuple[CrossModalRelation, ...] = ()
    provenance: Provenance | None = None

    def __post_init__(self):
        rels = tuple(sorted(self.relations, key=lambda r: FEATURES.index(r.feature)))
        object.__setattr__(self, "relations", rels)
        seen = [r.feature for r in rels]
        if len(set(seen)) != len(seen):
            raise InconsistentComponents(f"duplicate relation features {seen}")
        for r in rels:
            if r.level != self.acoustic[r.feature]:
                raise InconsistentComponents(f"relation level for {r.feature} disagrees with acoustic attributes")
            if r.sentiment != self.text.sentiment:
                raise InconsistentComponents(f"relation for {r.feature} uses sentiment {r.sentiment}, graph has {self.text.sentiment}")


def assemble_graph(
    attrs: AcousticAttributes,
    text_attrs: TextAttributes,
    relations,
    provenance: Provenance,
) -> EmotionGraph:
    if provenance is None or any(not getattr(provenance, k) for k in PROVENANCE_KEYS):
        raise InconsistentComponents("provenance must be present and complete")
    rel_features = sorted(r.feature for r in relations)
    if rel_features != sorted(FEATURES):
        raise InconsistentComponents(f"relations must cover exactly the seven features, got {rel_features}")
    if set(attrs.levels) != set(FEATURES):
        raise InconsistentComponents("acoustic attributes incomplete")
    try:
        return EmotionGraph(attrs, text_attrs, tuple(relations), provenance)
    except ValueError as exc:
        raise InconsistentComponents(str(exc)) from exc


# --------------------------------------------------------------------------- #
# dict form and canonical JSON
# --------------------------------------------------------------------------- #


def _relation_dict(r: CrossModalRelation) -> dict:
    d = {"feature": r.feature, "level": r.level, "relation": r.relation}
    if r.rationale:
        d["rationale"] = r.rationale
    return d


def graph_to_dict(eg: EmotionGraph) -> dict:
    d = {
        "acoustic_features": {f: eg.acoustic[f] for f in FEATURES},
        "textual_sentiment": eg.text.sentiment,
        "keywords": list(eg.text.keywords),
        "cross_modal_relations": [_relation_dict(r) for r in eg.relations],
    }
    if eg.provenance is not None:
        d["provenance"] = eg.provenance.to_dict()
    return d


def graph_from_dict(d: dict) -> EmotionGraph:
    prov = d.get("provenance")
    sentiment = d["textual_sentiment"]
    text = TextAttributes(
        sentiment,
        tuple(d["keywords"]),
        prov["text_backend"] if prov else "",
        prov["transcript_hash"] if prov else "",
    )
    rels = tuple(
        CrossModalRelation(r["feature"], r["level"], sentiment, r["relation"], r.get("rationale"))
        for r in d["cross_modal_relations"]
    )
    return EmotionGraph(
        AcousticAttributes(dict(d["acoustic_features"])),
        text,
        rels,
        Provenance(**{k: prov[k] for k in PROVENANCE_KEYS}) if prov else None,
    )


def dumps_canonical(d: dict) -> str:
    ordered = {k: d[k] for k in TOP_LEVEL_KEYS if k in d}
    return json.dumps(ordered, indent=2, ensure_ascii=False)


def serialize_canonical(eg: EmotionGraph) -> str:
    return dumps_canonical(graph_to_dict(eg))


def parse_graph(text: str) -> EmotionGraph:
    return graph_from_dict(json.loads(text))


def write_graph(directory: str | Path, utterance_id: str, eg: EmotionGraph) -> Path:
    path = Path(directory) / f"{utterance_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_canonical(eg).encode("utf-8"))
    return path


def read_graph(path: str | Path) -> EmotionGraph:
    return parse_graph(Path(path).read_bytes().decode("utf-8"))


# --------------------------------------------------------------------------- #
# budgeting
# --------------------------------------------------------------------------- #


def estimate_tokens(text: str) -> int:
    """Model-independent token estimate: one token per four UTF-8 bytes, rounded up."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def _drop_one(d: dict) -> bool:
    """Remove the next item in priority order; False when only the core is left."""
    rels = d.get("cross_modal_relations")
    kws = d.get("keywords")
    if "provenance" in d:
        del d["provenance"]
        return True
    if rels:
        for r in reversed(rels):
            if "rationale" in r:
                del r["rationale"]
                return True
    if kws is not None and len(kws) > KEEP_TOP_KEYWORDS:
        kws.pop()
        return True
    if rels:
        for i in range(len(rels) - 1, -1, -1):
            if rels[i]["relation"] == "neutral":
                del rels[i]
                return True
    if kws:
        kws.pop()
        return True
    if rels:
        rels.pop()
        return True
    return False


def truncate_dict(d: dict, budget: int, render: Callable[[dict], str] = dumps_canonical) -> dict:
    out = json.loads(json.dumps(d))
    while estimate_tokens(render(out)) > budget:
        if not _drop_one(out):
            raise BudgetInfeasible(
                f"core content needs {estimate_tokens(render(out))} tokens, budget is {budget}"
            )
    return out


def truncate_to_budget(eg: EmotionGraph, budget: int) -> EmotionGraph:
    """Drop content in fixed priority until the canonical JSON fits ``budget`` tokens.

    Order: provenance, rationales, keywords beyond the top three, neutral
    relations, remaining keywords, remaining relations. Acoustic attributes
    and sentiment are never dropped.
    """
    d = graph_to_dict(eg)
    if estimate_tokens(dumps_canonical(d)) <= budget:
        return eg
    return graph_from_dict(truncate_dict(d, budget))


# --------------------------------------------------------------------------- #
# alternative renderings
# --------------------------------------------------------------------------- #


def _relation_phrase(r: dict, sentiment: str | None) -> str:
    target = f"the {sentiment} sentiment" if sentiment else "the transcript polarity"
    head = f"{DISPLAY_NAMES[r['feature']]} ({r['level']})"
    if r["relation"] == "neutral":
        phrase = f"{head} is neutral toward {target}"
    else:
        phrase = f"{head} {r['relation']} {target}"
    if r.get("rationale"):
        phrase += f" (reason: {r['rationale']})"
    return phrase


def render_freeform_dict(d: dict) -> str:
    sentences = []
    acoustic = d.get("acoustic_features")
    if acoustic is not None:
        if "description" in acoustic:
            sentences.append(f"The acoustic attributes, as described by the model: {acoustic['description']}")
        else:
            parts = ", ".join(f"{DISPLAY_NAMES[f]} is {acoustic[f]}" for f in FEATURES)
            sentences.append(f"The acoustic attributes are: {parts}.")
    sentiment = d.get("textual_sentiment")
    if sentiment is not None:
        sentences.append(f"The textual sentiment is {sentiment}.")
    if "keywords" in d:
        if d["keywords"]:
            sentences.append(f"The keywords are: {', '.join(d['keywords'])}.")
        else:
            sentences.append("There are no keywords.")
    if "cross_modal_relations" in d:
        rels = d["cross_modal_relations"]
        if rels:
            sentences.append("Cross-modal relations: " + "; ".join(_relation_phrase(r, sentiment) for r in rels) + ".")
        else:
            sentences.append("There are no cross-modal relations.")
    prov = d.get("provenance")
    if prov:
        sentences.append(
            "Provenance: "
            + ", ".join(f"{k.replace('_', ' ')} {prov[k]}" for k in PROVENANCE_KEYS if k in prov)
            + "."
        )
    return "\n".join(sentences)


def render_freeform(eg: EmotionGraph) -> str:
    """Fixed-template prose carrying the same content as the JSON, without its structure."""
    return render_freeform_dict(graph_to_dict(eg))


def render_flat(d: dict) -> str:
    """``key: value`` lines with the JSON content but no JSON syntax."""
    lines = []
    acoustic = d.get("acoustic_features")
    if acoustic is not None:
        for k, v in acoustic.items():
            lines.append(f"acoustic_features.{k}: {v}")
    if "textual_sentiment" in d:
        lines.append(f"textual_sentiment: {d['textual_sentiment']}")
    if "keywords" in d:
        lines.append(("keywords: " + ", ".join(d["keywords"])).rstrip())
    for r in d.get("cross_modal_relations", []) or []:
        lines.append(f"cross_modal_relations.{r['feature']}: {r['relation']} ({r['level']})")
        if r.get("rationale"):
            lines.append(f"cross_modal_relations.{r['feature']}.rationale: {r['rationale']}")
    for k, v in (d.get("provenance") or {}).items():
        lines.append(f"provenance.{k}: {v}")
    return "\n".join(lines)
