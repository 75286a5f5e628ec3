"""Shared builders for graphs and labels used across test modules."""

from __future__ import annotations

import random

from hypothesis import strategies as st

from ccot_emo.calibration import LEVELS, AcousticAttributes
from ccot_emo.crossmodal import RELATIONS, CrossModalRelation
from ccot_emo.emotion_graph import EmotionGraph, Provenance
from ccot_emo.prosody_dsp import FEATURES
from ccot_emo.text_attributes import SENTIMENTS, TextAttributes

# No entries collide with section field names, feature names or relation labels.
VOCAB = (
    "angry", "delay", "wonderful", "love", "hate", "train", "mother", "birthday", "exam",
    "café", "naïve", "高兴", "生气", "über", "rain", "money", "promise", "late", "again",
    "sorry", "great", "terrible", "party", "dog", "office", "ticket", "phone", "dinner",
)
RATIONALES = ("raised voice", "flat delivery", "trembling", "voix élevée", "speaks fast", "quiet tone")


def make_graph(rng: random.Random, with_rationales: bool = True) -> EmotionGraph:
    sentiment = rng.choice(SENTIMENTS)
    levels = {f: rng.choice(LEVELS) for f in FEATURES}
    keywords = tuple(rng.sample(VOCAB, rng.randint(0, 7)))
    rels = []
    for f in FEATURES:
        why = rng.choice(RATIONALES) if with_rationales and rng.random() < 0.3 else None
        rels.append(CrossModalRelation(f, levels[f], sentiment, rng.choice(RELATIONS), why))
    rng.shuffle(rels)
    prov = Provenance(
        corpus_id=rng.choice(["iemocap", "meld", "esd", "merbench-t1"]),
        calibration_id=f"{rng.getrandbits(48):012x}",
        text_backend="offline-lexicon-v1",
        relation_backend="rule-table-v1",
        transcript_hash=f"{rng.getrandbits(64):016x}",
    )
    text = TextAttributes(sentiment, keywords, prov.text_backend, prov.transcript_hash)
    return EmotionGraph(AcousticAttributes(levels), text, tuple(rels), prov)


@st.composite
def graphs(draw):
    return make_graph(random.Random(draw(st.integers(0, 2**32 - 1))))


def content_items(d: dict) -> set:
    """Item-level content of a graph dict, for budget monotonicity checks."""
    items = set()
    if "provenance" in d:
        items.add(("provenance",))
    for kw in d.get("keywords", []):
        items.add(("keyword", kw))
    for r in d.get("cross_modal_relations", []):
        items.add(("relation", r["feature"]))
        if "rationale" in r:
            items.add(("rationale", r["feature"]))
    return items
