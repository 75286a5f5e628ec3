import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccot_emo.calibration import AcousticAttributes
from ccot_emo.crossmodal import CrossModalRelation
from ccot_emo.emotion_graph import (
    TOP_LEVEL_KEYS,
    EmotionGraph,
    Provenance,
    assemble_graph,
    estimate_tokens,
    graph_to_dict,
    parse_graph,
    read_graph,
    render_flat,
    render_freeform,
    serialize_canonical,
    truncate_to_budget,
    write_graph,
)
from ccot_emo.errors import BudgetInfeasible, InconsistentComponents
from ccot_emo.prosody_dsp import FEATURES
from ccot_emo.text_attributes import TextAttributes
from helpers import content_items, graphs, make_graph

PROV = Provenance("iemocap", "abc123", "offline-lexicon-v1", "rule-table-v1", "f00d")


def normal_graph(sentiment="neutral", keywords=(), relation="neutral"):
    attrs = AcousticAttributes({f: "normal" for f in FEATURES})
    text = TextAttributes(sentiment, tuple(keywords), PROV.text_backend, PROV.transcript_hash)
    rels = [CrossModalRelation(f, "normal", sentiment, relation) for f in FEATURES]
    return assemble_graph(attrs, text, rels, PROV)


# assembly ---------------------------------------------------------------------------


def test_assemble_happy_path():
    g = normal_graph()
    assert len(g.relations) == 7
    assert g.provenance == PROV


def test_assemble_rejects_six_relations():
    g = normal_graph()
    with pytest.raises(InconsistentComponents):
        assemble_graph(g.acoustic, g.text, g.relations[:6], PROV)


def test_assemble_rejects_level_or_sentiment_mismatch():
    g = normal_graph()
    bad = list(g.relations)
    bad[0] = CrossModalRelation("pitch", "high", "neutral", "neutral")
    with pytest.raises(InconsistentComponents):
        assemble_graph(g.acoustic, g.text, bad, PROV)
    bad[0] = CrossModalRelation("pitch", "normal", "positive", "neutral")
    with pytest.raises(InconsistentComponents):
        assemble_graph(g.acoustic, g.text, bad, PROV)


def test_assemble_requires_provenance():
    g = normal_graph()
    with pytest.raises(InconsistentComponents):
        assemble_graph(g.acoustic, g.text, g.relations, None)
    with pytest.raises(InconsistentComponents):
        assemble_graph(g.acoustic, g.text, g.relations, Provenance("", "x", "y", "z", "h"))


def test_degenerate_text_is_valid():
    g = normal_graph("neutral", ())
    assert g.text.keywords == ()
    assert json.loads(serialize_canonical(g))["keywords"] == []


# canonical JSON -----------------------------------------------------------------------


def test_canonical_layout():
    text = serialize_canonical(normal_graph("negative", ("angry",), "supports"))
    assert list(json.loads(text)) == list(TOP_LEVEL_KEYS)
    assert list(json.loads(text)["acoustic_features"]) == list(FEATURES)
    assert text.startswith('{\n  "acoustic_features": {\n    "pitch": "normal",')
    assert all(line == line.rstrip() for line in text.splitlines())
    assert not text.endswith("\n")


def test_relation_order_is_canonical():
    g = normal_graph("negative", ("x",), "supports")
    shuffled = EmotionGraph(g.acoustic, g.text, tuple(reversed(g.relations)), g.provenance)
    assert serialize_canonical(shuffled) == serialize_canonical(g)


def test_unicode_keyword_round_trip(tmp_path):
    g = normal_graph("positive", ("高兴", "café"))
    text = serialize_canonical(g)
    assert "高兴" in text
    path = write_graph(tmp_path, "utt_1", g)
    path.read_bytes().decode("utf-8")
    assert read_graph(path) == g


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_round_trip_law(g):
    text = serialize_canonical(g)
    assert parse_graph(text) == g
    assert serialize_canonical(parse_graph(text)) == text


# token estimate -------------------------------------------------------------------------


@pytest.mark.parametrize("text, tokens", [("", 0), ("hello world", 3), ("x" * 1024, 256), ("é", 1), ("高兴", 2)])
def test_estimate_tokens(text, tokens):
    assert estimate_tokens(text) == tokens


# truncation ---------------------------------------------------------------------------------


def test_under_budget_unchanged():
    g = normal_graph()
    assert truncate_to_budget(g, 10_000) is g


def test_keyword_trim_keeps_top_three():
    g = normal_graph("negative", ("angry", "delay", "train", "late", "again"), "supports")
    # oracle: size of the graph with provenance dropped, keywords cut to 3 (relations are not neutral)
    d = graph_to_dict(g)
    del d["provenance"]
    d["keywords"] = d["keywords"][:3]
    budget = estimate_tokens(json.dumps(d, indent=2, ensure_ascii=False))
    d4 = dict(d, keywords=["angry", "delay", "train", "late"])
    assert estimate_tokens(json.dumps(d4, indent=2, ensure_ascii=False)) > budget
    out = truncate_to_budget(g, budget)
    assert out.text.keywords == ("angry", "delay", "train")
    assert out.provenance is None
    assert len(out.relations) == 7


def test_neutral_relations_go_before_remaining_keywords():
    g = normal_graph("neutral", ("angry", "delay"), "neutral")
    d = graph_to_dict(g)
    del d["provenance"]
    d["cross_modal_relations"] = []
    budget = estimate_tokens(json.dumps(d, indent=2, ensure_ascii=False))
    out = truncate_to_budget(g, budget)
    assert out.relations == ()
    assert out.text.keywords == ("angry", "delay")


def test_budget_infeasible():
    with pytest.raises(BudgetInfeasible):
        truncate_to_budget(normal_graph(), 8)


def test_core_always_retained():
    g = normal_graph("negative", ("angry",), "supports")
    d = {"acoustic_features": {f: "normal" for f in FEATURES}, "textual_sentiment": "negative", "keywords": [], "cross_modal_relations": []}
    core = estimate_tokens(json.dumps(d, indent=2))
    out = truncate_to_budget(g, core)
    assert out.acoustic == g.acoustic and out.text.sentiment == "negative"
    assert out.relations == () and out.text.keywords == ()
    with pytest.raises(BudgetInfeasible):
        truncate_to_budget(g, core - 1)


@settings(max_examples=150, deadline=None)
@given(graphs(), st.integers(60, 500), st.integers(0, 300))
def test_truncation_idempotent_and_monotone(g, b1, extra):
    b2 = b1 + extra
    try:
        t1 = truncate_to_budget(g, b1)
    except BudgetInfeasible:
        return
    t2 = truncate_to_budget(g, b2)
    assert estimate_tokens(serialize_canonical(t1)) <= b1
    assert truncate_to_budget(t1, b1) == t1
    assert content_items(graph_to_dict(t1)) <= content_items(graph_to_dict(t2))


# free-form rendering ---------------------------------------------------------------------------


def test_freeform_all_normal_fixed_text():
    g = normal_graph()
    text = render_freeform(g)
    assert text.splitlines()[:3] == [
        "The acoustic attributes are: pitch is normal, speech rate is normal, volume is normal, jitter is normal, "
        "shimmer is normal, intensity is normal, articulation rate is normal.",
        "The textual sentiment is neutral.",
        "There are no keywords.",
    ]
    assert render_freeform(g) == text


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_freeform_content_complete(g):
    text = render_freeform(g)
    for kw in g.text.keywords:
        assert kw in text
    assert f"The textual sentiment is {g.text.sentiment}." in text
    for f in FEATURES:
        assert f"{f.replace('_', ' ')} is {g.acoustic[f]}" in text
    for r in g.relations:
        head = f"{r.feature.replace('_', ' ')} ({r.level})"
        verb = "is neutral toward" if r.relation == "neutral" else r.relation
        assert f"{head} {verb} the {r.sentiment} sentiment" in text
        if r.rationale:
            assert r.rationale in text
    for value in g.provenance.to_dict().values():
        assert value in text
    assert "{" not in text


def test_freeform_injective():
    rng = random.Random(7)
    gs = {serialize_canonical(g): g for g in (make_graph(rng) for _ in range(300))}
    renders = {render_freeform(g) for g in gs.values()}
    assert len(renders) == len(gs)


def test_flat_has_no_json_syntax():
    g = make_graph(random.Random(3))
    text = render_flat(graph_to_dict(g))
    assert not set(text) & set('{}[]"')
    assert f"textual_sentiment: {g.text.sentiment}" in text


def test_canonical_json_matches_documented_schema():
    import jsonschema

    schema = json.loads((Path(__file__).parents[1] / "docs" / "emotion_graph.schema.json").read_text())
    rng = random.Random(99)
    for _ in range(200):
        jsonschema.validate(json.loads(serialize_canonical(make_graph(rng))), schema)
