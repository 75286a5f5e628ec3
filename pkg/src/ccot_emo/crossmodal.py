"""Supports / contradicts / neutral judgments of each acoustic cue against the text sentiment."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Protocol

from .calibration import LEVELS, AcousticAttributes
from .errors import BackendUnavailable, ClientError, MalformedRelationResponse
from .model_client import GenerationParams, ModelClient, ModelRequest
from .prosody_dsp import FEATURES
from .resources import load_json, load_template
from .text_attributes import SENTIMENTS

logger = logging.getLogger(__name__)

RELATIONS = ("supports", "contradicts", "neutral")


@dataclass(frozen=True)
class CrossModalRelation:
    feature: str
    level: str
    sentiment: str
    relation: str
    rationale: str | None = None

    def __post_init__(self):
        if self.feature not in FEATURES:
            raise ValueError(f"unknown feature {self.feature!r}")
        if self.level not in LEVELS:
            raise ValueError(f"unknown level {self.level!r}")
        if self.sentiment not in SENTIMENTS:
            raise ValueError(f"unknown sentiment {self.sentiment!r}")
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")


class RelationBackend(Protocol):
    backend_id: str

    def relations(self, attrs: AcousticAttributes, sentiment: str) -> list[CrossModalRelation]: ...


class RuleTable:
    """Total (feature, level, sentiment) -> relation lookup loaded from a versioned JSON table."""

    def __init__(self, data: dict | None = None):
        data = data or load_json("relation_rules.json")
        self.table = data["table"]
        self.version = str(data.get("version", "0"))
        self.backend_id = f"rule-table-v{self.version}"
        for f in FEATURES:
            for lv in LEVELS:
                for s in SENTIMENTS:
                    if self.table.get(f, {}).get(lv, {}).get(s) not in RELATIONS:
                        raise ValueError(f"rule table is not total: missing or bad cell ({f}, {lv}, {s})")

    def lookup(self, feature: str, level: str, sentiment: str) -> str:
        return self.table[feature][level][sentiment]

    def relations(self, attrs: AcousticAttributes, sentiment: str) -> list[CrossModalRelation]:
        return [CrossModalRelation(f, attrs[f], sentiment, self.lookup(f, attrs[f], sentiment)) for f in FEATURES]


_DEFAULT_TABLE: RuleTable | None = None


def rule_table_relation(feature: str, level: str, sentiment: str) -> str:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = RuleTable()
    return _DEFAULT_TABLE.lookup(feature, level, sentiment)


_LINE = re.compile(
    r"^\s*([a-z][a-z _]*?)\s*:\s*(supports|contradicts|neutral)\s*(?:\|\s*(?P<why>.*?))?\s*$",
    re.IGNORECASE,
)


def parse_relation_response(text: str, attrs: AcousticAttributes, sentiment: str) -> list[CrossModalRelation]:
    """Parse the seven-line ``cue: relation [| reason]`` reply; all-or-nothing."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != len(FEATURES):
        raise MalformedRelationResponse(f"expected {len(FEATURES)} lines, got {len(lines)}")
    found: dict[str, CrossModalRelation] = {}
    for ln in lines:
        m = _LINE.match(ln)
        if not m:
            raise MalformedRelationResponse(f"unparseable line {ln!r}")
        feature = re.sub(r"\s+", "_", m.group(1).strip().lower())
        if feature not in FEATURES:
            raise MalformedRelationResponse(f"unknown cue {feature!r}")
        if feature in found:
            raise MalformedRelationResponse(f"cue {feature!r} listed twice")
        why = m.group("why") or None
        found[feature] = CrossModalRelation(feature, attrs[feature], sentiment, m.group(2).lower(), why)
    return [found[f] for f in FEATURES]


class RemoteRelationBackend:
    """One batched chat call per utterance; one retry, then the rule table if allowed."""

    def __init__(
        self,
        client: ModelClient,
        params: GenerationParams | None = None,
        fallback: RuleTable | None = None,
        prompt_dir=None,
    ):
        self.client = client
        self.params = params or GenerationParams(model_id=client.model_id, max_output_tokens=256)
        self.fallback = fallback
        self.prompt_dir = prompt_dir
        self.backend_id = f"remote-{self.params.model_id}"

    def prompt(self, attrs: AcousticAttributes, sentiment: str, template: str = "relations") -> str:
        cues = ", ".join(f"{f}: {attrs[f]}" for f in FEATURES)
        return load_template(template, override_dir=self.prompt_dir).format(
            cues=cues, sentiment=sentiment, cue_names=", ".join(FEATURES)
        )

    def relations(self, attrs: AcousticAttributes, sentiment: str) -> list[CrossModalRelation]:
        error: Exception | None = None
        for template in ("relations", "relations_retry"):
            req = ModelRequest.build(self.prompt(attrs, sentiment, template), None, self.params)
            try:
                reply = self.client.query(req).text
            except ClientError as exc:
                error = BackendUnavailable(f"{self.backend_id}: {exc}")
                continue
            try:
                return parse_relation_response(reply, attrs, sentiment)
            except MalformedRelationResponse as exc:
                logger.info("malformed relation reply: %s", exc)
                error = exc
        if self.fallback is not None:
            logger.warning("relations fell back to %s (%s)", self.fallback.backend_id, error)
            return self.fallback.relations(attrs, sentiment)
        raise error


def infer_relations(attrs: AcousticAttributes, sentiment: str, backend: RelationBackend | None = None) -> list[CrossModalRelation]:
    if sentiment not in SENTIMENTS:
        raise ValueError(f"unknown sentiment {sentiment!r}")
    backend = backend or RuleTable()
    rels = backend.relations(attrs, sentiment)
    if [r.feature for r in rels] != list(FEATURES):
        raise MalformedRelationResponse("backend did not return one relation per feature")
    return rels
