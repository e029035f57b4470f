"""Lexical alignment of a rationale against its scene graph.

The grounded subgraph keeps exactly the elements the rationale actually
mentions; everything else lands in the residual pool, which later supplies
same-scene material for perturbations.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Union

from .errors import EmptyMatch, NotASubgraph
from .rationale import Rationale
from .scene_graph import ElementKind, ElementRef, SceneGraph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchConfig:
    """Controls how graph elements are matched against rationale text.

    ``attribute_window`` is ``"step"`` (value must appear in a segment where
    the owning entity matched) or ``"any"`` (value may appear anywhere).  With
    ``relation_requires_predicate`` off, a relation whose endpoints are both
    kept survives if its predicate matches anywhere or its endpoints co-occur
    in one segment.
    """

    case_fold: bool = True
    token_boundary: bool = True
    relation_requires_predicate: bool = False
    attribute_window: str = "step"

    def __post_init__(self):
        if self.attribute_window not in ("step", "any"):
            raise ValueError(f"unknown attribute_window {self.attribute_window!r}")


@dataclass(frozen=True)
class GroundingEvidence:
    """Which rationale segment matched one element of the parent graph."""

    ref: ElementRef  # indexes into the parent graph, not the subgraph
    step: int
    span: tuple[int, int]


@dataclass(frozen=True)
class GroundedSubgraph:
    graph: SceneGraph
    provenance: tuple[GroundingEvidence, ...] = ()


@dataclass(frozen=True)
class ResidualPool:
    """Elements of the parent graph that stayed outside the grounded subgraph.

    The pool is a plain element collection, not a closed graph: a residual
    relation may legitimately reference entities that were grounded.
    """

    entities: tuple[str, ...] = ()
    attributes: tuple[tuple[str, str], ...] = ()
    relations: tuple[tuple[str, str, str], ...] = ()

    @property
    def element_count(self) -> int:
        return len(self.entities) + len(self.attributes) + len(self.relations)

    @property
    def is_empty(self) -> bool:
        return self.element_count == 0

    def attribute_values(self) -> tuple[str, ...]:
        return _ordered_unique(v for _, v in self.attributes)

    def predicates(self) -> tuple[str, ...]:
        return _ordered_unique(p for _, p, _ in self.relations)

    def all_elements(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [("entity", e) for e in self.entities]
        out += [("attribute", a) for a in self.attributes]
        out += [("relation", r) for r in self.relations]
        return out


def _ordered_unique(items) -> tuple:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return tuple(out)


def _phrase_pattern(phrase: str, cfg: MatchConfig) -> re.Pattern:
    # whitespace-insensitive within the phrase; optional word-boundary guards
    body = r"\s+".join(re.escape(tok) for tok in phrase.split())
    if cfg.token_boundary:
        body = rf"(?<!\w){body}(?!\w)"
    flags = re.IGNORECASE if cfg.case_fold else 0
    return re.compile(body, flags)


def _first_match_per_segment(phrase: str, segments: tuple[str, ...], cfg: MatchConfig) -> dict[int, tuple[int, int]]:
    pattern = _phrase_pattern(phrase, cfg)
    hits: dict[int, tuple[int, int]] = {}
    for idx, segment in enumerate(segments):
        m = pattern.search(segment)
        if m:
            hits[idx] = m.span()
    return hits


def extract_grounded_subgraph(
    sg_pos: SceneGraph,
    rationale: Rationale,
    cfg: MatchConfig = MatchConfig(),
) -> GroundedSubgraph:
    """Select the elements of ``sg_pos`` the rationale lexically mentions.

    Entities are kept when their name matches any segment.  Attributes need a
    kept entity plus a value match inside the configured window.  Relations
    need both endpoints kept plus predicate or co-occurrence evidence.  The
    result preserves the parent's element order.  Raises :class:`EmptyMatch`
    when not a single entity matches.
    """
    segments = rationale.segments()

    entity_hits: dict[str, dict[int, tuple[int, int]]] = {}
    for name in sg_pos.entities:
        hits = _first_match_per_segment(name, segments, cfg)
        if hits:
            entity_hits[name] = hits
    if not entity_hits:
        raise EmptyMatch("no entity name occurs in the rationale")

    evidence: list[GroundingEvidence] = []
    for idx, name in enumerate(sg_pos.entities):
        hits = entity_hits.get(name)
        if hits:
            step = min(hits)
            evidence.append(GroundingEvidence(ElementRef(ElementKind.ENTITY, idx), step, hits[step]))

    kept_attrs: list[tuple[str, str]] = []
    for idx, (entity, value) in enumerate(sg_pos.attributes):
        hits = entity_hits.get(entity)
        if not hits:
            continue
        window = sorted(hits) if cfg.attribute_window == "step" else range(len(segments))
        pattern = _phrase_pattern(value, cfg)
        for step in window:
            m = pattern.search(segments[step])
            if m:
                kept_attrs.append((entity, value))
                evidence.append(GroundingEvidence(ElementRef(ElementKind.ATTRIBUTE, idx), step, m.span()))
                break

    kept_rels: list[tuple[str, str, str]] = []
    for idx, (subj, pred, obj) in enumerate(sg_pos.relations):
        s_hits = entity_hits.get(subj)
        o_hits = entity_hits.get(obj)
        if not s_hits or not o_hits:
            continue
        pred_hit = None
        pattern = _phrase_pattern(pred, cfg)
        for step in range(len(segments)):
            m = pattern.search(segments[step])
            if m:
                pred_hit = (step, m.span())
                break
        if pred_hit is not None:
            kept_rels.append((subj, pred, obj))
            evidence.append(GroundingEvidence(ElementRef(ElementKind.RELATION, idx), *pred_hit))
            continue
        if cfg.relation_requires_predicate:
            continue
        shared = sorted(set(s_hits) & set(o_hits))
        if shared:
            step = shared[0]
            kept_rels.append((subj, pred, obj))
            evidence.append(GroundingEvidence(ElementRef(ElementKind.RELATION, idx), step, s_hits[step]))

    # closure: an entity demanded by a kept attribute/relation stays kept even
    # if its own name never matched (cannot occur under the default config)
    needed = set(entity_hits)
    for entity, _ in kept_attrs:
        needed.add(entity)
    for subj, _, obj in kept_rels:
        needed.add(subj)
        needed.add(obj)
    kept_entities = tuple(e for e in sg_pos.entities if e in needed)

    graph = SceneGraph.from_parts(kept_entities, kept_attrs, kept_rels)
    return GroundedSubgraph(graph, tuple(evidence))


def residual_pool(sg_pos: SceneGraph, sg_c: Union[GroundedSubgraph, SceneGraph]) -> ResidualPool:
    """Complement of the grounded subgraph within the parent, element-wise.

    Raises :class:`NotASubgraph` when ``sg_c`` holds any element the parent
    does not.
    """
    graph = sg_c.graph if isinstance(sg_c, GroundedSubgraph) else sg_c
    if not sg_pos.contains_elements_of(graph):
        raise NotASubgraph("grounded subgraph is not element-wise contained in the parent")
    ents = set(graph.entities)
    attrs = set(graph.attributes)
    rels = set(graph.relations)
    return ResidualPool(
        entities=tuple(e for e in sg_pos.entities if e not in ents),
        attributes=tuple(a for a in sg_pos.attributes if a not in attrs),
        relations=tuple(r for r in sg_pos.relations if r not in rels),
    )
