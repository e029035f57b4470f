"""Scene graph data model, strict JSON codec, and set-overlap primitives.

A scene graph is a triple of element sets: entity names, (entity, attribute)
pairs, and directed (subject, predicate, object) relation triples.  Set
semantics apply throughout, but first-occurrence order is preserved so every
downstream stage stays deterministic and serialization is byte-stable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from .errors import DanglingReference, MalformedJson, SchemaViolation

logger = logging.getLogger(__name__)

Attribute = tuple[str, str]
Relation = tuple[str, str, str]

ENTITY_KEY = "entity"
ATTRIBUTE_KEY = "attribute pairs"
RELATION_KEY = "relationships"
SCHEMA_KEYS = (ENTITY_KEY, ATTRIBUTE_KEY, RELATION_KEY)

# tags for universe members; attributes and entity pairs never collide
_ATTR_TAG = "attr"
_PAIR_TAG = "pair"


class ElementKind(str, Enum):
    ENTITY = "entity"
    ATTRIBUTE = "attribute"
    RELATION = "relation"


@dataclass(frozen=True)
class ElementRef:
    """Position of one element within a scene graph's ordered sets."""

    kind: ElementKind
    index: int


@dataclass(frozen=True)
class SceneGraph:
    """Immutable scene graph; construct through :meth:`from_parts` or the parser."""

    entities: tuple[str, ...] = ()
    attributes: tuple[Attribute, ...] = ()
    relations: tuple[Relation, ...] = ()

    @classmethod
    def from_parts(
        cls,
        entities: Iterable[str],
        attributes: Iterable[Sequence[str]],
        relations: Iterable[Sequence[str]],
        *,
        on_dangling: str = "error",
        strict: bool = False,
    ) -> "SceneGraph":
        """Trim, deduplicate, and close over referenced entities.

        ``on_dangling`` is either ``"error"`` (raise :class:`DanglingReference`)
        or ``"add"`` (append missing entities in first-reference order).  In
        strict mode duplicates raise instead of being dropped.
        """
        ents = _clean_names(entities, ENTITY_KEY, strict)
        attrs = _clean_rows(attributes, 2, ATTRIBUTE_KEY, strict)
        rels = _clean_rows(relations, 3, RELATION_KEY, strict)

        known = set(ents)
        appended: list[str] = []
        for name in _referenced_entities(attrs, rels):
            if name in known:
                continue
            if on_dangling != "add":
                raise DanglingReference(name)
            appended.append(name)
            known.add(name)
        if appended:
            logger.warning("added %d dangling entity name(s): %s", len(appended), appended)
        return cls(tuple(ents) + tuple(appended), tuple(attrs), tuple(rels))

    def validate(self) -> None:
        """Re-check all invariants; raises on the first violation."""
        _clean_names(self.entities, ENTITY_KEY, strict=True)
        _clean_rows(self.attributes, 2, ATTRIBUTE_KEY, strict=True)
        _clean_rows(self.relations, 3, RELATION_KEY, strict=True)
        known = set(self.entities)
        for name in _referenced_entities(self.attributes, self.relations):
            if name not in known:
                raise DanglingReference(name)

    # -- element-set views ---------------------------------------------------

    @property
    def element_count(self) -> int:
        return len(self.entities) + len(self.attributes) + len(self.relations)

    @property
    def is_empty(self) -> bool:
        return self.element_count == 0

    def refs(self) -> Iterator[ElementRef]:
        for i in range(len(self.entities)):
            yield ElementRef(ElementKind.ENTITY, i)
        for i in range(len(self.attributes)):
            yield ElementRef(ElementKind.ATTRIBUTE, i)
        for i in range(len(self.relations)):
            yield ElementRef(ElementKind.RELATION, i)

    def element(self, ref: ElementRef):
        seq: Sequence = {
            ElementKind.ENTITY: self.entities,
            ElementKind.ATTRIBUTE: self.attributes,
            ElementKind.RELATION: self.relations,
        }[ref.kind]
        return seq[ref.index]

    def signature(self) -> tuple[frozenset, frozenset, frozenset]:
        """Order-insensitive identity of the element sets."""
        return (
            frozenset(self.entities),
            frozenset(self.attributes),
            frozenset(self.relations),
        )

    def same_elements(self, other: "SceneGraph") -> bool:
        return self.signature() == other.signature()

    def contains_elements_of(self, other: "SceneGraph") -> bool:
        a, b = other.signature(), self.signature()
        return a[0] <= b[0] and a[1] <= b[1] and a[2] <= b[2]


@dataclass(frozen=True)
class UniverseSet:
    """Attribute pairs plus ordered (subject, object) endpoint pairs.

    Predicates are deliberately excluded, so parallel edges between the same
    ordered endpoints collapse to one member.
    """

    members: frozenset[tuple[str, str, str]]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def _clean_names(values: Iterable, key: str, strict: bool) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    dropped = 0
    for value in values:
        if not isinstance(value, str):
            raise SchemaViolation(key, f"expected string, got {type(value).__name__}")
        name = value.strip()
        if not name:
            raise SchemaViolation(key, "empty string")
        if name in seen:
            if strict:
                raise SchemaViolation(key, f"duplicate {name!r}")
            dropped += 1
            continue
        seen.add(name)
        out.append(name)
    if dropped:
        logger.warning("%s: dropped %d duplicate item(s)", key, dropped)
    return out


def _clean_rows(rows: Iterable, arity: int, key: str, strict: bool) -> list[tuple]:
    out: list[tuple] = []
    seen: set[tuple] = set()
    dropped = 0
    for row in rows:
        if isinstance(row, str) or not isinstance(row, Sequence):
            raise SchemaViolation(key, f"expected array, got {type(row).__name__}")
        if len(row) != arity:
            raise SchemaViolation(key, f"expected {arity} items, got {len(row)}")
        cleaned = []
        for item in row:
            if not isinstance(item, str):
                raise SchemaViolation(key, f"expected string, got {type(item).__name__}")
            item = item.strip()
            if not item:
                raise SchemaViolation(key, "empty string")
            cleaned.append(item)
        tup = tuple(cleaned)
        if tup in seen:
            if strict:
                raise SchemaViolation(key, f"duplicate {list(tup)!r}")
            dropped += 1
            continue
        seen.add(tup)
        out.append(tup)
    if dropped:
        logger.warning("%s: dropped %d duplicate item(s)", key, dropped)
    return out


def _referenced_entities(attrs: Iterable[Attribute], rels: Iterable[Relation]) -> Iterator[str]:
    for entity, _ in attrs:
        yield entity
    for subject, _, obj in rels:
        yield subject
        yield obj


def parse_scene_graph(text: str, *, on_dangling: str = "error", strict: bool = False) -> SceneGraph:
    """Parse the strict three-field JSON object into a :class:`SceneGraph`.

    The object must carry exactly the keys ``"entity"``, ``"attribute pairs"``,
    and ``"relationships"``.  Duplicates are dropped with a warning unless
    strict mode is on; dangling entity references follow ``on_dangling``.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(obj, dict):
        raise MalformedJson(f"top-level value is {type(obj).__name__}, not an object")
    for key in SCHEMA_KEYS:
        if key not in obj:
            raise SchemaViolation(key, "missing key")
    for key in obj:
        if key not in SCHEMA_KEYS:
            raise SchemaViolation(key, "unexpected key")
    for key in SCHEMA_KEYS:
        if not isinstance(obj[key], list):
            raise SchemaViolation(key, f"expected array, got {type(obj[key]).__name__}")
    return SceneGraph.from_parts(
        obj[ENTITY_KEY],
        obj[ATTRIBUTE_KEY],
        obj[RELATION_KEY],
        on_dangling=on_dangling,
        strict=strict,
    )


def serialize_scene_graph(g: SceneGraph, *, canonical: bool = False, indent: int | None = None) -> str:
    """Serialize with fixed key order; ``canonical`` sorts each element set."""
    ents: Sequence[str] = g.entities
    attrs: Sequence[Attribute] = g.attributes
    rels: Sequence[Relation] = g.relations
    if canonical:
        ents = sorted(ents)
        attrs = sorted(attrs)
        rels = sorted(rels)
    payload = {
        ENTITY_KEY: list(ents),
        ATTRIBUTE_KEY: [list(a) for a in attrs],
        RELATION_KEY: [list(r) for r in rels],
    }
    return json.dumps(payload, ensure_ascii=False, indent=indent)


def element_universe(g: SceneGraph) -> UniverseSet:
    """Overlap universe: attribute pairs and ordered relation endpoint pairs."""
    members = {(_ATTR_TAG, e, v) for e, v in g.attributes}
    members |= {(_PAIR_TAG, s, o) for s, _, o in g.relations}
    return UniverseSet(frozenset(members))


def jaccard_counts(a: SceneGraph, b: SceneGraph) -> tuple[int, int]:
    """Return exact (intersection, union) sizes of the two universes."""
    ua = element_universe(a).members
    ub = element_universe(b).members
    return len(ua & ub), len(ua | ub)


def jaccard_overlap(g_neg: SceneGraph, g_pos: SceneGraph) -> float:
    """Jaccard overlap of the two element universes.

    Both universes empty is defined as 1.0 (logged); exactly one empty yields
    0.0 through the plain ratio.
    """
    inter, union = jaccard_counts(g_neg, g_pos)
    if union == 0:
        logger.debug("both element universes empty; defining overlap as 1.0")
        return 1.0
    return inter / union


def jaccard_fraction(a: SceneGraph, b: SceneGraph) -> Fraction:
    """Exact rational Jaccard overlap, for drift-free band comparisons."""
    inter, union = jaccard_counts(a, b)
    if union == 0:
        return Fraction(1)
    return Fraction(inter, union)
