"""Controlled perturbation operators and negative candidate generation.

Four edits target the grounded subgraph: swap the endpoints of a relation,
replace an element with same-scene material from the residual pool, remove an
element, or add a pool element.  Recomposition then reattaches the untouched
residual remainder, so every emitted candidate is a full, valid scene graph
that differs from the positive graph only through the applied edits.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import (
    DuplicateCollision,
    EmptyPool,
    EmptyPoolForKind,
    IndexOutOfRange,
    NoApplicableOperator,
    NoOpSwap,
    WouldEmpty,
)
from .grounding import GroundedSubgraph, ResidualPool
from .scene_graph import ElementKind, ElementRef, SceneGraph

logger = logging.getLogger(__name__)

# canonical operator order; sampling iterates this so runs are reproducible
OPERATOR_TAGS = ("swap", "replace", "shorten", "overthink")

# payload resampling budget before an edit gives up with DuplicateCollision
_RESAMPLE_LIMIT = 8

# candidate attempts per requested negative before emitting fewer
_ATTEMPTS_PER_CANDIDATE = 32


@dataclass(frozen=True)
class PerturbationOp:
    """One applied edit, recorded by content for auditability.

    ``kind`` is the element kind edited ("entity", "attribute", "relation")
    or "predicate" for predicate-only replacements, which flags that the
    payload was drawn from residual relation predicates.
    """

    tag: str
    kind: str
    target: object  # element before the edit; None for overthink
    payload: object  # element introduced; None for shorten

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "kind": self.kind,
            "target": _jsonable(self.target),
            "payload": _jsonable(self.payload),
        }


@dataclass(frozen=True)
class EditTrace:
    ops: tuple[PerturbationOp, ...]
    seed: int

    @property
    def predicate_only(self) -> bool:
        """True when every edit was a predicate replacement (overlap-invisible)."""
        return bool(self.ops) and all(op.kind == "predicate" for op in self.ops)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "ops": [op.to_dict() for op in self.ops]}


@dataclass
class NegativeCandidate:
    """A recomposed negative graph plus everything later stages attach to it."""

    graph: SceneGraph
    trace: EditTrace
    jaccard: float | None = None
    rationale: object = None  # Rationale, filled by the generation stage
    embedding: object = None  # Embedding, filled by the selection stage
    duplicated: tuple = ()  # pool elements to duplicate in the prompt only

    @property
    def operator(self) -> str:
        return "+".join(op.tag for op in self.trace.ops)


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _subgraph(sg: Union[GroundedSubgraph, SceneGraph]) -> SceneGraph:
    return sg.graph if isinstance(sg, GroundedSubgraph) else sg


def _check_ref(sg: SceneGraph, ref: ElementRef) -> None:
    sizes = {
        ElementKind.ENTITY: len(sg.entities),
        ElementKind.ATTRIBUTE: len(sg.attributes),
        ElementKind.RELATION: len(sg.relations),
    }
    if not 0 <= ref.index < sizes[ref.kind]:
        raise IndexOutOfRange(f"{ref.kind.value} index {ref.index} out of range")


# ---------------------------------------------------------------------------
# swap


def _swap(sg: SceneGraph, rel_index: int) -> tuple[SceneGraph, PerturbationOp]:
    _check_ref(sg, ElementRef(ElementKind.RELATION, rel_index))
    subj, pred, obj = sg.relations[rel_index]
    if subj == obj:
        raise NoOpSwap(f"relation {rel_index} is reflexive")
    swapped = (obj, pred, subj)
    if swapped in sg.relations:
        raise DuplicateCollision(f"swapped triple {list(swapped)} already present")
    rels = list(sg.relations)
    rels[rel_index] = swapped
    out = SceneGraph(sg.entities, sg.attributes, tuple(rels))
    return out, PerturbationOp("swap", "relation", (subj, pred, obj), swapped)


def swap(sg_c: Union[GroundedSubgraph, SceneGraph], rel_index: int) -> SceneGraph:
    """Exchange subject and object of the relation at ``rel_index``."""
    return _swap(_subgraph(sg_c), rel_index)[0]


def _swap_indices(sg: SceneGraph) -> list[int]:
    present = set(sg.relations)
    return [
        i for i, (s, p, o) in enumerate(sg.relations) if s != o and (o, p, s) not in present
    ]


# ---------------------------------------------------------------------------
# replace


def _replace_entity(
    sg: SceneGraph, index: int, pool: ResidualPool, rng: random.Random, pinned: str | None
) -> tuple[SceneGraph, PerturbationOp]:
    if not pool.entities and pinned is None:
        raise EmptyPoolForKind("residual pool holds no entities")
    old = sg.entities[index]
    attempts = 1 if pinned is not None else _RESAMPLE_LIMIT
    for _ in range(attempts):
        new = pinned if pinned is not None else rng.choice(pool.entities)
        if new == old or new in sg.entities:
            continue
        entities = tuple(new if e == old else e for e in sg.entities)
        attrs = tuple((new if e == old else e, v) for e, v in sg.attributes)
        rels = tuple(
            (new if s == old else s, p, new if o == old else o) for s, p, o in sg.relations
        )
        if len(set(attrs)) != len(attrs) or len(set(rels)) != len(rels):
            continue  # rewrite collapsed two elements into one
        out = SceneGraph(entities, attrs, rels)
        return out, PerturbationOp("replace", "entity", old, new)
    raise DuplicateCollision(f"no usable replacement for entity {old!r}")


def _replace_attribute(
    sg: SceneGraph, index: int, pool: ResidualPool, rng: random.Random, pinned: str | None
) -> tuple[SceneGraph, PerturbationOp]:
    values = pool.attribute_values()
    if not values and pinned is None:
        raise EmptyPoolForKind("residual pool holds no attribute values")
    entity, old_value = sg.attributes[index]
    present = set(sg.attributes)
    attempts = 1 if pinned is not None else _RESAMPLE_LIMIT
    for _ in range(attempts):
        new_value = pinned if pinned is not None else rng.choice(values)
        if new_value == old_value or (entity, new_value) in present:
            continue
        attrs = list(sg.attributes)
        attrs[index] = (entity, new_value)
        out = SceneGraph(sg.entities, tuple(attrs), sg.relations)
        return out, PerturbationOp("replace", "attribute", (entity, old_value), (entity, new_value))
    raise DuplicateCollision(f"no usable replacement value for attribute {[entity, old_value]}")


def _replace_predicate(
    sg: SceneGraph, index: int, pool: ResidualPool, rng: random.Random, pinned: str | None
) -> tuple[SceneGraph, PerturbationOp]:
    predicates = pool.predicates()
    if not predicates and pinned is None:
        raise EmptyPoolForKind("residual pool holds no predicates")
    subj, old_pred, obj = sg.relations[index]
    present = set(sg.relations)
    attempts = 1 if pinned is not None else _RESAMPLE_LIMIT
    for _ in range(attempts):
        new_pred = pinned if pinned is not None else rng.choice(predicates)
        if new_pred == old_pred or (subj, new_pred, obj) in present:
            continue
        rels = list(sg.relations)
        rels[index] = (subj, new_pred, obj)
        out = SceneGraph(sg.entities, sg.attributes, tuple(rels))
        return out, PerturbationOp("replace", "predicate", (subj, old_pred, obj), (subj, new_pred, obj))
    raise DuplicateCollision(f"no usable replacement predicate for {[subj, old_pred, obj]}")


def replace(
    sg_c: Union[GroundedSubgraph, SceneGraph],
    target: ElementRef,
    pool: ResidualPool,
    rng: random.Random | None = None,
    *,
    replacement: str | None = None,
) -> SceneGraph:
    """Substitute the targeted element with residual-pool material.

    Entity replacement rewrites every occurrence of the old name; attribute
    replacement swaps the value; relation targets get a new predicate drawn
    from residual relations.  ``replacement`` pins the payload (no sampling).
    """
    sg = _subgraph(sg_c)
    _check_ref(sg, target)
    rng = rng if rng is not None else random.Random(0)
    if target.kind is ElementKind.ENTITY:
        return _replace_entity(sg, target.index, pool, rng, replacement)[0]
    if target.kind is ElementKind.ATTRIBUTE:
        return _replace_attribute(sg, target.index, pool, rng, replacement)[0]
    return _replace_predicate(sg, target.index, pool, rng, replacement)[0]


def _replace_kinds(sg: SceneGraph, pool: ResidualPool) -> list[str]:
    kinds = []
    if sg.entities and pool.entities:
        kinds.append("entity")
    if sg.attributes and pool.attribute_values():
        kinds.append("attribute")
    if sg.relations and pool.predicates():
        kinds.append("predicate")
    return kinds


# ---------------------------------------------------------------------------
# shorten


def _cascade_size(sg: SceneGraph, entity: str) -> int:
    incident_attrs = sum(1 for e, _ in sg.attributes if e == entity)
    incident_rels = sum(1 for s, _, o in sg.relations if entity in (s, o))
    return 1 + incident_attrs + incident_rels


def _shorten(sg: SceneGraph, ref: ElementRef) -> tuple[SceneGraph, PerturbationOp]:
    _check_ref(sg, ref)
    if ref.kind is ElementKind.ENTITY:
        name = sg.entities[ref.index]
        if sg.element_count - _cascade_size(sg, name) == 0:
            raise WouldEmpty(f"removing entity {name!r} would empty the graph")
        out = SceneGraph(
            tuple(e for e in sg.entities if e != name),
            tuple(a for a in sg.attributes if a[0] != name),
            tuple(r for r in sg.relations if name not in (r[0], r[2])),
        )
        return out, PerturbationOp("shorten", "entity", name, None)
    if sg.element_count - 1 == 0:
        raise WouldEmpty("removing the sole element would empty the graph")
    if ref.kind is ElementKind.ATTRIBUTE:
        target = sg.attributes[ref.index]
        attrs = sg.attributes[: ref.index] + sg.attributes[ref.index + 1 :]
        return SceneGraph(sg.entities, attrs, sg.relations), PerturbationOp(
            "shorten", "attribute", target, None
        )
    target = sg.relations[ref.index]
    rels = sg.relations[: ref.index] + sg.relations[ref.index + 1 :]
    return SceneGraph(sg.entities, sg.attributes, rels), PerturbationOp(
        "shorten", "relation", target, None
    )


def shorten(sg_c: Union[GroundedSubgraph, SceneGraph], target: ElementRef) -> SceneGraph:
    """Remove one element; removing an entity cascades to everything incident."""
    return _shorten(_subgraph(sg_c), target)[0]


def _shorten_refs(sg: SceneGraph) -> list[ElementRef]:
    total = sg.element_count
    refs = []
    for i, name in enumerate(sg.entities):
        if total - _cascade_size(sg, name) >= 1:
            refs.append(ElementRef(ElementKind.ENTITY, i))
    if total >= 2:
        refs += [ElementRef(ElementKind.ATTRIBUTE, i) for i in range(len(sg.attributes))]
        refs += [ElementRef(ElementKind.RELATION, i) for i in range(len(sg.relations))]
    return refs


# ---------------------------------------------------------------------------
# overthink


def _element_kind(element) -> str:
    if isinstance(element, str):
        return "entity"
    if len(element) == 2:
        return "attribute"
    return "relation"


def _add_element(sg: SceneGraph, element) -> SceneGraph:
    kind = _element_kind(element)
    entities, attrs, rels = list(sg.entities), list(sg.attributes), list(sg.relations)
    needed: list[str] = []
    if kind == "entity":
        needed = [element]
    elif kind == "attribute":
        attrs.append(tuple(element))
        needed = [element[0]]
    else:
        rels.append(tuple(element))
        needed = [element[0], element[2]]
    for name in needed:  # entity closure for the new element
        if name not in entities:
            entities.append(name)
    return SceneGraph(tuple(entities), tuple(attrs), tuple(rels))


def _addable_elements(sg: SceneGraph, pool: ResidualPool) -> list[tuple[str, object]]:
    ents, attrs, rels = set(sg.entities), set(sg.attributes), set(sg.relations)
    out = []
    for kind, element in pool.all_elements():
        if kind == "entity" and element in ents:
            continue
        if kind == "attribute" and element in attrs:
            continue
        if kind == "relation" and element in rels:
            continue
        out.append((kind, element))
    return out


def _overthink(
    sg: SceneGraph, pool: ResidualPool, rng: random.Random, pinned=None
) -> tuple[SceneGraph, PerturbationOp]:
    if pinned is not None:
        kind, element = _element_kind(pinned), tuple(pinned) if not isinstance(pinned, str) else pinned
    else:
        addable = _addable_elements(sg, pool)
        if not addable:
            raise EmptyPool("residual pool holds nothing addable to this graph")
        kind, element = rng.choice(addable)
    return _add_element(sg, element), PerturbationOp("overthink", kind, None, element)


def overthink(
    sg_c: Union[GroundedSubgraph, SceneGraph],
    pool: ResidualPool,
    rng: random.Random | None = None,
    *,
    element=None,
) -> SceneGraph:
    """Add one residual-pool element, pulling in any entities it requires."""
    rng = rng if rng is not None else random.Random(0)
    return _overthink(_subgraph(sg_c), pool, rng, element)[0]


# ---------------------------------------------------------------------------
# recomposition


def recompose(
    perturbed: SceneGraph, remainder: Union[ResidualPool, SceneGraph]
) -> SceneGraph:
    """Element-wise union of the perturbed subgraph with the residual remainder.

    Entities are unified by name and the union is closed: an entity referenced
    by a surviving remainder element is re-added even when an edit deleted it
    from the subgraph, so remainder elements are never dropped.
    """
    if isinstance(remainder, SceneGraph):
        rem_ents: Sequence[str] = remainder.entities
        rem_attrs: Sequence = remainder.attributes
        rem_rels: Sequence = remainder.relations
    else:
        rem_ents, rem_attrs, rem_rels = remainder.entities, remainder.attributes, remainder.relations
    # overlap between the two sides is expected union behavior, so dedup
    # silently here instead of letting from_parts warn about it
    entities = list(_ordered_union(perturbed.entities, rem_ents))
    attrs = _ordered_union(perturbed.attributes, rem_attrs)
    rels = _ordered_union(perturbed.relations, rem_rels)
    known = set(entities)
    for name in _closure_entities(attrs, rels):
        if name not in known:
            entities.append(name)
            known.add(name)
    return SceneGraph(tuple(entities), attrs, rels)


def _ordered_union(first: Sequence, second: Sequence) -> tuple:
    seen = set()
    out = []
    for item in list(first) + list(second):
        if item not in seen:
            seen.add(item)
            out.append(item)
    return tuple(out)


def _closure_entities(attrs: Sequence, rels: Sequence):
    for entity, _ in attrs:
        yield entity
    for subj, _, obj in rels:
        yield subj
        yield obj


def apply_operator(
    sg_c: Union[GroundedSubgraph, SceneGraph],
    pool: ResidualPool,
    tag: str,
    *,
    kind: str | None = None,
    index: int | None = None,
    replacement: str | None = None,
    element=None,
    rng: random.Random | None = None,
) -> tuple[SceneGraph, PerturbationOp]:
    """Apply one named operator, sampling any targeting left unspecified."""
    sg = _subgraph(sg_c)
    rng = rng if rng is not None else random.Random(0)
    if tag == "swap":
        if index is None:
            choices = _swap_indices(sg)
            if not choices:
                raise NoApplicableOperator("no swappable relation")
            index = rng.choice(choices)
        return _swap(sg, index)
    if tag == "replace":
        if kind is None:
            kinds = _replace_kinds(sg, pool)
            if not kinds:
                raise NoApplicableOperator("no replaceable element with pool support")
            kind = rng.choice(kinds)
        if kind == "entity":
            idx = index if index is not None else rng.randrange(len(sg.entities))
            return _replace_entity(sg, idx, pool, rng, replacement)
        if kind == "attribute":
            idx = index if index is not None else rng.randrange(len(sg.attributes))
            return _replace_attribute(sg, idx, pool, rng, replacement)
        if kind in ("relation", "predicate"):
            idx = index if index is not None else rng.randrange(len(sg.relations))
            return _replace_predicate(sg, idx, pool, rng, replacement)
        raise ValueError(f"unknown replace kind {kind!r}")
    if tag == "shorten":
        if kind is not None and index is not None:
            return _shorten(sg, ElementRef(ElementKind(kind), index))
        choices = _shorten_refs(sg)
        if not choices:
            raise NoApplicableOperator("no removable element")
        return _shorten(sg, rng.choice(choices))
    if tag == "overthink":
        return _overthink(sg, pool, rng, element)
    raise ValueError(f"unknown operator tag {tag!r}")


# ---------------------------------------------------------------------------
# candidate generation


def _applicable_tags(sg: SceneGraph, pool: ResidualPool) -> list[str]:
    tags = []
    if _swap_indices(sg):
        tags.append("swap")
    if _replace_kinds(sg, pool):
        tags.append("replace")
    if _shorten_refs(sg):
        tags.append("shorten")
    if _addable_elements(sg, pool):
        tags.append("overthink")
    return tags


def _apply_random_edit(
    sg: SceneGraph, tag: str, pool: ResidualPool, rng: random.Random
) -> tuple[SceneGraph, PerturbationOp]:
    if tag == "swap":
        return _swap(sg, rng.choice(_swap_indices(sg)))
    if tag == "replace":
        kind = rng.choice(_replace_kinds(sg, pool))
        if kind == "entity":
            return _replace_entity(sg, rng.randrange(len(sg.entities)), pool, rng, None)
        if kind == "attribute":
            return _replace_attribute(sg, rng.randrange(len(sg.attributes)), pool, rng, None)
        return _replace_predicate(sg, rng.randrange(len(sg.relations)), pool, rng, None)
    if tag == "shorten":
        return _shorten(sg, rng.choice(_shorten_refs(sg)))
    return _overthink(sg, pool, rng)


def _attempt_candidate(
    sg_c: SceneGraph,
    pool: ResidualPool,
    lo: int,
    hi: int,
    rng: random.Random,
    forced_tag: str | None,
):
    graph = sg_c
    ops: list[PerturbationOp] = []
    for _ in range(rng.randint(lo, hi)):
        tags = _applicable_tags(graph, pool)
        if forced_tag is not None:
            if forced_tag not in tags:
                return None
            tag = forced_tag
        elif tags:
            tag = rng.choice(tags)
        else:
            return None
        try:
            graph, op = _apply_random_edit(graph, tag, pool, rng)
        except (DuplicateCollision, EmptyPool, EmptyPoolForKind, NoOpSwap, WouldEmpty):
            return None
        ops.append(op)
    return graph, tuple(ops)


def generate_negatives(
    sg_pos: SceneGraph,
    sg_c: Union[GroundedSubgraph, SceneGraph],
    pool: ResidualPool,
    k: int = 8,
    edit_range: tuple[int, int] = (1, 3),
    rng: random.Random | int = 0,
    *,
    op_cycle: Sequence[str] | None = None,
    keep_absorbed_overthink: bool = False,
) -> list[NegativeCandidate]:
    """Sample up to ``k`` distinct recomposed negatives from the subgraph.

    Each candidate applies between ``edit_range[0]`` and ``edit_range[1]``
    edits, choosing uniformly among the operators applicable at each step,
    then reattaches the residual remainder.  Candidates equal to the positive
    graph or to an earlier candidate are rejected and resampled; after
    ``k * 32`` attempts the survivors are returned with a shortfall warning.

    ``op_cycle`` forces candidate ``i`` to use tag ``op_cycle[i % len]`` for
    all of its edits.  ``keep_absorbed_overthink`` keeps pure-overthink
    candidates whose addition the remainder absorbs (graph equals the
    positive); the added elements are recorded for prompt-side duplication.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    lo, hi = edit_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid edit range {edit_range!r}")
    if op_cycle is not None:
        unknown = [t for t in op_cycle if t not in OPERATOR_TAGS]
        if unknown:
            raise ValueError(f"unknown operator tag(s) {unknown}")

    if isinstance(rng, int):
        seed = rng
        rng = random.Random(seed)
    else:
        seed = -1  # unknown; caller supplied a live generator

    graph_c = _subgraph(sg_c)
    if not _applicable_tags(graph_c, pool):
        raise NoApplicableOperator("no operator applies to this subgraph/pool")

    pos_sig = sg_pos.signature()
    seen: set = {(pos_sig, frozenset())}
    out: list[NegativeCandidate] = []
    max_attempts = k * _ATTEMPTS_PER_CANDIDATE
    attempts = 0
    while len(out) < k and attempts < max_attempts:
        attempts += 1
        forced = op_cycle[len(out) % len(op_cycle)] if op_cycle else None
        result = _attempt_candidate(graph_c, pool, lo, hi, rng, forced)
        if result is None:
            continue
        edited, ops = result
        recomposed = recompose(edited, pool)
        sig = recomposed.signature()
        duplicated: tuple = ()
        if sig == pos_sig:
            # the remainder absorbed the edits; only pure overthink sequences
            # may survive, and only when prompt-side duplication is enabled
            if not (keep_absorbed_overthink and ops and all(op.tag == "overthink" for op in ops)):
                continue
            duplicated = tuple(op.payload for op in ops)
        key = (sig, frozenset(duplicated))
        if key in seen:
            continue
        seen.add(key)
        out.append(
            NegativeCandidate(
                graph=recomposed,
                trace=EditTrace(ops, seed),
                duplicated=duplicated,
            )
        )
    if len(out) < k:
        logger.warning("generated %d/%d distinct negatives after %d attempts", len(out), k, attempts)
    return out
