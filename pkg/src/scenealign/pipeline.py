"""End-to-end dataset construction and its stage-wise decomposition.

Every stage consumes and produces a plain JSON-compatible work item, and the
full run chains exactly the same stage functions the CLI subcommands expose,
so piping parse -> ground -> perturb -> select -> build reproduces a full run
byte for byte.  Determinism comes from per-instance seeds derived from the
global seed and the instance id, with output order following corpus order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dpo import DpoConfig, PreferenceRecord, build_preference_records, export_jsonl
from .embed import EmbedConfig, embed_texts
from .errors import ConfigError, CorpusError, EmptyMatch, SceneAlignError
from .generate import (
    GeneratorConfig,
    Instance,
    generate_rationale,
    generate_scene_graph_json,
    render_negative_cot_prompt,
    render_positive_cot_prompt,
    serialize_with_duplicates,
)
from .grounding import (
    GroundedSubgraph,
    MatchConfig,
    ResidualPool,
    extract_grounded_subgraph,
    residual_pool,
)
from .perturb import EditTrace, NegativeCandidate, PerturbationOp, generate_negatives
from .rationale import Rationale
from .scene_graph import (
    ATTRIBUTE_KEY,
    ENTITY_KEY,
    RELATION_KEY,
    SceneGraph,
    parse_scene_graph,
    serialize_scene_graph,
)
from .selection import SelectionConfig, filter_with_shortfall, select_diverse

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Everything a full run needs; stage subcommands use the same object."""

    input_path: str
    output_path: str
    graphs_path: str | None = None
    report_path: str | None = None
    seed: int = 0
    candidates: int = 8
    edit_range: tuple[int, int] = (1, 3)
    match: MatchConfig = field(default_factory=MatchConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    dpo: DpoConfig = field(default_factory=DpoConfig)
    workers: int = 0  # 0 means one per logical CPU
    strict: bool = False
    strict_order: bool = False  # rationales for all candidates before filtering
    keep_absorbed_overthink: bool = False

    def validate(self) -> None:
        paths = [self.input_path, self.output_path]
        if self.graphs_path:
            paths.append(self.graphs_path)
        if self.report_path:
            paths.append(self.report_path)
        resolved = [str(Path(p)) for p in paths]
        if len(set(resolved)) != len(resolved):
            raise ConfigError("input, output, graphs, and report paths must be distinct")
        if self.candidates < 1:
            raise ConfigError("candidates must be at least 1")
        lo, hi = self.edit_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid edit range {self.edit_range!r}")
        if self.workers < 0:
            raise ConfigError("workers must be non-negative")


def instance_seed(global_seed: int, instance_id: str) -> int:
    """Stable 64-bit per-instance seed; independent of corpus order."""
    data = f"{global_seed}:{instance_id}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


# ---------------------------------------------------------------------------
# work item (de)serialization helpers


def graph_to_obj(g: SceneGraph) -> dict:
    return {
        ENTITY_KEY: list(g.entities),
        ATTRIBUTE_KEY: [list(a) for a in g.attributes],
        RELATION_KEY: [list(r) for r in g.relations],
    }


def graph_from_obj(obj: dict) -> SceneGraph:
    return SceneGraph.from_parts(obj[ENTITY_KEY], obj[ATTRIBUTE_KEY], obj[RELATION_KEY])


def _pool_to_obj(pool: ResidualPool) -> dict:
    return {
        ENTITY_KEY: list(pool.entities),
        ATTRIBUTE_KEY: [list(a) for a in pool.attributes],
        RELATION_KEY: [list(r) for r in pool.relations],
    }


def _pool_from_obj(obj: dict) -> ResidualPool:
    return ResidualPool(
        entities=tuple(obj[ENTITY_KEY]),
        attributes=tuple(tuple(a) for a in obj[ATTRIBUTE_KEY]),
        relations=tuple(tuple(r) for r in obj[RELATION_KEY]),
    )


def _instance_from_obj(obj: dict) -> Instance:
    return Instance(
        id=obj["id"],
        image_ref=obj.get("image", "") or "",
        question=obj["question"],
        answer=obj.get("answer"),
    )


def _element_from_json(value):
    return tuple(value) if isinstance(value, list) else value


def _element_to_json(value):
    return list(value) if isinstance(value, tuple) else value


def _trace_from_obj(obj: dict) -> EditTrace:
    ops = tuple(
        PerturbationOp(
            tag=op["tag"],
            kind=op["kind"],
            target=_element_from_json(op["target"]),
            payload=_element_from_json(op["payload"]),
        )
        for op in obj["ops"]
    )
    return EditTrace(ops, obj["seed"])


def _candidate_to_obj(cand: NegativeCandidate, *, with_selection: bool = False) -> dict:
    out: dict = {"graph": graph_to_obj(cand.graph), "trace": cand.trace.to_dict()}
    if cand.duplicated:
        out["duplicated"] = [_element_to_json(e) for e in cand.duplicated]
    if with_selection:
        out["jaccard"] = cand.jaccard
        out["rationale"] = cand.rationale.raw_text
    return out


def _candidate_from_obj(obj: dict) -> NegativeCandidate:
    cand = NegativeCandidate(
        graph=graph_from_obj(obj["graph"]),
        trace=_trace_from_obj(obj["trace"]),
        duplicated=tuple(_element_from_json(e) for e in obj.get("duplicated", [])),
    )
    if "jaccard" in obj:
        cand.jaccard = obj["jaccard"]
    if "rationale" in obj:
        cand.rationale = Rationale.parse(obj["rationale"])
    return cand


# ---------------------------------------------------------------------------
# corpus loading (the parse stage)


def _parse_graph_value(value) -> SceneGraph:
    if isinstance(value, str):
        return parse_scene_graph(value)
    if isinstance(value, dict):
        return parse_scene_graph(json.dumps(value, ensure_ascii=False))
    raise CorpusError(None, f"scene_graph must be an object or string, got {type(value).__name__}")


def _normalize_line(obj, line_no: int) -> dict:
    if not isinstance(obj, dict):
        raise CorpusError(line_no, f"expected an object, got {type(obj).__name__}")
    if "id" not in obj:
        raise CorpusError(line_no, "missing 'id'")
    ident = obj["id"]
    if isinstance(ident, int):
        ident = str(ident)
    if not isinstance(ident, str) or not ident.strip():
        raise CorpusError(line_no, "'id' must be a non-empty string")
    question = obj.get("question")
    if not isinstance(question, str) or not question.strip():
        raise CorpusError(line_no, "missing or empty 'question'")
    image = obj.get("image", "")
    if image is None:
        image = ""
    if not isinstance(image, str):
        raise CorpusError(line_no, "'image' must be a string")
    answer = obj.get("answer")
    if answer is not None and not isinstance(answer, str):
        raise CorpusError(line_no, "'answer' must be a string")
    out = {"id": ident.strip(), "image": image, "question": question, "answer": answer}
    if "scene_graph" in obj:
        out["scene_graph"] = obj["scene_graph"]
    return out


def _read_sidecar_graphs(path: str) -> dict[str, object]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(None, f"cannot read graphs file: {exc}") from exc
    graphs: dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            graphs[str(obj["id"])] = obj["scene_graph"]
        except (ValueError, KeyError, TypeError) as exc:
            raise CorpusError(None, f"graphs file line {line_no}: {exc}") from exc
    return graphs


def stage_parse(cfg: PipelineConfig) -> tuple[list[dict], list[dict]]:
    """Load and normalize the corpus; resolve a scene graph for every item.

    Returns (work items, diagnostics for dropped lines).  In strict mode the
    first bad line raises :class:`CorpusError`; otherwise bad lines are
    reported and skipped so adversarial corpora cannot abort a run.
    """
    try:
        text = Path(cfg.input_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(None, f"cannot read corpus: {exc}") from exc
    sidecar = _read_sidecar_graphs(cfg.graphs_path) if cfg.graphs_path else {}

    items: list[dict] = []
    drops: list[dict] = []
    seen_ids: set[str] = set()

    def drop(line_no: int, reason: str) -> None:
        if cfg.strict:
            raise CorpusError(line_no, reason)
        logger.warning("corpus line %d skipped: %s", line_no, reason)
        drops.append({"line": line_no, "reason": reason})

    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except ValueError as exc:
            drop(line_no, f"invalid JSON: {exc}")
            continue
        try:
            norm = _normalize_line(raw, line_no)
        except CorpusError as exc:
            drop(line_no, exc.reason)
            continue
        if norm["id"] in seen_ids:
            drop(line_no, f"duplicate id {norm['id']!r}")
            continue

        graph_value = norm.pop("scene_graph", None)
        if graph_value is None and norm["id"] in sidecar:
            graph_value = sidecar[norm["id"]]
        try:
            if graph_value is not None:
                graph = _parse_graph_value(graph_value)
            elif cfg.generator.kind == "http-chat":
                inst = _instance_from_obj(norm)
                graph = parse_scene_graph(
                    generate_scene_graph_json(inst, cfg.generator), on_dangling="add"
                )
            else:
                drop(line_no, "no scene graph available and no endpoint configured")
                continue
        except SceneAlignError as exc:
            drop(line_no, f"bad scene graph: {exc}")
            continue

        seen_ids.add(norm["id"])
        norm["scene_graph"] = graph_to_obj(graph)
        items.append(norm)
    return items, drops


# ---------------------------------------------------------------------------
# per-instance stages


def stage_ground(item: dict, cfg: PipelineConfig) -> dict:
    """Generate the positive rationale and split the graph against it."""
    inst = _instance_from_obj(item)
    sg_pos = graph_from_obj(item["scene_graph"])
    prompt = render_positive_cot_prompt(sg_pos, inst)
    tau_pos = generate_rationale(prompt, cfg.generator, attachment=inst.image_ref or None)
    try:
        grounded = extract_grounded_subgraph(sg_pos, tau_pos, cfg.match)
    except EmptyMatch:
        logger.warning("instance %r: rationale matched nothing; grounding to the full graph", inst.id)
        grounded = GroundedSubgraph(sg_pos)
    pool = residual_pool(sg_pos, grounded)
    out = dict(item)
    out["positive_rationale"] = tau_pos.raw_text
    out["grounded"] = graph_to_obj(grounded.graph)
    out["pool"] = _pool_to_obj(pool)
    return out


def stage_perturb(item: dict, cfg: PipelineConfig) -> dict:
    """Sample negative candidates with the instance-specific seed."""
    sg_pos = graph_from_obj(item["scene_graph"])
    grounded = graph_from_obj(item["grounded"])
    pool = _pool_from_obj(item["pool"])
    seed = instance_seed(cfg.seed, item["id"])
    candidates = generate_negatives(
        sg_pos,
        grounded,
        pool,
        k=cfg.candidates,
        edit_range=cfg.edit_range,
        rng=seed,
        keep_absorbed_overthink=cfg.keep_absorbed_overthink,
    )
    out = dict(item)
    out["candidates"] = [_candidate_to_obj(c) for c in candidates]
    return out


def _candidate_prompt_json(cand: NegativeCandidate) -> str | None:
    if cand.duplicated:
        return serialize_with_duplicates(cand.graph, cand.duplicated)
    return None


def _fill_rationales(
    candidates: Sequence[NegativeCandidate], inst: Instance, cfg: PipelineConfig
) -> list[NegativeCandidate]:
    # negative prompts carry neither the gold answer nor an image attachment
    kept = []
    for cand in candidates:
        prompt = render_negative_cot_prompt(cand.graph, inst, graph_json=_candidate_prompt_json(cand))
        try:
            cand.rationale = generate_rationale(prompt, cfg.generator, attachment=None)
        except SceneAlignError as exc:
            logger.warning("instance %r: negative rationale failed (%s); candidate dropped", inst.id, exc)
            continue
        kept.append(cand)
    return kept


def stage_select(item: dict, cfg: PipelineConfig) -> dict:
    """Band-filter candidates, generate their rationales, pick a diverse subset."""
    inst = _instance_from_obj(item)
    sg_pos = graph_from_obj(item["scene_graph"])
    candidates = [_candidate_from_obj(o) for o in item["candidates"]]

    if cfg.strict_order:
        candidates = _fill_rationales(candidates, inst, cfg)
        kept_idx, used_cfg, relax_steps = filter_with_shortfall(candidates, sg_pos, cfg.selection)
        in_band = [candidates[i] for i in kept_idx]
    else:
        kept_idx, used_cfg, relax_steps = filter_with_shortfall(candidates, sg_pos, cfg.selection)
        in_band = _fill_rationales([candidates[i] for i in kept_idx], inst, cfg)

    if in_band:
        embeddings = embed_texts([c.rationale.raw_text for c in in_band], cfg.embed)
        for cand, emb in zip(in_band, embeddings):
            cand.embedding = emb
        chosen = select_diverse(embeddings, cfg.selection.m, cfg.selection)
        selected = [in_band[i] for i in chosen]
    else:
        selected = []

    out = dict(item)
    out["selected"] = [_candidate_to_obj(c, with_selection=True) for c in selected]
    out["counts"] = {
        "candidates": len(candidates),
        "filtered": len(in_band),
        "selected": len(selected),
    }
    out["band"] = {
        "gamma_lower": used_cfg.gamma_lower,
        "gamma_upper": used_cfg.gamma_upper,
        "relax_steps": relax_steps,
    }
    return out


def stage_build(item: dict) -> list[PreferenceRecord]:
    """Turn one selected work item into preference records."""
    inst = _instance_from_obj(item)
    sg_pos = graph_from_obj(item["scene_graph"])
    tau_pos = Rationale.parse(item["positive_rationale"])
    negatives = [_candidate_from_obj(o) for o in item["selected"]]
    return build_preference_records(inst, sg_pos, tau_pos, negatives)


# ---------------------------------------------------------------------------
# full run


@dataclass
class InstanceOutcome:
    id: str
    records: list[PreferenceRecord] = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    relax_steps: int = 0
    drop_reason: str | None = None


@dataclass
class RunReport:
    instances_total: int = 0
    instances_processed: int = 0
    records_written: int = 0
    stage_counts: dict = field(default_factory=dict)
    drops: dict = field(default_factory=dict)
    line_drops: list = field(default_factory=list)
    relaxed_instances: int = 0
    shortfall_instances: int = 0
    duration_seconds: float = 0.0
    instances: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "instances_total": self.instances_total,
            "instances_processed": self.instances_processed,
            "records_written": self.records_written,
            "stage_counts": self.stage_counts,
            "drops": self.drops,
            "line_drops": self.line_drops,
            "relaxed_instances": self.relaxed_instances,
            "shortfall_instances": self.shortfall_instances,
            "duration_seconds": self.duration_seconds,
            "instances": self.instances,
        }

    def save(self, path: str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _process_item(item: dict, cfg: PipelineConfig) -> InstanceOutcome:
    outcome = InstanceOutcome(id=item["id"])
    try:
        grounded = stage_ground(item, cfg)
        perturbed = stage_perturb(grounded, cfg)
        selected = stage_select(perturbed, cfg)
        outcome.records = stage_build(selected)
        outcome.counts = dict(selected["counts"])
        outcome.counts["records"] = len(outcome.records)
        outcome.relax_steps = selected["band"]["relax_steps"]
    except SceneAlignError as exc:
        logger.warning("instance %r dropped: %s", item["id"], exc)
        outcome.drop_reason = type(exc).__name__
    return outcome


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """Run every stage over the corpus and write the dataset plus a report.

    Instances are processed in a worker pool; output order and all sampling
    depend only on the corpus content and the seed, never on scheduling.
    """
    cfg.validate()
    started = time.monotonic()
    items, line_drops = stage_parse(cfg)

    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1 or len(items) <= 1:
        outcomes = [_process_item(item, cfg) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda item: _process_item(item, cfg), items))

    report = RunReport(instances_total=len(items) + len(line_drops), line_drops=line_drops)
    if line_drops:
        report.drops["corpus_line"] = len(line_drops)
    records: list[PreferenceRecord] = []
    totals = {"candidates": 0, "filtered": 0, "selected": 0, "records": 0}
    for outcome in outcomes:
        summary = {"id": outcome.id}
        if outcome.drop_reason:
            report.drops[outcome.drop_reason] = report.drops.get(outcome.drop_reason, 0) + 1
            summary["drop"] = outcome.drop_reason
        else:
            report.instances_processed += 1
            records.extend(outcome.records)
            for key in totals:
                totals[key] += outcome.counts.get(key, 0)
            summary.update(outcome.counts)
            if outcome.relax_steps:
                report.relaxed_instances += 1
                summary["relax_steps"] = outcome.relax_steps
            if outcome.counts.get("records", 0) < cfg.selection.m:
                report.shortfall_instances += 1
        report.instances.append(summary)
    report.stage_counts = totals
    report.records_written = len(records)

    export_jsonl(records, cfg.output_path)
    report.duration_seconds = time.monotonic() - started
    report_path = cfg.report_path or f"{cfg.output_path}.report.json"
    report.save(report_path)
    return report
