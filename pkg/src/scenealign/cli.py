"""Command-line interface.

Subcommands mirror the pipeline stages (``parse``, ``ground``, ``perturb``,
``select``, ``build``), plus ``run`` for the whole chain, ``dpo-check`` for
the loss/gradient self-test, and ``stats`` for dataset summaries.

Exit codes: 0 success, 1 configuration or operational error, 2 corpus error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .dpo import (
    DpoConfig,
    PreferenceRecord,
    ToyPolicy,
    dpo_loss,
    export_jsonl,
    finite_difference_gradient,
    import_jsonl,
    toy_policy_gradient,
)
from .embed import EmbedConfig
from .errors import ConfigError, CorpusError, SceneAlignError
from .generate import GeneratorConfig
from .grounding import ResidualPool
from .perturb import apply_operator
from .pipeline import (
    PipelineConfig,
    graph_to_obj,
    run_pipeline,
    stage_build,
    stage_ground,
    stage_parse,
    stage_perturb,
    stage_select,
)
from .scene_graph import parse_scene_graph
from .selection import SelectionConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CORPUS = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; remap to the config code
    def error(self, message):
        raise _UsageError(message)


def _parse_edit_range(text: str) -> tuple[int, int]:
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return int(lo), int(hi)
        value = int(text)
        return value, value
    except ValueError as exc:
        raise ConfigError(f"invalid --edits value {text!r}; use N or LO..HI") from exc


def _add_common_flags(p: argparse.ArgumentParser, *, output_required: bool = True) -> None:
    p.add_argument("--input", required=True, help="input JSONL path")
    p.add_argument("--output", required=output_required, help="output path")
    p.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    p.add_argument("--strict", action="store_true", help="fail fast on malformed input")
    p.add_argument("--verbose", action="store_true", help="info-level logging")


def _add_generator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--generator", choices=["template", "http"], default="template")
    p.add_argument("--endpoint", default=None, help="chat completion endpoint URL")
    p.add_argument("--model", default=None, help="model name for remote calls")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--cache-dir", default=None, help="response cache directory")


def _add_embed_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embed", choices=["hashed", "http"], default="hashed")
    p.add_argument("--embed-endpoint", default=None)
    p.add_argument("--embed-model", default=None)
    p.add_argument("--embed-dim", type=int, default=256)


def _add_selection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma-lower", type=float, default=0.3, help="overlap band lower bound")
    p.add_argument("--gamma-upper", type=float, default=0.7, help="overlap band upper bound")
    p.add_argument("--num-negatives", type=int, default=3, help="negatives kept per instance")
    p.add_argument("--relax-bounds", action="store_true", help="widen the band on shortfall")


def _add_perturb_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--candidates", type=int, default=8, help="candidates sampled per instance")
    p.add_argument("--edits", default="1..3", help="edit count or range, e.g. 2 or 1..3")


def _pipeline_config(args) -> PipelineConfig:
    generator = GeneratorConfig(
        kind="http-chat" if args.generator == "http" else "template",
        endpoint=args.endpoint,
        model=args.model,
        temperature=args.temperature,
        cache_dir=args.cache_dir,
        strict=args.strict,
    )
    embed = EmbedConfig(
        provider="http" if args.embed == "http" else "hashed-ngram",
        dimension=args.embed_dim,
        endpoint=args.embed_endpoint,
        model=args.embed_model,
    )
    selection = SelectionConfig(
        gamma_lower=args.gamma_lower,
        gamma_upper=args.gamma_upper,
        m=args.num_negatives,
        on_shortfall="relax-bounds" if args.relax_bounds else "emit-fewer",
    )
    return PipelineConfig(
        input_path=args.input,
        output_path=args.output,
        graphs_path=getattr(args, "graphs", None),
        report_path=getattr(args, "report", None),
        seed=args.seed,
        candidates=args.candidates,
        edit_range=_parse_edit_range(args.edits),
        selection=selection,
        generator=generator,
        embed=embed,
        dpo=DpoConfig(beta=args.beta),
        workers=args.workers,
        strict=args.strict,
        strict_order=args.strict_order,
    )


def _read_jsonl(path: str) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(None, f"cannot read {path}: {exc}") from exc
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except ValueError as exc:
            raise CorpusError(line_no, f"invalid JSON: {exc}") from exc
    return out


def _write_jsonl(path: str, objs: list[dict]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _map_stage(items: list[dict], fn, strict: bool) -> list[dict]:
    out = []
    for item in items:
        try:
            out.append(fn(item))
        except SceneAlignError as exc:
            if strict:
                raise
            logger.warning("instance %r skipped: %s", item.get("id"), exc)
    return out


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    report = run_pipeline(cfg)
    print(
        f"{report.records_written} record(s) from {report.instances_processed}/"
        f"{report.instances_total} instance(s) -> {args.output}"
    )
    return EXIT_OK


def _cmd_parse(args) -> int:
    cfg = _pipeline_config(args)
    items, drops = stage_parse(cfg)
    _write_jsonl(args.output, items)
    print(f"parsed {len(items)} instance(s), skipped {len(drops)} line(s) -> {args.output}")
    return EXIT_OK


def _cmd_ground(args) -> int:
    cfg = _pipeline_config(args)
    items = _read_jsonl(args.input)
    out = _map_stage(items, lambda item: stage_ground(item, cfg), args.strict)
    _write_jsonl(args.output, out)
    print(f"grounded {len(out)}/{len(items)} instance(s) -> {args.output}")
    return EXIT_OK


def _cmd_perturb(args) -> int:
    if args.op:
        return _cmd_perturb_single(args)
    if not args.input or not args.output:
        raise ConfigError("stage mode requires --input and --output")
    cfg = _pipeline_config(args)
    items = _read_jsonl(args.input)
    out = _map_stage(items, lambda item: stage_perturb(item, cfg), args.strict)
    _write_jsonl(args.output, out)
    print(f"perturbed {len(out)}/{len(items)} instance(s) -> {args.output}")
    return EXIT_OK


def _cmd_perturb_single(args) -> int:
    if not args.graph:
        raise ConfigError("--op mode requires --graph")
    try:
        graph_text = Path(args.graph).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(None, f"cannot read graph: {exc}") from exc
    graph = parse_scene_graph(graph_text)
    pool = ResidualPool()
    if args.pool:
        pool_obj = json.loads(Path(args.pool).read_text(encoding="utf-8"))
        pool = ResidualPool(
            entities=tuple(pool_obj.get("entity", [])),
            attributes=tuple(tuple(a) for a in pool_obj.get("attribute pairs", [])),
            relations=tuple(tuple(r) for r in pool_obj.get("relationships", [])),
        )
    element = json.loads(args.element) if args.element else None
    if isinstance(element, list):
        element = tuple(element)
    import random as _random

    result, op = apply_operator(
        graph,
        pool,
        args.op,
        kind=args.kind,
        index=args.index,
        replacement=args.replacement,
        element=element,
        rng=_random.Random(args.seed),
    )
    print(json.dumps({"graph": graph_to_obj(result), "trace": [op.to_dict()]}, ensure_ascii=False))
    return EXIT_OK


def _cmd_select(args) -> int:
    cfg = _pipeline_config(args)
    items = _read_jsonl(args.input)
    out = _map_stage(items, lambda item: stage_select(item, cfg), args.strict)
    _write_jsonl(args.output, out)
    print(f"selected for {len(out)}/{len(items)} instance(s) -> {args.output}")
    return EXIT_OK


def _cmd_build(args) -> int:
    items = _read_jsonl(args.input)
    records: list[PreferenceRecord] = []
    for item in items:
        try:
            records.extend(stage_build(item))
        except SceneAlignError as exc:
            if args.strict:
                raise
            logger.warning("instance %r skipped: %s", item.get("id"), exc)
    export_jsonl(records, args.output)
    print(f"built {len(records)} record(s) -> {args.output}")
    return EXIT_OK


def _demo_records() -> list[PreferenceRecord]:
    texts = [
        ("the man looks at the silver motorcycle", "the motorcycle looks at the man"),
        ("the ground is paved and the paper is white", "the paper is paved and the ground is white"),
        ("a man crouches on the ground holding paper", "a man stands on the paper holding ground"),
        ("the building is behind the motorcycle", "the motorcycle is behind the building"),
    ]
    records = []
    for i, (chosen, rejected) in enumerate(texts):
        records.append(
            PreferenceRecord(
                id=f"demo-{i}#1",
                image_ref="",
                question="what is happening?",
                scene_graph_json="{}",
                chosen=chosen,
                rejected=rejected,
                meta={"instance_id": f"demo-{i}"},
            )
        )
    return records


def _cmd_dpo_check(args) -> int:
    records = import_jsonl(args.input) if args.input else _demo_records()
    if not records:
        raise CorpusError(None, "no records to check")
    cfg = DpoConfig(beta=args.beta)
    vocab = tuple(sorted({tok for r in records for tok in f"{r.chosen} {r.rejected}".split()}))

    policy = ToyPolicy.uniform(vocab)
    reference = ToyPolicy.uniform(vocab)
    loss, _ = dpo_loss(records, policy, reference, cfg)
    expected = math.log(2.0)
    baseline_ok = abs(loss - expected) < 1e-9
    print(f"policy==reference mean loss: {loss:.6f} (expected {expected:.6f})")

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        trial_policy = ToyPolicy(vocab, rng.normal(scale=0.5, size=len(vocab)))
        trial_reference = ToyPolicy(vocab, rng.normal(scale=0.5, size=len(vocab)))
        analytic = toy_policy_gradient(trial_policy, records, trial_reference, cfg)
        numeric = finite_difference_gradient(trial_policy, records, trial_reference, cfg)
        denom = max(float(np.linalg.norm(numeric)), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric)) / denom)
    gradient_ok = worst <= 1e-5
    print(f"gradient check: max relative error {worst:.3e} over {args.trials} trial(s)")
    print(f"dpo-check: {'PASS' if baseline_ok and gradient_ok else 'FAIL'}")
    return EXIT_OK if baseline_ok and gradient_ok else EXIT_CONFIG


def _cmd_stats(args) -> int:
    records = import_jsonl(args.input)
    operators = Counter(str(r.meta.get("operator", "unknown")) for r in records)
    jaccards = [r.meta["jaccard"] for r in records if isinstance(r.meta.get("jaccard"), (int, float))]
    histogram = {}
    for i in range(10):
        lo, hi = i / 10.0, (i + 1) / 10.0
        label = f"[{lo:.1f},{hi:.1f}{']' if i == 9 else ')'}"
        histogram[label] = sum(1 for j in jaccards if lo <= j < hi or (i == 9 and j == 1.0))
    instances = Counter(str(r.meta.get("instance_id", r.id)) for r in records)
    n_instances = len(instances)
    shortfall = sum(1 for count in instances.values() if count < args.num_negatives)
    stats = {
        "records": len(records),
        "instances": n_instances,
        "negatives_per_instance_mean": round(len(records) / n_instances, 4) if n_instances else 0.0,
        "operator_mix": dict(sorted(operators.items())),
        "jaccard_histogram": histogram,
        "shortfall_rate": round(shortfall / n_instances, 4) if n_instances else 0.0,
    }
    print(json.dumps(stats, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenealign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def full(p, *, output_required=True):
        _add_common_flags(p, output_required=output_required)
        p.add_argument("--graphs", default=None, help="sidecar scene graph JSONL")
        p.add_argument("--report", default=None, help="run report path")
        p.add_argument("--beta", type=float, default=0.1)
        p.add_argument("--workers", type=int, default=0, help="worker pool width (0 = CPUs)")
        p.add_argument("--strict-order", action="store_true",
                       help="generate rationales for all candidates before filtering")
        _add_perturb_flags(p)
        _add_selection_flags(p)
        _add_generator_flags(p)
        _add_embed_flags(p)

    p_run = sub.add_parser("run", help="full pipeline: corpus to preference dataset")
    full(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_parse = sub.add_parser("parse", help="normalize the corpus and resolve scene graphs")
    full(p_parse)
    p_parse.set_defaults(func=_cmd_parse)

    p_ground = sub.add_parser("ground", help="positive rationales and grounded subgraphs")
    full(p_ground)
    p_ground.set_defaults(func=_cmd_ground)

    p_perturb = sub.add_parser("perturb", help="sample negative candidates")
    _add_common_flags(p_perturb, output_required=False)
    p_perturb.add_argument("--graphs", default=None, help=argparse.SUPPRESS)
    p_perturb.add_argument("--report", default=None, help=argparse.SUPPRESS)
    p_perturb.add_argument("--beta", type=float, default=0.1, help=argparse.SUPPRESS)
    p_perturb.add_argument("--workers", type=int, default=0, help=argparse.SUPPRESS)
    p_perturb.add_argument("--strict-order", action="store_true", help=argparse.SUPPRESS)
    _add_perturb_flags(p_perturb)
    _add_selection_flags(p_perturb)
    _add_generator_flags(p_perturb)
    _add_embed_flags(p_perturb)
    p_perturb.add_argument("--op", choices=["swap", "replace", "shorten", "overthink"],
                           help="apply a single operator to --graph instead of running the stage")
    p_perturb.add_argument("--graph", default=None, help="scene graph JSON file for --op mode")
    p_perturb.add_argument("--pool", default=None, help="residual pool JSON file for --op mode")
    p_perturb.add_argument("--kind", choices=["entity", "attribute", "relation", "predicate"],
                           default=None, help="target element kind for --op mode")
    p_perturb.add_argument("--index", type=int, default=None, help="target element index")
    p_perturb.add_argument("--replacement", default=None, help="pinned replacement payload")
    p_perturb.add_argument("--element", default=None, help="pinned element to add (JSON)")
    p_perturb.set_defaults(func=_cmd_perturb)

    p_select = sub.add_parser("select", help="band-filter and diversify candidates")
    full(p_select)
    p_select.set_defaults(func=_cmd_select)

    p_build = sub.add_parser("build", help="emit preference records from selected candidates")
    _add_common_flags(p_build)
    p_build.set_defaults(func=_cmd_build)

    p_check = sub.add_parser("dpo-check", help="loss baseline and analytic-gradient self-test")
    p_check.add_argument("--input", default=None, help="preference dataset JSONL (optional)")
    p_check.add_argument("--beta", type=float, default=0.1)
    p_check.add_argument("--trials", type=int, default=100)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--verbose", action="store_true")
    p_check.set_defaults(func=_cmd_dpo_check)

    p_stats = sub.add_parser("stats", help="summarize a preference dataset")
    p_stats.add_argument("--input", required=True)
    p_stats.add_argument("--num-negatives", type=int, default=3)
    p_stats.add_argument("--verbose", action="store_true")
    p_stats.set_defaults(func=_cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorpusError as exc:
        print(f"corpus error: {exc}", file=sys.stderr)
        return EXIT_CORPUS
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SceneAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
