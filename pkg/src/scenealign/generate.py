"""Prompt rendering and rationale generation.

Three fixed prompt templates cover scene-graph extraction, positive reasoning
(image and gold answer visible), and negative reasoning (graph and question
only; the negative prompt never carries the answer or an image attachment).
Rationales come from either a deterministic offline template generator or an
HTTP chat endpoint with caching and bounded retries.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import (
    ConfigError,
    MissingAnswer,
    RemoteError,
    RequestTimeout,
    UnparseableResponse,
)
from .rationale import Rationale
from .scene_graph import SceneGraph, parse_scene_graph, serialize_scene_graph

logger = logging.getLogger(__name__)

API_KEY_ENV = "SCENEALIGN_API_KEY"

_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

SCENE_GRAPH_PROMPT_HEADER = """\
You are given an image and its associated question.
Your task is to generate a scene graph in strict JSON format that includes the following three fields:
1. "entity": a list of all objects and concepts relevant to answering the question.
2. "attribute pairs": a list of [object, attribute] pairs describing each entity's key features (e.g., color, size, state).
3. "relationships": a list of [subject, relation, object] triples describing spatial or semantic relationships.

Format Example:
{
  "entity": ["man", "motorcycle", "paper", "ground"],
  "attribute pairs": [
    ["motorcycle", "silver"],
    ["paper", "white"],
    ["ground", "paved"]
  ],
  "relationships": [
    ["man", "look at", "motorcycle"],
    ["man", "crouch on", "ground"],
    ["man", "hold", "paper"],
    ["motorcycle", "stand on", "ground"]
  ]
}

Attention:
1. Only return a valid JSON object with the three required fields.
2. Do not include any explanations or natural language text.
3. Ensure the format strictly matches the example above.
"""

_POSITIVE_HEADER = """\
You are given a scene graph and its associated question and image.
Your task is to provide step-by-step reasoning to answer the question based on the image and scene graph.
Do not mention the data source.
Treat the scene graph elements as the visual scene itself.
"""

_NEGATIVE_HEADER = """\
You are given a scene graph and its associated question.
Your task is to provide step-by-step reasoning to answer the question based on the scene graph.
Do not mention the data source.
Treat the scene graph elements as the visual scene itself.
"""

_FORMAT_EXAMPLE = """\
Format Example:
1. ...
2. ...
3. ...
4. ...
Conclusion: ...
"""

_POSITIVE_FIRST_LINE = _POSITIVE_HEADER.splitlines()[0]


@dataclass(frozen=True)
class Instance:
    """One corpus item: identifier, image reference, question, gold answer."""

    id: str
    image_ref: str
    question: str
    answer: str | None = None


@dataclass(frozen=True)
class GeneratorConfig:
    """Which generator to use and how to reach it."""

    kind: str = "template"  # or "http-chat"
    endpoint: str | None = None
    model: str | None = None
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base: float = 0.5
    cache_dir: str | None = None
    strict: bool = False

    def __post_init__(self):
        if self.kind not in ("template", "http-chat"):
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if self.kind == "http-chat" and not self.endpoint:
            raise ConfigError("http-chat generator requires an endpoint")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be at least 1")


def _require_answer(inst: Instance) -> str:
    if not inst.answer or not inst.answer.strip():
        raise MissingAnswer(f"instance {inst.id!r} has no ground-truth answer")
    return inst.answer.strip()


def render_scene_graph_prompt(inst: Instance) -> str:
    """Prompt asking for the strict three-field JSON scene graph."""
    answer = _require_answer(inst)
    return f"{SCENE_GRAPH_PROMPT_HEADER}\nQuestion: {inst.question}, {answer}\n\nScene Graph:"


def render_positive_cot_prompt(sg_pos: SceneGraph, inst: Instance, *, graph_json: str | None = None) -> str:
    """Reasoning prompt with graph, question, and gold answer visible."""
    answer = _require_answer(inst)
    graph = graph_json if graph_json is not None else serialize_scene_graph(sg_pos)
    return (
        f"{_POSITIVE_HEADER}\n{_FORMAT_EXAMPLE}\n"
        f"Scene Graph: {graph}\n\n"
        f"Question: {inst.question}, {answer}\n\n"
        f"Step-by-step reasoning:"
    )


def render_negative_cot_prompt(sg_neg: SceneGraph, inst: Instance, *, graph_json: str | None = None) -> str:
    """Reasoning prompt with graph and question only.

    The gold answer and the image are structurally absent: the template has
    no slot for either, and that absence is asserted on every render.
    """
    graph = graph_json if graph_json is not None else serialize_scene_graph(sg_neg)
    prompt = (
        f"{_NEGATIVE_HEADER}\n{_FORMAT_EXAMPLE}\n"
        f"Scene Graph: {graph}\n\n"
        f"Question: {inst.question}\n\n"
        f"Step-by-step reasoning:"
    )
    # the question line must end the instance content; nothing may follow it
    assert f"Question: {inst.question}\n\nStep-by-step reasoning:" in prompt
    return prompt


def serialize_with_duplicates(graph: SceneGraph, elements: tuple) -> str:
    """Graph JSON with the given elements listed twice, for prompt emphasis.

    Used by the overthink variant whose addition the remainder absorbed; the
    output is prompt text only and deliberately not a valid element set.
    """
    obj = json.loads(serialize_scene_graph(graph))
    for element in elements:
        if isinstance(element, str):
            obj["entity"].append(element)
        elif len(element) == 2:
            obj["attribute pairs"].append(list(element))
        else:
            obj["relationships"].append(list(element))
    return json.dumps(obj, ensure_ascii=False)


# ---------------------------------------------------------------------------
# template generator


def _split_question_answer(line: str, expect_answer: bool) -> tuple[str, str | None]:
    if not expect_answer:
        return line, None
    # the answer slot was appended as ", {answer}"; prefer splitting after
    # the question mark so commas inside the question stay untouched
    if "?, " in line:
        question, _, answer = line.rpartition("?, ")
        return question + "?", answer or None
    question, sep, answer = line.rpartition(", ")
    if sep:
        return question, answer or None
    return line, None


def _template_rationale(graph: SceneGraph, answer: str | None) -> Rationale:
    steps = [f"The {s} {p} the {o}." for s, p, o in graph.relations]
    steps += [f"The {e} is {v}." for e, v in graph.attributes]
    if not steps:
        if graph.entities:
            listing = ", ".join(f"the {e}" for e in graph.entities)
            steps = [f"The scene shows {listing}."]
        else:
            steps = ["The scene is empty."]
    conclusion = f"The answer is {answer}." if answer else "The scene is as described."
    return Rationale.from_steps(steps, conclusion)


def _generate_template(prompt: str) -> Rationale:
    graph_json = None
    question_line = None
    for line in prompt.splitlines():
        if line.startswith("Scene Graph: "):
            graph_json = line[len("Scene Graph: ") :]
        elif line.startswith("Question: "):
            question_line = line[len("Question: ") :]
    if graph_json is None or question_line is None:
        raise UnparseableResponse("template generator needs a prompt embedding a scene graph")
    graph = parse_scene_graph(graph_json, on_dangling="add")
    expect_answer = prompt.startswith(_POSITIVE_FIRST_LINE)
    _, answer = _split_question_answer(question_line, expect_answer)
    return _template_rationale(graph, answer)


# ---------------------------------------------------------------------------
# http chat generator


def _cache_path(cache_dir: str, prompt: str, cfg: GeneratorConfig) -> Path:
    key = hashlib.sha256(
        json.dumps(
            {"prompt": prompt, "model": cfg.model, "temperature": cfg.temperature},
            sort_keys=True,
            ensure_ascii=False,
        ).encode("utf-8")
    ).hexdigest()
    return Path(cache_dir) / f"{key}.json"


def _chat_request(prompt: str, cfg: GeneratorConfig, attachment: str | None) -> str:
    headers = {}
    key = os.environ.get(API_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    content: object = prompt
    if attachment is not None:
        content = [
            {"type": "text", "text": prompt},
            {"type": "image_url", "image_url": {"url": attachment}},
        ]
    payload = {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [{"role": "user", "content": content}],
    }
    last_status: int | None = None
    last_detail = "no attempts made"
    timed_out = False
    for attempt in range(cfg.max_retries):
        if attempt:
            time.sleep(cfg.backoff_base * (2 ** (attempt - 1)))
        try:
            resp = requests.post(cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout)
        except requests.Timeout:
            timed_out = True
            last_detail = "request timed out"
            continue
        except requests.RequestException as exc:
            last_detail = str(exc)
            continue
        if resp.status_code == 200:
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise RemoteError(200, f"unexpected response shape: {exc}") from exc
        last_status = resp.status_code
        last_detail = resp.text[:200]
        if resp.status_code not in _RETRYABLE_STATUSES:
            raise RemoteError(last_status, last_detail)
    if timed_out and last_status is None:
        raise RequestTimeout(f"no response after {cfg.max_retries} attempts")
    raise RemoteError(last_status, last_detail)


def _chat_completion(prompt: str, cfg: GeneratorConfig, attachment: str | None) -> str:
    if cfg.cache_dir:
        path = _cache_path(cfg.cache_dir, prompt, cfg)
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["content"]
        content = _chat_request(prompt, cfg, attachment)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"content": content}, ensure_ascii=False), encoding="utf-8")
        return content
    return _chat_request(prompt, cfg, attachment)


def generate_rationale(
    prompt: str,
    cfg: GeneratorConfig = GeneratorConfig(),
    attachment: str | None = None,
) -> Rationale:
    """Produce a rationale for a reasoning prompt.

    The template generator is pure and offline: it linearizes the graph found
    in the prompt into one sentence per relation, then per attribute, with a
    conclusion naming the answer when the prompt carries one.  The http-chat
    generator posts the prompt (plus optional image attachment) and parses
    the reply, leniently unless ``cfg.strict`` is set.
    """
    if cfg.kind == "template":
        return _generate_template(prompt)
    content = _chat_completion(prompt, cfg, attachment)
    return Rationale.parse(content, strict=cfg.strict)


def generate_scene_graph_json(inst: Instance, cfg: GeneratorConfig) -> str:
    """Ask the chat endpoint for a scene graph; returns the raw JSON text."""
    if cfg.kind != "http-chat":
        raise ConfigError("scene-graph generation requires an http-chat generator")
    prompt = render_scene_graph_prompt(inst)
    return _chat_completion(prompt, cfg, inst.image_ref)
