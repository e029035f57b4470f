"""Preference records, JSONL export, and a DPO loss evaluator.

The evaluator scores existing (chosen, rejected) pairs under caller-supplied
log-probability providers; no training happens here.  A tiny unigram softmax
policy with an analytic gradient makes the loss implementation checkable
against finite differences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Protocol, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    MissingRationale,
    NonFiniteLogProb,
    OutOfVocabulary,
)
from .generate import Instance
from .perturb import NegativeCandidate
from .rationale import Rationale
from .scene_graph import SceneGraph, serialize_scene_graph

logger = logging.getLogger(__name__)

_PROMPT_GRAPH_SEP = "\n\nScene Graph: "


@dataclass(frozen=True)
class PreferenceRecord:
    """One DPO pair: shared context, preferred and dispreferred rationales."""

    id: str
    image_ref: str
    question: str
    scene_graph_json: str
    chosen: str
    rejected: str
    meta: dict = field(default_factory=dict)

    @property
    def prompt(self) -> str:
        return f"{self.question}{_PROMPT_GRAPH_SEP}{self.scene_graph_json}"


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    # weight records so every instance counts equally instead of every pair
    per_instance_weighting: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("beta must be positive")


class LogProbProvider(Protocol):
    """Scores a response under some policy given the record's prompt.

    Implementations that are not safe for concurrent use should set a
    ``concurrent_safe = False`` attribute; the evaluator then scores
    records serially (which is also the default execution mode).
    """

    def log_prob(self, context: str, response: str) -> float: ...


def build_preference_records(
    inst: Instance,
    sg_pos: SceneGraph,
    tau_pos: Rationale,
    negatives: Sequence[NegativeCandidate],
) -> list[PreferenceRecord]:
    """Pair the positive rationale against each selected negative.

    Negatives lacking a rationale raise :class:`MissingRationale`; a negative
    whose rationale text equals the positive is dropped with a diagnostic.
    """
    graph_json = serialize_scene_graph(sg_pos)
    records = []
    rank = 0
    for cand in negatives:
        if cand.rationale is None:
            raise MissingRationale(f"instance {inst.id!r}: candidate has no rationale")
        rejected = cand.rationale.raw_text
        if rejected == tau_pos.raw_text:
            logger.warning("instance %r: negative rationale equals the positive; dropped", inst.id)
            continue
        rank += 1
        meta = {
            "instance_id": inst.id,
            "operator": cand.operator,
            "trace": cand.trace.to_dict(),
            "jaccard": cand.jaccard,
            "diversity_rank": rank,
        }
        if cand.duplicated:
            meta["duplicated"] = [list(d) if isinstance(d, tuple) else d for d in cand.duplicated]
        records.append(
            PreferenceRecord(
                id=f"{inst.id}#{rank}",
                image_ref=inst.image_ref,
                question=inst.question,
                scene_graph_json=graph_json,
                chosen=tau_pos.raw_text,
                rejected=rejected,
                meta=meta,
            )
        )
    return records


def record_to_json(record: PreferenceRecord) -> str:
    payload = {
        "id": record.id,
        "images": [record.image_ref],
        "prompt": record.prompt,
        "chosen": record.chosen,
        "rejected": record.rejected,
        "meta": record.meta,
    }
    return json.dumps(payload, ensure_ascii=False)


def record_from_json(line: str) -> PreferenceRecord:
    obj = json.loads(line)
    question, sep, graph_json = obj["prompt"].rpartition(_PROMPT_GRAPH_SEP)
    if not sep:
        question, graph_json = obj["prompt"], ""
    return PreferenceRecord(
        id=obj["id"],
        image_ref=obj["images"][0] if obj.get("images") else "",
        question=question,
        scene_graph_json=graph_json,
        chosen=obj["chosen"],
        rejected=obj["rejected"],
        meta=obj.get("meta", {}),
    )


def export_jsonl(records: Sequence[PreferenceRecord], sink: Union[str, Path, IO[str]]) -> int:
    """Write one JSON object per record; returns the line count."""
    if hasattr(sink, "write"):
        for record in records:
            sink.write(record_to_json(record) + "\n")
        return len(records)
    path = Path(sink)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record_to_json(record) + "\n")
    return len(records)


def import_jsonl(source: Union[str, Path, IO[str]]) -> list[PreferenceRecord]:
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    return [record_from_json(line) for line in lines if line.strip()]


# ---------------------------------------------------------------------------
# loss evaluation


def _softplus(x: float) -> float:
    # stable log(1 + exp(x))
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _score(provider, context: str, response: str, what: str) -> float:
    value = provider.log_prob(context, response)
    if not math.isfinite(value):
        raise NonFiniteLogProb(f"{what} log-prob is {value!r}")
    return float(value)


def _record_weights(records: Sequence[PreferenceRecord], cfg: DpoConfig) -> list[float]:
    if not cfg.per_instance_weighting:
        return [1.0 / len(records)] * len(records)
    groups: dict[str, int] = {}
    keys = []
    for record in records:
        key = str(record.meta.get("instance_id", record.id))
        keys.append(key)
        groups[key] = groups.get(key, 0) + 1
    n_groups = len(groups)
    return [1.0 / (n_groups * groups[key]) for key in keys]


def dpo_loss(
    records: Sequence[PreferenceRecord],
    policy: LogProbProvider,
    reference: LogProbProvider,
    cfg: DpoConfig = DpoConfig(),
) -> tuple[float, list[float]]:
    """Mean DPO loss and the per-record scaled margins.

    For each record the margin is ``beta * ((policy log-ratio) - (reference
    log-ratio))`` of chosen over rejected; the loss is the softplus of its
    negation, averaged per pair (or per instance under the weighting flag).
    """
    if not records:
        raise ValueError("dpo_loss requires at least one record")
    weights = _record_weights(records, cfg)
    margins = []
    total = 0.0
    for record, weight in zip(records, weights):
        ctx = record.prompt
        pol_c = _score(policy, ctx, record.chosen, "policy chosen")
        pol_r = _score(policy, ctx, record.rejected, "policy rejected")
        ref_c = _score(reference, ctx, record.chosen, "reference chosen")
        ref_r = _score(reference, ctx, record.rejected, "reference rejected")
        margin = cfg.beta * ((pol_c - pol_r) - (ref_c - ref_r))
        margins.append(margin)
        total += weight * _softplus(-margin)
    return total, margins


# ---------------------------------------------------------------------------
# toy policy with analytic gradient


def _logsumexp(values: np.ndarray) -> float:
    m = float(np.max(values))
    return m + math.log(float(np.sum(np.exp(values - m))))


@dataclass
class ToyPolicy:
    """Unigram softmax language model over a fixed vocabulary.

    ``log_prob`` of a whitespace-tokenized response is the sum of per-token
    log-probabilities; response length is fixed by the text, so the model is
    exactly a categorical distribution applied per token.
    """

    vocabulary: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.vocabulary) != self.weights.shape[0]:
            raise ConfigError("vocabulary and weights disagree in length")
        self._index = {token: i for i, token in enumerate(self.vocabulary)}

    @classmethod
    def uniform(cls, vocabulary: Sequence[str]) -> "ToyPolicy":
        return cls(tuple(vocabulary), np.zeros(len(vocabulary)))

    def token_counts(self, response: str) -> np.ndarray:
        counts = np.zeros(len(self.vocabulary), dtype=np.float64)
        for token in response.split():
            idx = self._index.get(token)
            if idx is None:
                raise OutOfVocabulary(token)
            counts[idx] += 1.0
        return counts

    def log_prob(self, context: str, response: str) -> float:
        counts = self.token_counts(response)
        length = float(np.sum(counts))
        return float(np.dot(counts, self.weights) - length * _logsumexp(self.weights))


def toy_policy_gradient(
    policy: ToyPolicy,
    records: Sequence[PreferenceRecord],
    reference: LogProbProvider,
    cfg: DpoConfig = DpoConfig(),
) -> np.ndarray:
    """Analytic gradient of the mean DPO loss in the toy policy's weights.

    The reference provider is treated as a constant.  Matches central finite
    differences of :func:`dpo_loss` because both share the same weighting.
    """
    if not records:
        raise ValueError("toy_policy_gradient requires at least one record")
    weights = _record_weights(records, cfg)
    probs = np.exp(policy.weights - _logsumexp(policy.weights))
    grad = np.zeros_like(policy.weights)
    for record, weight in zip(records, weights):
        ctx = record.prompt
        counts_c = policy.token_counts(record.chosen)
        counts_r = policy.token_counts(record.rejected)
        pol_c = _score(policy, ctx, record.chosen, "policy chosen")
        pol_r = _score(policy, ctx, record.rejected, "policy rejected")
        ref_c = _score(reference, ctx, record.chosen, "reference chosen")
        ref_r = _score(reference, ctx, record.rejected, "reference rejected")
        margin = cfg.beta * ((pol_c - pol_r) - (ref_c - ref_r))
        # d margin / d theta = beta * ((c+ - L+ p) - (c- - L- p))
        len_c = float(np.sum(counts_c))
        len_r = float(np.sum(counts_r))
        dmargin = cfg.beta * ((counts_c - len_c * probs) - (counts_r - len_r * probs))
        grad += weight * (-_sigmoid(-margin)) * dmargin
    return grad


def finite_difference_gradient(
    policy: ToyPolicy,
    records: Sequence[PreferenceRecord],
    reference: LogProbProvider,
    cfg: DpoConfig = DpoConfig(),
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of the mean loss, for checking the analytic one."""
    base = np.array(policy.weights, dtype=np.float64)
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for sign in (1.0, -1.0):
            shifted = base.copy()
            shifted[i] += sign * h
            loss, _ = dpo_loss(records, ToyPolicy(policy.vocabulary, shifted), reference, cfg)
            grad[i] += sign * loss
        grad[i] /= 2.0 * h
    return grad
