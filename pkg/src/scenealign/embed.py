"""Text embeddings for diversity selection.

The default provider is a fully offline, deterministic signed n-gram hasher;
an HTTP provider speaks the common ``{model, input} -> {data: [{embedding}]}``
wire shape for drop-in use of hosted embedding models.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .errors import ConfigError, DimensionMismatch, EmptyText, RemoteError, RequestTimeout

logger = logging.getLogger(__name__)

API_KEY_ENV = "SCENEALIGN_API_KEY"

_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})
_HTTP_BATCH = 16


@dataclass(frozen=True)
class EmbedConfig:
    """Provider choice plus hashing / transport parameters."""

    provider: str = "hashed-ngram"  # or "http"
    dimension: int = 256
    ngram_min: int = 3
    ngram_max: int = 5
    endpoint: str | None = None
    model: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.provider not in ("hashed-ngram", "http"):
            raise ConfigError(f"unknown embedding provider {self.provider!r}")
        if self.dimension < 2:
            raise ConfigError("embedding dimension must be at least 2")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ConfigError(f"invalid n-gram range ({self.ngram_min}, {self.ngram_max})")
        if self.provider == "http" and not self.endpoint:
            raise ConfigError("http embedding provider requires an endpoint")


@dataclass(frozen=True)
class Embedding:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def _stable_hash(data: str) -> int:
    digest = hashlib.blake2b(data.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _hashed_ngram_vector(text: str, cfg: EmbedConfig) -> np.ndarray:
    folded = text.casefold()
    grams: list[str] = []
    for n in range(cfg.ngram_min, cfg.ngram_max + 1):
        grams.extend(folded[i : i + n] for i in range(len(folded) - n + 1))
    if not grams:
        grams = [folded]  # text shorter than the smallest n-gram
    vec = np.zeros(cfg.dimension, dtype=np.float64)
    for gram in grams:
        h = _stable_hash(gram)
        bucket = (h >> 1) % cfg.dimension
        vec[bucket] += 1.0 if h & 1 else -1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # signed counts cancelled out completely; fall back to a one-hot
        vec[_stable_hash(folded) % cfg.dimension] = 1.0
        norm = 1.0
    return vec / norm


def _post_with_retry(payload: dict, cfg: EmbedConfig) -> dict:
    headers = {}
    key = os.environ.get(API_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
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
            return resp.json()
        last_status = resp.status_code
        last_detail = resp.text[:200]
        if resp.status_code not in _RETRYABLE_STATUSES:
            raise RemoteError(last_status, last_detail)
    if timed_out and last_status is None:
        raise RequestTimeout(f"no response after {cfg.max_retries} attempts")
    raise RemoteError(last_status, last_detail)


def _http_embed_batch(texts: Sequence[str], cfg: EmbedConfig) -> list[Embedding]:
    payload: dict = {"input": list(texts)}
    if cfg.model:
        payload["model"] = cfg.model
    body = _post_with_retry(payload, cfg)
    try:
        rows = body["data"]
        vectors = [row["embedding"] for row in rows]
    except (KeyError, TypeError) as exc:
        raise RemoteError(None, f"unexpected response shape: {exc}") from exc
    if len(vectors) != len(texts):
        raise RemoteError(None, f"expected {len(texts)} embeddings, got {len(vectors)}")
    out = []
    for vec in vectors:
        if len(vec) != cfg.dimension:
            raise DimensionMismatch(
                f"endpoint returned dimension {len(vec)}, configured {cfg.dimension}"
            )
        out.append(Embedding(tuple(float(x) for x in vec)))
    return out


def embed_texts(texts: Sequence[str], cfg: EmbedConfig = EmbedConfig()) -> list[Embedding]:
    """Embed a batch, preserving input order.

    The HTTP provider chunks the batch and issues bounded concurrent requests;
    results are reassembled by request index.
    """
    for text in texts:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
    if cfg.provider == "hashed-ngram":
        return [Embedding(tuple(_hashed_ngram_vector(t, cfg))) for t in texts]
    chunks = [texts[i : i + _HTTP_BATCH] for i in range(0, len(texts), _HTTP_BATCH)]
    if len(chunks) <= 1:
        return _http_embed_batch(texts, cfg) if texts else []
    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        results = list(pool.map(lambda chunk: _http_embed_batch(chunk, cfg), chunks))
    return [emb for chunk in results for emb in chunk]


def embed_text(text: str, cfg: EmbedConfig = EmbedConfig()) -> Embedding:
    """Embed one text; deterministic for the hashed n-gram provider."""
    return embed_texts([text], cfg)[0]


def pairwise_distance(a: Embedding, b: Embedding) -> float:
    """Euclidean distance between two embeddings of equal dimension."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimensions differ: {a.dimension} vs {b.dimension}")
    return math.dist(a.values, b.values)


def distance_matrix(embeddings: Sequence[Embedding]) -> np.ndarray:
    """Symmetric matrix of pairwise Euclidean distances.

    Computed pairwise with :func:`pairwise_distance` so results are
    bit-identical to naive per-pair evaluation; candidate sets are small.
    """
    n = len(embeddings)
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = pairwise_distance(embeddings[i], embeddings[j])
    return out
