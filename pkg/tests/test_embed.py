import math
import random
import time

import numpy as np
import pytest

from scenealign.embed import (
    EmbedConfig,
    Embedding,
    distance_matrix,
    embed_text,
    embed_texts,
    pairwise_distance,
)
from scenealign.errors import ConfigError, DimensionMismatch, EmptyText, RemoteError, RequestTimeout

from .helpers import naive_distance_matrix, random_unit_vectors


class TestConfig:
    def test_unknown_provider(self):
        with pytest.raises(ConfigError):
            EmbedConfig(provider="magic")

    def test_dimension_too_small(self):
        with pytest.raises(ConfigError):
            EmbedConfig(dimension=1)

    def test_bad_ngram_range(self):
        with pytest.raises(ConfigError):
            EmbedConfig(ngram_min=4, ngram_max=3)
        with pytest.raises(ConfigError):
            EmbedConfig(ngram_min=0)

    def test_http_requires_endpoint(self):
        with pytest.raises(ConfigError):
            EmbedConfig(provider="http")


class TestHashedProvider:
    def test_deterministic(self):
        a = embed_text("the silver motorcycle")
        b = embed_text("the silver motorcycle")
        assert a == b

    def test_unit_norm(self):
        v = embed_text("a man holds a white paper").as_array()
        assert math.isclose(float(np.linalg.norm(v)), 1.0, rel_tol=0, abs_tol=1e-12)

    def test_dimension_follows_config(self):
        cfg = EmbedConfig(dimension=64)
        assert embed_text("anything", cfg).dimension == 64

    def test_distinct_texts_differ(self):
        assert embed_text("red car parked") != embed_text("blue sky above")

    def test_case_folded(self):
        assert embed_text("Silver Motorcycle") == embed_text("silver motorcycle")

    def test_text_shorter_than_smallest_ngram(self):
        v = embed_text("ab").as_array()
        assert math.isclose(float(np.linalg.norm(v)), 1.0, abs_tol=1e-12)

    def test_unicode_text(self):
        assert embed_text("café à côté").dimension == 256

    def test_empty_text_rejected(self):
        with pytest.raises(EmptyText):
            embed_text("")
        with pytest.raises(EmptyText):
            embed_texts(["fine", "   "])

    def test_empty_batch(self):
        assert embed_texts([]) == []

    def test_batch_matches_single(self):
        texts = ["one sentence", "another sentence", "a third"]
        assert embed_texts(texts) == [embed_text(t) for t in texts]


class TestDistances:
    def _embeddings(self, n=8, dim=16, seed=1):
        rng = random.Random(seed)
        return [Embedding(tuple(v)) for v in random_unit_vectors(rng, n, dim)]

    def test_metric_axioms(self):
        embs = self._embeddings()
        for a in embs:
            assert pairwise_distance(a, a) == 0.0
            for b in embs:
                d = pairwise_distance(a, b)
                assert d >= 0.0
                assert d == pairwise_distance(b, a)
                for c in embs:
                    assert d <= pairwise_distance(a, c) + pairwise_distance(c, b) + 1e-12

    def test_matrix_matches_naive_oracle_exactly(self):
        embs = self._embeddings(n=10, dim=24, seed=7)
        got = distance_matrix(embs)
        expected = naive_distance_matrix([e.values for e in embs])
        assert got.shape == (10, 10)
        for i in range(10):
            for j in range(10):
                assert got[i, j] == expected[i][j]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            pairwise_distance(Embedding((1.0, 0.0)), Embedding((1.0, 0.0, 0.0)))

    def test_known_distance(self):
        a = Embedding((0.0, 0.0, 0.0))
        b = Embedding((3.0, 4.0, 0.0))
        assert pairwise_distance(a, b) == 5.0


def _echo_embedding(text: str, dim: int) -> list[float]:
    # deterministic per-text vector so order mixups are detectable
    base = [float(len(text)), float(ord(text[0])), float(ord(text[-1]))]
    return (base + [0.0] * dim)[:dim]


class TestHttpProvider:
    def _cfg(self, api, **kw):
        defaults = dict(
            provider="http",
            endpoint=f"{api.url}/embed",
            dimension=4,
            model="embedder-1",
            backoff_base=0.0,
        )
        defaults.update(kw)
        return EmbedConfig(**defaults)

    def _serve_embeddings(self, payload):
        return 200, {"data": [{"embedding": _echo_embedding(t, 4)} for t in payload["input"]]}

    def test_round_trip_preserves_order(self, mock_api):
        mock_api.handler = self._serve_embeddings
        texts = [f"text number {i}" for i in range(5)]
        out = embed_texts(texts, self._cfg(mock_api))
        assert [e.values for e in out] == [tuple(_echo_embedding(t, 4)) for t in texts]
        assert mock_api.requests[0]["payload"]["model"] == "embedder-1"

    def test_large_batch_is_chunked_and_reassembled(self, mock_api):
        mock_api.handler = self._serve_embeddings
        texts = [f"item {i:03d}" for i in range(40)]
        out = embed_texts(texts, self._cfg(mock_api))
        assert len(mock_api.requests) == 3  # 16 + 16 + 8
        sizes = sorted(len(r["payload"]["input"]) for r in mock_api.requests)
        assert sizes == [8, 16, 16]
        assert [e.values for e in out] == [tuple(_echo_embedding(t, 4)) for t in texts]

    def test_retries_on_throttle_then_succeeds(self, mock_api):
        state = {"n": 0}

        def handler(payload):
            state["n"] += 1
            if state["n"] <= 2:
                return 429, {"error": "slow down"}
            return self._serve_embeddings(payload)

        mock_api.handler = handler
        out = embed_texts(["hello world"], self._cfg(mock_api, max_retries=3))
        assert len(out) == 1
        assert state["n"] == 3

    def test_retries_exhausted(self, mock_api):
        mock_api.handler = lambda payload: (503, {"error": "down"})
        with pytest.raises(RemoteError) as err:
            embed_texts(["hello"], self._cfg(mock_api, max_retries=2))
        assert err.value.status == 503
        assert len(mock_api.requests) == 2

    def test_client_errors_do_not_retry(self, mock_api):
        mock_api.handler = lambda payload: (401, {"error": "bad key"})
        with pytest.raises(RemoteError) as err:
            embed_texts(["hello"], self._cfg(mock_api, max_retries=3))
        assert err.value.status == 401
        assert len(mock_api.requests) == 1

    def test_timeout_raises_dedicated_error(self, mock_api):
        def handler(payload):
            time.sleep(0.5)
            return self._serve_embeddings(payload)

        mock_api.handler = handler
        cfg = self._cfg(mock_api, timeout=0.05, max_retries=2)
        with pytest.raises(RequestTimeout):
            embed_texts(["hello"], cfg)

    def test_dimension_mismatch_detected(self, mock_api):
        mock_api.handler = lambda payload: (
            200,
            {"data": [{"embedding": [1.0, 2.0]} for _ in payload["input"]]},
        )
        with pytest.raises(DimensionMismatch):
            embed_texts(["hello"], self._cfg(mock_api))

    def test_malformed_response_shape(self, mock_api):
        mock_api.handler = lambda payload: (200, {"results": []})
        with pytest.raises(RemoteError):
            embed_texts(["hello"], self._cfg(mock_api))

    def test_wrong_row_count(self, mock_api):
        mock_api.handler = lambda payload: (200, {"data": []})
        with pytest.raises(RemoteError):
            embed_texts(["hello"], self._cfg(mock_api))

    def test_api_key_sent_as_bearer(self, mock_api, monkeypatch):
        monkeypatch.setenv("SCENEALIGN_API_KEY", "sk-test-123")
        mock_api.handler = self._serve_embeddings
        embed_texts(["hello"], self._cfg(mock_api))
        assert mock_api.requests[0]["headers"].get("Authorization") == "Bearer sk-test-123"

    def test_no_key_no_header(self, mock_api, monkeypatch):
        monkeypatch.delenv("SCENEALIGN_API_KEY", raising=False)
        mock_api.handler = self._serve_embeddings
        embed_texts(["hello"], self._cfg(mock_api))
        assert "Authorization" not in mock_api.requests[0]["headers"]
