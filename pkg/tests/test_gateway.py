from __future__ import annotations

import json

import numpy as np
import pytest

from scaudit.gateway import (
    Completion,
    CompletionRequest,
    DimensionMismatch,
    Gateway,
    MockProvider,
    MockRule,
    cosine,
)


def req(prompt="hello", **kw):
    return CompletionRequest(model_id="m", system_prompt="sys", user_prompt=prompt, **kw)


def test_scripted_response():
    provider = MockProvider(rules=[MockRule(pattern=r"hello", response="OK")])
    assert provider.complete(req()).text == "OK"


def test_mock_deterministic_across_instances():
    r = req("same prompt")
    a = MockProvider().complete(r)
    b = MockProvider().complete(r)
    assert a.text == b.text


def test_max_tokens_zero_rejected():
    with pytest.raises(ValueError):
        req(max_tokens=0)


def test_negative_temperature_rejected():
    with pytest.raises(ValueError):
        req(temperature=-0.1)


def test_scripted_logprobs_returned_verbatim():
    provider = MockProvider(rules=[MockRule(pattern=r"hello", response="OK", logprobs=[-0.1, -0.2])])
    c = provider.complete(req(want_logprobs=True))
    assert c.token_logprobs == [-0.1, -0.2]


def test_logprobs_omitted_without_flag():
    provider = MockProvider(rules=[MockRule(pattern=r"hello", response="OK", logprobs=[-0.1])])
    assert provider.complete(req()).token_logprobs is None


def test_positive_logprob_rejected():
    with pytest.raises(ValueError):
        Completion(text="x", token_logprobs=[0.5])


def test_embed_deterministic():
    provider = MockProvider()
    v1 = provider.embed(["a"])[0]
    v2 = provider.embed(["a"])[0]
    assert v1.values == v2.values


def test_embed_arity_and_dimension():
    vs = MockProvider(embedding_dim=32).embed(["a", "b"])
    assert len(vs) == 2
    assert len(vs[0].values) == len(vs[1].values) == 32


def test_embed_unit_norm():
    v = MockProvider().embed(["anything"])[0]
    assert abs(v.norm - 1.0) < 1e-9
    assert abs(np.linalg.norm(v.values) - 1.0) < 1e-9


def test_embed_empty_rejected():
    with pytest.raises(ValueError):
        MockProvider().embed([])


def test_cosine_self():
    v = MockProvider().embed(["x"])[0]
    assert cosine(v, v) == pytest.approx(1.0)


def test_cache_hit_skips_provider(tmp_path):
    provider = MockProvider()
    gw = Gateway(provider, cache_dir=tmp_path)
    r = req("cache me")
    first = gw.cached_complete(r)
    second = gw.cached_complete(r)
    assert provider.call_count == 1
    assert first.text == second.text


def test_cache_key_sensitive_to_temperature(tmp_path):
    provider = MockProvider()
    gw = Gateway(provider, cache_dir=tmp_path)
    gw.cached_complete(req("p", temperature=0.0))
    gw.cached_complete(req("p", temperature=0.5))
    assert provider.call_count == 2


def test_corrupt_cache_recomputed_and_repaired(tmp_path):
    provider = MockProvider()
    gw = Gateway(provider, cache_dir=tmp_path)
    r = req("corrupt me")
    gw.cached_complete(r)
    path = tmp_path / f"{r.digest()}.json"
    path.write_text("{not json")
    c = gw.cached_complete(r)
    assert provider.call_count == 2
    assert c.text == "OK"
    # repaired: the record parses again and the next call is a hit
    json.loads(path.read_text())
    gw.cached_complete(r)
    assert provider.call_count == 2


def test_cached_equals_uncached_for_mock(tmp_path):
    r = req("observational equivalence")
    plain = Gateway(MockProvider()).complete(r)
    cached = Gateway(MockProvider(), cache_dir=tmp_path).cached_complete(r)
    assert plain.text == cached.text
    assert plain.token_logprobs == cached.token_logprobs


def test_dimension_mismatch_detected(tmp_path):
    class ShiftyProvider(MockProvider):
        def embed(self, texts):
            vecs = super().embed(texts)
            self.embedding_dim += 8
            return vecs

    gw = Gateway(ShiftyProvider())
    gw.embed(["a"])
    with pytest.raises(DimensionMismatch):
        gw.embed(["b"])
