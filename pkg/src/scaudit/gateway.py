"""Uniform access to chat-completion and embedding providers.

Ships a deterministic mock provider (scripted responses, hash-seeded unit
embeddings) so the whole pipeline runs offline, plus a content-addressed
on-disk response cache with atomic writes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    """Transport, auth, or provider-side failure."""


class BudgetExceeded(RuntimeError):
    """Token or cost cap reached."""


class GatewayTimeout(RuntimeError):
    pass


class DimensionMismatch(RuntimeError):
    pass


class CacheCorrupt(RuntimeError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 2048
    want_logprobs: bool = False

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "model_id": self.model_id,
                "system_prompt": self.system_prompt,
                "user_prompt": self.user_prompt,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class Completion:
    text: str
    token_logprobs: Optional[list[float]] = None
    usage: tuple[int, int] = (0, 0)
    provider: str = "unknown"

    def __post_init__(self) -> None:
        if self.token_logprobs is not None:
            for lp in self.token_logprobs:
                if lp > 0:
                    raise ValueError("token logprobs must be <= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "token_logprobs": self.token_logprobs,
            "usage": list(self.usage),
            "provider": self.provider,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Completion":
        return cls(
            text=str(d["text"]),
            token_logprobs=d.get("token_logprobs"),
            usage=tuple(d.get("usage", (0, 0))),  # type: ignore[arg-type]
            provider=str(d.get("provider", "unknown")),
        )


@dataclass
class EmbeddingVector:
    values: list[float]
    norm: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=float)
        return cls(values=arr.tolist(), norm=float(np.linalg.norm(arr)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    denom = a.norm * b.norm
    if denom == 0:
        return 0.0
    value = float(np.dot(a.as_array(), b.as_array()) / denom)
    return max(-1.0, min(1.0, value))


class Provider(Protocol):
    name: str

    def complete(self, req: CompletionRequest) -> Completion: ...

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


@dataclass
class MockRule:
    """One scripted response: first rule whose pattern matches the prompt wins."""

    pattern: str
    response: str
    logprobs: Optional[list[float]] = None

    def matches(self, prompt: str) -> bool:
        return re.search(self.pattern, prompt, re.DOTALL) is not None


class MockProvider:
    """Deterministic provider: pure function of the request digest.

    Completions come from scripted rules (regex over the combined prompt, or an
    exact request-digest map).  Embeddings are hash-seeded pseudo-random unit
    vectors, replay-stable across processes.
    """

    name = "mock"

    def __init__(
        self,
        rules: Optional[list[MockRule]] = None,
        digest_map: Optional[dict[str, dict[str, Any]]] = None,
        default_response: str = "OK",
        embedding_dim: int = 64,
    ) -> None:
        self.rules = rules or []
        self.digest_map = digest_map or {}
        self.default_response = default_response
        self.embedding_dim = embedding_dim
        self.call_count = 0

    @classmethod
    def from_script(cls, path: str | os.PathLike[str]) -> "MockProvider":
        data = json.loads(Path(path).read_text())
        rules = [
            MockRule(
                pattern=r["pattern"],
                response=r["response"],
                logprobs=r.get("logprobs"),
            )
            for r in data.get("rules", [])
        ]
        return cls(
            rules=rules,
            digest_map=data.get("digests", {}),
            default_response=data.get("default_response", "OK"),
            embedding_dim=int(data.get("embedding_dim", 64)),
        )

    def complete(self, req: CompletionRequest) -> Completion:
        self.call_count += 1
        entry = self.digest_map.get(req.digest())
        if entry is not None:
            return Completion(
                text=entry["response"],
                token_logprobs=entry.get("logprobs") if req.want_logprobs else None,
                usage=(len(req.user_prompt.split()), len(entry["response"].split())),
                provider=self.name,
            )
        prompt = req.system_prompt + "\n" + req.user_prompt
        for rule in self.rules:
            if rule.matches(prompt):
                return Completion(
                    text=rule.response,
                    token_logprobs=rule.logprobs if req.want_logprobs else None,
                    usage=(len(req.user_prompt.split()), len(rule.response.split())),
                    provider=self.name,
                )
        return Completion(
            text=self.default_response,
            token_logprobs=None,
            usage=(len(req.user_prompt.split()), len(self.default_response.split())),
            provider=self.name,
        )

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires at least one text")
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> EmbeddingVector:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.embedding_dim)
        vec /= np.linalg.norm(vec)
        return EmbeddingVector.of(vec)


class HttpProvider:
    """OpenAI-compatible chat/embeddings endpoint with retry + backoff."""

    def __init__(
        self,
        model_id: str,
        endpoint: str,
        api_key_env: str = "SCAUDIT_API_KEY",
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        timeout: float = 60.0,
    ) -> None:
        self.name = f"http:{model_id}"
        self.model_id = model_id
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise ProviderError(f"missing API key in ${self.api_key_env}")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        import requests

        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.post(
                    f"{self.endpoint}{path}",
                    headers=self._headers(),
                    json=payload,
                    timeout=self.timeout,
                )
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise ProviderError(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                return resp.json()
            except Exception as exc:  # noqa: BLE001 - retried, re-raised below
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff_base * (2**attempt))
        raise ProviderError(str(last_error))

    def complete(self, req: CompletionRequest) -> Completion:
        payload: dict[str, Any] = {
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.want_logprobs:
            payload["logprobs"] = True
        data = self._post("/chat/completions", payload)
        choice = data["choices"][0]
        logprobs = None
        lp = choice.get("logprobs")
        if lp and lp.get("content"):
            logprobs = [min(0.0, float(t["logprob"])) for t in lp["content"]]
        usage = data.get("usage", {})
        return Completion(
            text=choice["message"]["content"],
            token_logprobs=logprobs,
            usage=(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)),
            provider=self.name,
        )

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires at least one text")
        data = self._post("/embeddings", {"model": self.model_id, "input": list(texts)})
        vectors = [EmbeddingVector.of(item["embedding"]) for item in data["data"]]
        dims = {len(v.values) for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"provider returned mixed dimensions {dims}")
        return vectors


class Gateway:
    """Provider front-end with an optional persistent completion cache."""

    def __init__(self, provider: Provider, cache_dir: Optional[str | os.PathLike[str]] = None) -> None:
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._embed_dim: Optional[int] = None

    def complete(self, req: CompletionRequest) -> Completion:
        return self.provider.complete(req)

    def cached_complete(self, req: CompletionRequest) -> Completion:
        if self.cache_dir is None:
            return self.complete(req)
        key = req.digest()
        path = self.cache_dir / f"{key}.json"
        if path.exists():
            try:
                record = json.loads(path.read_text())
                return Completion.from_dict(record)
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                log.warning("corrupt cache record %s: %s; recomputing", path.name, exc)
        completion = self.complete(req)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(completion.to_dict()))
        os.replace(tmp, path)
        return completion

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires at least one text")
        vectors = self.provider.embed(texts)
        for v in vectors:
            if self._embed_dim is None:
                self._embed_dim = len(v.values)
            elif len(v.values) != self._embed_dim:
                raise DimensionMismatch(
                    f"expected dimension {self._embed_dim}, got {len(v.values)}"
                )
        return vectors


def similarity_fn(gateway: Gateway) -> Callable[[str, str], float]:
    """Cosine similarity between two texts under the gateway's embedder."""

    def sim(a: str, b: str) -> float:
        va, vb = gateway.embed([a, b])
        return cosine(va, vb)

    return sim
