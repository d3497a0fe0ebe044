"""Scored text generation and sentence similarity providers.

Backends return :class:`ScoredGeneration` objects carrying the total negative
log-likelihood (nats) of the generated or forced text. Three backends ship
here: :class:`HTTPBackend` for a remote completion service,
:class:`ScriptedBackend` for deterministic tests and :class:`ReplayBackend`
for re-running from a recorded trace log.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
import uuid
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    retryable = False


class TransportError(BackendError):
    retryable = True


class BackendRefusal(BackendError):
    pass


class CapabilityError(BackendError):
    pass


class ScriptMissError(BackendError):
    pass


@dataclass(frozen=True)
class ScoredGeneration:
    text: str
    nll: float

    def __post_init__(self):
        if self.nll is None or not math.isfinite(self.nll) or self.nll < 0:
            raise BackendError(f"invalid NLL {self.nll!r} for {self.text!r}")


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class GenerationBackend(ABC):
    backend_id = "backend"
    free_generation = True
    candidate_scoring = True

    @abstractmethod
    def _generate(self, prompt: str, max_tokens: int) -> ScoredGeneration:
        ...

    @abstractmethod
    def _score(self, prompt: str, candidates: Sequence[str]) -> list[ScoredGeneration]:
        ...

    def generate(self, prompt: str, max_tokens: int = 16) -> ScoredGeneration:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if not self.free_generation:
            raise CapabilityError(f"{self.backend_id} does not support free generation")
        return self._generate(prompt, max_tokens)

    def score_candidates(self, prompt: str, candidates: Sequence[str]) -> list[ScoredGeneration]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if not candidates or any(not c for c in candidates):
            raise ValueError("candidates must be a non-empty list of non-empty strings")
        if not self.candidate_scoring:
            raise CapabilityError(f"{self.backend_id} does not support candidate scoring")
        out = self._score(prompt, list(candidates))
        if len(out) != len(candidates):
            raise BackendError("backend returned a wrong number of candidate scores")
        return out


def generate(backend: GenerationBackend, prompt: str, max_tokens: int = 16) -> ScoredGeneration:
    return backend.generate(prompt, max_tokens)


def score_candidates(backend: GenerationBackend, prompt: str, candidates: Sequence[str]) -> list[ScoredGeneration]:
    return backend.score_candidates(prompt, candidates)


class ScriptedBackend(GenerationBackend):
    """Deterministic mock keyed on prompt hash.

    ``generations`` maps prompt -> (text, nll); ``scores`` maps prompt ->
    {candidate: nll}. Candidates missing from a script fall back to
    ``default_nll`` when it is set, otherwise they raise.
    """

    backend_id = "scripted"

    def __init__(
        self,
        generations: Mapping[str, tuple[str, float]] | None = None,
        scores: Mapping[str, Mapping[str, float]] | None = None,
        default_nll: float | None = None,
        free_generation: bool = True,
        candidate_scoring: bool = True,
    ):
        self._gen = {prompt_sha256(p): tuple(v) for p, v in (generations or {}).items()}
        self._scores = {prompt_sha256(p): dict(v) for p, v in (scores or {}).items()}
        self.default_nll = default_nll
        self.free_generation = free_generation
        self.candidate_scoring = candidate_scoring

    def add_generation(self, prompt: str, text: str, nll: float = 0.0) -> None:
        self._gen[prompt_sha256(prompt)] = (text, nll)

    def add_scores(self, prompt: str, scores: Mapping[str, float]) -> None:
        self._scores.setdefault(prompt_sha256(prompt), {}).update(scores)

    def _generate(self, prompt, max_tokens):
        try:
            text, nll = self._gen[prompt_sha256(prompt)]
        except KeyError:
            raise ScriptMissError("no script for prompt") from None
        return ScoredGeneration(text, float(nll))

    def _score(self, prompt, candidates):
        table = self._scores.get(prompt_sha256(prompt))
        if table is None and self.default_nll is None:
            raise ScriptMissError("no script for prompt")
        table = table or {}
        out = []
        for c in candidates:
            nll = table.get(c, self.default_nll)
            if nll is None:
                raise ScriptMissError(f"no script for candidate {c!r}")
            out.append(ScoredGeneration(c, float(nll)))
        return out

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        """Load ``{"generate": {prompt: [text, nll]}, "score": {prompt: {cand: nll}}, "default_nll": x}``."""
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            generations={p: (t, n) for p, (t, n) in doc.get("generate", {}).items()},
            scores=doc.get("score", {}),
            default_nll=doc.get("default_nll"),
        )


class HTTPBackend(GenerationBackend):
    """Client for a completion service that returns token log-probabilities.

    Request body: ``{"prompt", "max_tokens", "logprobs": true, "echo"}``. The
    response may be OpenAI-completions shaped (``choices[0].logprobs``) or flat
    (``{"text", "token_logprobs", "text_offset"}``). Candidates are scored by
    echoing ``prompt + separator + candidate`` with ``max_tokens=0`` and summing
    the log-probabilities of tokens past the prompt.
    """

    def __init__(
        self,
        url: str,
        backend_id: str = "http",
        nll_mode: str = "total",
        separator: str = " ",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        extra_body: Mapping[str, Any] | None = None,
        headers: Mapping[str, str] | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        if nll_mode not in ("total", "mean"):
            raise ValueError("nll_mode must be 'total' or 'mean'")
        self.url = url
        self.backend_id = backend_id
        self.nll_mode = nll_mode
        self.separator = separator
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.extra_body = dict(extra_body or {})
        self._client = httpx.Client(timeout=timeout, headers=dict(headers or {}), transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, body: dict) -> dict:
        request_id = uuid.uuid4().hex
        body = {**self.extra_body, **body, "request_id": request_id}
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._client.post(self.url, json=body, headers={"X-Request-ID": request_id})
            except httpx.TransportError as exc:
                last = TransportError(f"{self.backend_id}: {exc}")
            else:
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = TransportError(f"{self.backend_id}: HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise BackendRefusal(f"{self.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    data = resp.json()
                    echoed = data.get("request_id")
                    if echoed is not None and echoed != request_id:
                        raise BackendError(f"{self.backend_id}: response for another request")
                    return data
            if attempt + 1 < self.max_attempts:
                time.sleep(self.backoff * 2**attempt)
        assert last is not None
        raise last

    @staticmethod
    def _unpack(data: dict) -> tuple[str, list[float | None], list[int] | None]:
        if "choices" in data:
            choice = data["choices"][0]
            lp = choice.get("logprobs") or {}
            return choice.get("text", ""), lp.get("token_logprobs"), lp.get("text_offset")
        return data.get("text", ""), data.get("token_logprobs"), data.get("text_offset")

    def _to_nll(self, logprobs: Iterable[float | None]) -> float:
        vals = [lp for lp in logprobs if lp is not None]
        if not vals:
            raise BackendError(f"{self.backend_id}: NLL unavailable")
        total = -float(sum(vals))
        if self.nll_mode == "mean":
            total /= len(vals)
        return max(total, 0.0)

    def _generate(self, prompt, max_tokens):
        data = self._post({"prompt": prompt, "max_tokens": max_tokens, "logprobs": True, "echo": False})
        text, logprobs, _ = self._unpack(data)
        if logprobs is None:
            raise BackendError(f"{self.backend_id}: NLL unavailable")
        if not logprobs:
            return ScoredGeneration(text, 0.0)
        return ScoredGeneration(text, self._to_nll(logprobs))

    def _score(self, prompt, candidates):
        out = []
        for cand in candidates:
            data = self._post(
                {"prompt": prompt + self.separator + cand, "max_tokens": 0, "logprobs": True, "echo": True}
            )
            _, logprobs, offsets = self._unpack(data)
            if logprobs is None or offsets is None:
                raise BackendError(f"{self.backend_id}: NLL unavailable")
            cont = [lp for lp, off in zip(logprobs, offsets) if off >= len(prompt)]
            out.append(ScoredGeneration(cand, self._to_nll(cont)))
        return out


class TraceLog:
    """Append-only JSONL record of backend calls; safe to share between threads."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        with self.path.open(encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


class TracingBackend(GenerationBackend):
    """Wrap a backend and record every call into a :class:`TraceLog`."""

    def __init__(self, inner: GenerationBackend, trace: TraceLog):
        self.inner = inner
        self.trace = trace
        self.backend_id = inner.backend_id
        self.free_generation = inner.free_generation
        self.candidate_scoring = inner.candidate_scoring

    def _record(self, kind: str, prompt: str, gen: ScoredGeneration) -> None:
        self.trace.append(
            {
                "kind": kind,
                "prompt_sha256": prompt_sha256(prompt),
                "prompt": prompt,
                "response_text": gen.text,
                "nll": gen.nll,
                "backend_id": self.backend_id,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            }
        )

    def _generate(self, prompt, max_tokens):
        gen = self.inner.generate(prompt, max_tokens)
        self._record("generate", prompt, gen)
        return gen

    def _score(self, prompt, candidates):
        out = self.inner.score_candidates(prompt, candidates)
        for gen in out:
            self._record("score", prompt, gen)
        return out


class ReplayBackend(GenerationBackend):
    """Answer calls from a trace log only; unseen calls raise :class:`ScriptMissError`."""

    backend_id = "replay"

    def __init__(self, records: Iterable[dict]):
        self._gen: dict[str, ScoredGeneration] = {}
        self._scores: dict[tuple[str, str], float] = {}
        for r in records:
            key = r.get("prompt_sha256") or prompt_sha256(r["prompt"])
            if r.get("kind", "generate") == "generate":
                self._gen[key] = ScoredGeneration(r["response_text"], float(r["nll"]))
            else:
                self._scores[(key, r["response_text"])] = float(r["nll"])

    @classmethod
    def from_log(cls, path: str | Path) -> "ReplayBackend":
        return cls(TraceLog(path).records())

    def _generate(self, prompt, max_tokens):
        try:
            return self._gen[prompt_sha256(prompt)]
        except KeyError:
            raise ScriptMissError("no script for prompt") from None

    def _score(self, prompt, candidates):
        key = prompt_sha256(prompt)
        out = []
        for c in candidates:
            try:
                out.append(ScoredGeneration(c, self._scores[(key, c)]))
            except KeyError:
                raise ScriptMissError(f"no recorded score for candidate {c!r}") from None
        return out


class SimilarityProvider(ABC):
    @abstractmethod
    def similarity(self, a: str, b: str) -> float:
        ...

    def similarities(self, a: str, others: Sequence[str]) -> list[float]:
        return [self.similarity(a, b) for b in others]


def similarity(provider: SimilarityProvider, a: str, b: str) -> float:
    if not a or not b:
        raise ValueError("similarity inputs must be non-empty")
    return provider.similarity(a, b)


class HashedBagOfWords(SimilarityProvider):
    """Offline fallback: lowercased whitespace tokens hashed into ``dim`` buckets, cosine."""

    def __init__(self, dim: int = 4096):
        self.dim = dim

    def bucket(self, token: str) -> int:
        return zlib.crc32(token.encode("utf-8")) % self.dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in text.lower().split():
            vec[self.bucket(tok)] += 1.0
        return vec

    def similarity(self, a, b):
        va, vb = self.embed(a), self.embed(b)
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        if na == 0 or nb == 0:
            return 0.0
        return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))

    def similarities(self, a, others):
        va = self.embed(a)
        na = np.linalg.norm(va)
        out = []
        for b in others:
            vb = self.embed(b)
            nb = np.linalg.norm(vb)
            out.append(0.0 if na == 0 or nb == 0 else float(np.clip(va @ vb / (na * nb), -1.0, 1.0)))
        return out


class SentenceTransformerSimilarity(SimilarityProvider):
    """Cosine similarity of sentence-transformers embeddings (loaded lazily)."""

    def __init__(self, model_name: str = "stsb-roberta-base"):
        self.model_name = model_name
        self._model = None
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        with self._lock:
            if self._model is None:
                from sentence_transformers import SentenceTransformer

                self._model = SentenceTransformer(self.model_name)
            missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
            if missing:
                for t, v in zip(missing, self._model.encode(missing, normalize_embeddings=True)):
                    self._cache[t] = np.asarray(v, dtype=float)
            return [self._cache[t] for t in texts]

    def similarity(self, a, b):
        va, vb = self._embed([a, b])
        return float(np.clip(va @ vb, -1.0, 1.0))

    def similarities(self, a, others):
        vecs = self._embed([a, *others])
        return [float(np.clip(vecs[0] @ v, -1.0, 1.0)) for v in vecs[1:]]
