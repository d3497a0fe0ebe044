"""Run configuration shared by the CLI and the estimators.

Example (YAML)::

    schema: schema.json
    backend: {type: http, url: "http://localhost:8000/v1/completions"}
    similarity: hashed
    intent_mode: unconstrained
    abstain: {mode: phrase_set, phrases: [unanswerable, no answer]}
    max_span_tokens: 10
    beam: {k: 1, alpha: 0.5}
    trace_log: traces.log.jsonl

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .backend import (
    GenerationBackend,
    HashedBagOfWords,
    HTTPBackend,
    ReplayBackend,
    ScriptedBackend,
    SentenceTransformerSimilarity,
    SimilarityProvider,
    TraceLog,
    TracingBackend,
)
from .intent import DEFAULT_CONTENT_FREE, DEFAULT_MAX_INTENT_TOKENS, INTENT_MODES
from .pipeline import BeamConfig, PipelineConfig
from .schema import Schema, load_schema
from .slots import DEFAULT_ABSTAIN_PHRASES, DEFAULT_MAX_SPAN_TOKENS, AbstainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    schema_path: Path
    backend: dict[str, Any] = field(default_factory=dict)
    similarity: dict[str, Any] = field(default_factory=lambda: {"type": "hashed"})
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    trace_log: Path | None = None
    base_dir: Path = Path(".")

    def load_schema(self) -> Schema:
        return load_schema(self.schema_path)

    def make_backend(self, record: bool = True) -> GenerationBackend:
        spec = dict(self.backend)
        kind = spec.pop("type", None)
        if kind == "http":
            if "url" not in spec:
                raise ConfigError("backend.url is required for an http backend")
            backend: GenerationBackend = HTTPBackend(**spec)
        elif kind == "scripted":
            backend = ScriptedBackend.from_file(self._path(spec["script"]))
        elif kind == "replay":
            backend = ReplayBackend.from_log(self._path(spec["trace_log"]))
        else:
            raise ConfigError(f"unknown backend type {kind!r}")
        if record and self.trace_log is not None and kind != "replay":
            backend = TracingBackend(backend, TraceLog(self.trace_log))
        return backend

    def make_similarity(self) -> SimilarityProvider:
        spec = dict(self.similarity)
        kind = spec.pop("type", "hashed")
        if kind == "hashed":
            return HashedBagOfWords(**spec)
        if kind in ("sentence-transformers", "sentence_transformers"):
            return SentenceTransformerSimilarity(spec.get("model", "stsb-roberta-base"))
        raise ConfigError(f"unknown similarity type {kind!r}")

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def _as_mapping(value, name: str) -> dict:
    if isinstance(value, str):
        return {"type": value}
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a mapping or a type name")
    return dict(value)


def config_from_dict(doc: dict, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    if "schema" not in doc:
        raise ConfigError("config.schema is required")

    def path(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    mode = doc.get("intent_mode", "unconstrained")
    if mode not in INTENT_MODES:
        raise ConfigError(f"intent_mode must be one of {INTENT_MODES}")
    ab = doc.get("abstain", {}) or {}
    try:
        abstain = AbstainConfig(
            mode=ab.get("mode", "phrase_set"),
            phrases=tuple(ab.get("phrases", DEFAULT_ABSTAIN_PHRASES)),
            threshold=ab.get("threshold"),
        )
        pipeline = PipelineConfig(
            intent_mode=mode,
            abstain=abstain,
            max_span_tokens=int(doc.get("max_span_tokens", DEFAULT_MAX_SPAN_TOKENS)),
            max_intent_tokens=int(doc.get("max_intent_tokens", DEFAULT_MAX_INTENT_TOKENS)),
            content_free_inputs=tuple(doc.get("content_free_inputs", DEFAULT_CONTENT_FREE)),
            raw_labels=bool(doc.get("raw_labels", False)),
        )
        bm = doc.get("beam", {}) or {}
        beam = BeamConfig(
            k=int(bm.get("k", 1)),
            alpha=float(bm.get("alpha", 0.5)),
            max_combinations=int(bm.get("max_combinations", 10_000)),
            abstain_score=bm.get("abstain_score", "normalized"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        schema_path=path(doc["schema"]),
        backend=_as_mapping(doc.get("backend", {}), "backend"),
        similarity=_as_mapping(doc.get("similarity", "hashed"), "similarity"),
        pipeline=pipeline,
        beam=beam,
        trace_log=path(doc["trace_log"]) if doc.get("trace_log") else None,
        base_dir=base_dir,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text) if path.suffix.lower() in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, path.parent)
