"""Zero-shot task-oriented semantic parsing through question answering."""
from .backend import (
    BackendError,
    GenerationBackend,
    HashedBagOfWords,
    HTTPBackend,
    ReplayBackend,
    ScoredGeneration,
    ScriptedBackend,
    SentenceTransformerSimilarity,
    SimilarityProvider,
    TraceLog,
    TracingBackend,
)
from .estimators import IntentClassifier, UnanswerableSynthesizer, ZeroShotParser
from .mr import IntentFrame, SlotFilling, exact_match, parse_mr, serialize_mr
from .pipeline import BeamConfig, ParseTrace, PipelineConfig, aggregate_score, parse_beam, parse_corpus, parse_greedy
from .schema import Schema, SchemaError, load_schema, naturalize_label
from .slots import AbstainConfig, SlotAnswer, extract_slot

__version__ = "0.1.0"

__all__ = [
    "AbstainConfig",
    "BackendError",
    "BeamConfig",
    "GenerationBackend",
    "HTTPBackend",
    "HashedBagOfWords",
    "IntentClassifier",
    "IntentFrame",
    "ParseTrace",
    "PipelineConfig",
    "ReplayBackend",
    "Schema",
    "SchemaError",
    "ScoredGeneration",
    "ScriptedBackend",
    "SentenceTransformerSimilarity",
    "SimilarityProvider",
    "SlotAnswer",
    "SlotFilling",
    "TraceLog",
    "TracingBackend",
    "UnanswerableSynthesizer",
    "ZeroShotParser",
    "aggregate_score",
    "exact_match",
    "extract_slot",
    "load_schema",
    "naturalize_label",
    "parse_beam",
    "parse_corpus",
    "parse_greedy",
    "parse_mr",
    "serialize_mr",
]
