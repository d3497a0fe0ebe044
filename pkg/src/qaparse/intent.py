"""Top-level intent prediction.

Four modes are available: ``unconstrained`` (free generation, then the most
similar naturalized label), ``constrained`` (minimum-NLL label continuation),
``calibrated`` (constrained, with content-free bias correction) and
``utterance_similarity`` (no backend; utterance against labels).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .backend import GenerationBackend, SimilarityProvider
from .schema import Schema, naturalize_label

INTENT_MODES = ("unconstrained", "constrained", "calibrated", "utterance_similarity")
DEFAULT_CONTENT_FREE = ("N/A", "", "[MASK]")
DEFAULT_MAX_INTENT_TOKENS = 16

_QA_HEADER = "Answer the following question depending on the context.\n"


@dataclass
class IntentPrediction:
    intent: str
    score: float
    ranked: list[tuple[str, float]]
    generated_text: str | None = None
    mode: str = "unconstrained"

    def top(self, k: int) -> list[tuple[str, float]]:
        return self.ranked[:k]

    def to_dict(self) -> dict:
        return {
            "intent": self.intent,
            "score": self.score,
            "ranked": [[label, score] for label, score in self.ranked],
            "generated_text": self.generated_text,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntentPrediction":
        return cls(
            d["intent"], d["score"], [(l, s) for l, s in d["ranked"]], d.get("generated_text"), d.get("mode", "")
        )


def _render_intent_prompt(utterance: str) -> str:
    return f"{_QA_HEADER}context: A user said, {utterance}.\nquestion: What did the user intend to do?\nanswer:"


def build_intent_prompt(utterance: str) -> str:
    if not utterance:
        raise ValueError("utterance must be non-empty")
    return _render_intent_prompt(utterance)


def _label_texts(schema: Schema, raw_labels: bool) -> list[str]:
    return list(schema.intents) if raw_labels else [naturalize_label(i) for i in schema.intents]


def _rank(schema: Schema, scores: Sequence[float], mode: str, generated: str | None = None) -> IntentPrediction:
    # stable sort keeps schema order among exact ties
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    ranked = [(schema.intents[i], float(scores[i])) for i in order]
    return IntentPrediction(ranked[0][0], ranked[0][1], ranked, generated, mode)


def predict_intent_unconstrained(
    utterance: str,
    schema: Schema,
    backend: GenerationBackend,
    simprovider: SimilarityProvider,
    max_tokens: int = DEFAULT_MAX_INTENT_TOKENS,
    raw_labels: bool = False,
) -> IntentPrediction:
    gen = backend.generate(build_intent_prompt(utterance), max_tokens)
    description = gen.text.strip()
    if not description:
        scores = [0.0] * schema.n_intents
    else:
        scores = simprovider.similarities(description, _label_texts(schema, raw_labels))
    return _rank(schema, scores, "unconstrained", gen.text)


def _candidate_nlls(prompt: str, schema: Schema, backend: GenerationBackend, raw_labels: bool) -> np.ndarray:
    scored = backend.score_candidates(prompt, _label_texts(schema, raw_labels))
    return np.array([g.nll for g in scored], dtype=float)


def predict_intent_constrained(
    utterance: str, schema: Schema, backend: GenerationBackend, raw_labels: bool = False
) -> IntentPrediction:
    nll = _candidate_nlls(build_intent_prompt(utterance), schema, backend, raw_labels)
    return _rank(schema, list(-nll), "constrained")


def _check_probs(p: np.ndarray, name: str) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if np.any(p <= 0):
        raise ValueError(f"{name} has a zero or negative entry")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} does not sum to 1")


def _calibrate_log(logp: np.ndarray, logp_cf: np.ndarray) -> np.ndarray:
    z = logp - logp_cf
    return z - logsumexp(z)


def calibrate(probabilities: Sequence[float], content_free: Sequence[float]) -> np.ndarray:
    """Divide by the content-free prediction and renormalize (diagonal ``W``, zero bias)."""
    p = np.asarray(probabilities, dtype=float)
    p_cf = np.asarray(content_free, dtype=float)
    if p.shape != p_cf.shape:
        raise ValueError("probability vectors differ in length")
    _check_probs(p, "probabilities")
    _check_probs(p_cf, "content_free")
    return np.exp(_calibrate_log(np.log(p), np.log(p_cf)))


def predict_intent_calibrated(
    utterance: str,
    schema: Schema,
    backend: GenerationBackend,
    content_free_inputs: Sequence[str] = DEFAULT_CONTENT_FREE,
    raw_labels: bool = False,
) -> IntentPrediction:
    if not content_free_inputs:
        raise ValueError("at least one content-free input is required")
    nll = _candidate_nlls(build_intent_prompt(utterance), schema, backend, raw_labels)
    logp = -nll - logsumexp(-nll)
    cf_logps = []
    for cf in content_free_inputs:
        cf_nll = _candidate_nlls(_render_intent_prompt(cf), schema, backend, raw_labels)
        cf_logps.append(-cf_nll - logsumexp(-cf_nll))
    # log of the mean content-free distribution
    logp_cf = logsumexp(np.stack(cf_logps), axis=0) - np.log(len(cf_logps))
    return _rank(schema, list(_calibrate_log(logp, logp_cf)), "calibrated")


def predict_intent_by_utterance_similarity(
    utterance: str, schema: Schema, simprovider: SimilarityProvider, raw_labels: bool = False
) -> IntentPrediction:
    scores = simprovider.similarities(utterance, _label_texts(schema, raw_labels))
    return _rank(schema, scores, "utterance_similarity")


def predict_intent(
    utterance: str,
    schema: Schema,
    backend: GenerationBackend | None,
    simprovider: SimilarityProvider | None,
    mode: str = "unconstrained",
    max_tokens: int = DEFAULT_MAX_INTENT_TOKENS,
    content_free_inputs: Sequence[str] = DEFAULT_CONTENT_FREE,
    raw_labels: bool = False,
) -> IntentPrediction:
    if mode == "unconstrained":
        return predict_intent_unconstrained(utterance, schema, backend, simprovider, max_tokens, raw_labels)
    if mode == "constrained":
        return predict_intent_constrained(utterance, schema, backend, raw_labels)
    if mode == "calibrated":
        return predict_intent_calibrated(utterance, schema, backend, content_free_inputs, raw_labels)
    if mode == "utterance_similarity":
        return predict_intent_by_utterance_similarity(utterance, schema, simprovider, raw_labels)
    raise ValueError(f"unknown intent mode {mode!r}; expected one of {INTENT_MODES}")


def log_softmax(scores: Sequence[float]) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    return s - logsumexp(s)
