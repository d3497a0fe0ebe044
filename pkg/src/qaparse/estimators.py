"""Scikit-learn style estimators over the parsing pipeline.

The parser is zero-shot: ``fit`` only validates its configuration, except
that with ``beam_k > 1`` and labelled data it picks ``alpha`` from
``alpha_grid`` by exact-match accuracy on that (held-out) data.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frames, check_samples, check_utterances
from .backend import HashedBagOfWords
from .datagen import STRATEGIES, synthesize
from .intent import DEFAULT_CONTENT_FREE, DEFAULT_MAX_INTENT_TOKENS, log_softmax, predict_intent
from .metrics import exact_match_accuracy
from .mr import serialize_mr
from .pipeline import (
    DEFAULT_MAX_COMBINATIONS,
    BeamConfig,
    PipelineConfig,
    expand_beam,
    parse_corpus,
    select_candidate,
)
from .slots import DEFAULT_ABSTAIN_PHRASES, DEFAULT_MAX_SPAN_TOKENS, AbstainConfig

DEFAULT_ALPHA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 2))


class ZeroShotParser(BaseEstimator):
    def __init__(
        self,
        schema=None,
        backend=None,
        similarity=None,
        intent_mode="unconstrained",
        abstain_mode="phrase_set",
        abstain_phrases=DEFAULT_ABSTAIN_PHRASES,
        abstain_threshold=None,
        max_span_tokens=DEFAULT_MAX_SPAN_TOKENS,
        max_intent_tokens=DEFAULT_MAX_INTENT_TOKENS,
        content_free_inputs=DEFAULT_CONTENT_FREE,
        beam_k=1,
        alpha=0.5,
        alpha_grid=None,
        max_combinations=DEFAULT_MAX_COMBINATIONS,
        abstain_score="normalized",
        n_jobs=1,
    ):
        self.schema = schema
        self.backend = backend
        self.similarity = similarity
        self.intent_mode = intent_mode
        self.abstain_mode = abstain_mode
        self.abstain_phrases = abstain_phrases
        self.abstain_threshold = abstain_threshold
        self.max_span_tokens = max_span_tokens
        self.max_intent_tokens = max_intent_tokens
        self.content_free_inputs = content_free_inputs
        self.beam_k = beam_k
        self.alpha = alpha
        self.alpha_grid = alpha_grid
        self.max_combinations = max_combinations
        self.abstain_score = abstain_score
        self.n_jobs = n_jobs

    def _configs(self, alpha: float) -> tuple[PipelineConfig, BeamConfig]:
        if self.schema is None or self.backend is None:
            raise ValueError("schema and backend are required")
        abstain = AbstainConfig(self.abstain_mode, tuple(self.abstain_phrases), self.abstain_threshold)
        cfg = PipelineConfig(
            intent_mode=self.intent_mode,
            abstain=abstain,
            max_span_tokens=self.max_span_tokens,
            max_intent_tokens=self.max_intent_tokens,
            content_free_inputs=tuple(self.content_free_inputs),
        )
        beam = BeamConfig(self.beam_k, alpha, self.max_combinations, self.abstain_score)
        return cfg, beam

    def fit(self, X=None, y=None):
        cfg, beam = self._configs(self.alpha)
        self.similarity_ = self.similarity if self.similarity is not None else HashedBagOfWords()
        self.alpha_ = self.alpha
        if X is not None and y is not None and self.beam_k > 1:
            utterances = check_utterances(X)
            gold = check_frames(y, len(utterances))
            grid = self.alpha_grid if self.alpha_grid is not None else DEFAULT_ALPHA_GRID
            expansions = []
            for u in utterances:
                try:
                    expansions.append(expand_beam(u, self.schema, self.backend, self.similarity_, cfg, beam))
                except Exception:
                    expansions.append(None)
            best_acc = -1.0
            for a in grid:
                preds = [select_candidate(e, float(a)).frame if e else None for e in expansions]
                acc = exact_match_accuracy(preds, gold)
                if acc > best_acc:
                    best_acc, self.alpha_ = acc, float(a)
            self.validation_accuracy_ = best_acc
        self.pipeline_config_, self.beam_config_ = self._configs(self.alpha_)
        return self

    def parse(self, X) -> list:
        """Full :class:`~qaparse.pipeline.ParseTrace` per utterance."""
        check_is_fitted(self, "pipeline_config_")
        utterances = check_utterances(X)
        beam = self.beam_config_ if self.beam_k > 1 else None
        return parse_corpus(
            utterances, self.schema, self.backend, self.similarity_, self.pipeline_config_, beam, self.n_jobs
        )

    def predict(self, X) -> list:
        return [t.final for t in self.parse(X)]

    def predict_mr(self, X) -> list[str | None]:
        return [None if f is None else serialize_mr(f) for f in self.predict(X)]

    def score(self, X, y) -> float:
        utterances = check_utterances(X)
        gold = check_frames(y, len(utterances))
        return exact_match_accuracy(self.predict(utterances), gold)


class IntentClassifier(ClassifierMixin, BaseEstimator):
    """Top-level intent only; ``mode`` is any of the intent prediction modes."""

    def __init__(
        self,
        schema=None,
        backend=None,
        similarity=None,
        mode="unconstrained",
        max_tokens=DEFAULT_MAX_INTENT_TOKENS,
        content_free_inputs=DEFAULT_CONTENT_FREE,
        raw_labels=False,
    ):
        self.schema = schema
        self.backend = backend
        self.similarity = similarity
        self.mode = mode
        self.max_tokens = max_tokens
        self.content_free_inputs = content_free_inputs
        self.raw_labels = raw_labels

    def fit(self, X=None, y=None):
        if self.schema is None:
            raise ValueError("schema is required")
        if self.mode != "utterance_similarity" and self.backend is None:
            raise ValueError(f"mode {self.mode!r} needs a backend")
        self.similarity_ = self.similarity if self.similarity is not None else HashedBagOfWords()
        self.classes_ = np.array(self.schema.intents)
        return self

    def _predictions(self, X):
        check_is_fitted(self, "classes_")
        return [
            predict_intent(
                u,
                self.schema,
                self.backend,
                self.similarity_,
                mode=self.mode,
                max_tokens=self.max_tokens,
                content_free_inputs=tuple(self.content_free_inputs),
                raw_labels=self.raw_labels,
            )
            for u in check_utterances(X)
        ]

    def predict(self, X) -> np.ndarray:
        return np.array([p.intent for p in self._predictions(X)])

    def predict_proba(self, X) -> np.ndarray:
        """Softmax over the ranking scores, columns in ``classes_`` order."""
        index = {c: i for i, c in enumerate(self.classes_)}
        rows = []
        for p in self._predictions(X):
            row = np.zeros(len(index))
            probs = np.exp(log_softmax([s for _, s in p.ranked]))
            for (label, _), pr in zip(p.ranked, probs):
                row[index[label]] = pr
            rows.append(row)
        return np.vstack(rows) if rows else np.zeros((0, len(index)))


class UnanswerableSynthesizer(TransformerMixin, BaseEstimator):
    """Augment QA samples with synthetic unanswerables; ``fit`` sets the swap donor pool."""

    def __init__(self, strategies=STRATEGIES, target_ratio=0.5, rng_seed=0, swap_guard=True):
        self.strategies = strategies
        self.target_ratio = target_ratio
        self.rng_seed = rng_seed
        self.swap_guard = swap_guard

    def fit(self, X, y=None):
        samples = check_samples(X)
        self.pool_ = [s for s in samples if s.answerable]
        return self

    def transform(self, X):
        check_is_fitted(self, "pool_")
        out, self.report_ = synthesize(
            check_samples(X),
            tuple(self.strategies),
            self.target_ratio,
            self.rng_seed,
            self.swap_guard,
            pool=self.pool_,
        )
        return out
