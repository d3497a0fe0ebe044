"""Slot filling as extractive QA with abstention."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from scipy.special import logsumexp

from .backend import GenerationBackend
from .schema import Schema

DEFAULT_ABSTAIN_PHRASES = (
    "unanswerable",
    "no answer",
    "not answerable",
    "it cannot be answered",
    "not mentioned",
)
DEFAULT_MAX_SPAN_TOKENS = 10

_QA_HEADER = "Answer the following question depending on the context.\n"


@dataclass(frozen=True)
class AbstainConfig:
    mode: str = "phrase_set"
    phrases: tuple[str, ...] = DEFAULT_ABSTAIN_PHRASES
    threshold: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "phrases", tuple(self.phrases))
        if self.mode == "phrase_set":
            if not self.phrases:
                raise ValueError("phrase_set mode needs at least one abstain phrase")
        elif self.mode == "nll_threshold":
            if self.threshold is None or not math.isfinite(self.threshold):
                raise ValueError("nll_threshold mode needs a finite threshold")
        else:
            raise ValueError(f"unknown abstain mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "phrases": list(self.phrases), "threshold": self.threshold}


@dataclass
class SlotAnswer:
    """Decision for one slot question.

    ``nll`` belongs to the chosen candidate (an abstain phrase when abstaining
    in phrase-set mode). ``span_value``/``span_nll`` always hold the best span
    so thresholds can be re-applied offline.
    """

    slot: str
    value: str | None
    nll: float
    abstained: bool
    span_value: str | None = None
    span_nll: float | None = None

    def __post_init__(self):
        if self.abstained != (self.value is None):
            raise ValueError("a slot answer abstains exactly when its value is None")

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "value": self.value,
            "nll": self.nll,
            "abstained": self.abstained,
            "span_value": self.span_value,
            "span_nll": self.span_nll,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlotAnswer":
        return cls(d["slot"], d["value"], d["nll"], d["abstained"], d.get("span_value"), d.get("span_nll"))


@dataclass
class SlotScores:
    """All scored candidates for one slot question, spans in (start, length) order."""

    slot: str
    spans: list[tuple[str, float]]
    phrases: list[tuple[str, float]] = field(default_factory=list)

    def best_span(self) -> tuple[str, float] | None:
        best = None
        for text, nll in self.spans:
            if best is None or nll < best[1]:
                best = (text, nll)
        return best

    def best_phrase(self) -> tuple[str, float] | None:
        best = None
        for text, nll in self.phrases:
            if best is None or nll < best[1]:
                best = (text, nll)
        return best


def build_slot_prompt(context: str, question: str) -> str:
    if not context or not question:
        raise ValueError("context and question must be non-empty")
    return f"{_QA_HEADER}context: A user said, {context}.\nquestion: {question}\nanswer:"


def enumerate_spans(context: str, max_span_tokens: int = DEFAULT_MAX_SPAN_TOKENS) -> list[str]:
    """Distinct token spans in (start, length) order; this order settles NLL ties."""
    tokens = context.split()
    seen: dict[str, None] = {}
    for start in range(len(tokens)):
        for length in range(1, min(max_span_tokens, len(tokens) - start) + 1):
            seen.setdefault(" ".join(tokens[start : start + length]))
    return list(seen)


def enumerate_candidates(
    context: str, max_span_tokens: int = DEFAULT_MAX_SPAN_TOKENS, phrases: Sequence[str] = ()
) -> list[str]:
    """Distinct spans, shorter spans first and earlier starts first within a length, then ``phrases``."""
    if not context:
        raise ValueError("context must be non-empty")
    if max_span_tokens < 1:
        raise ValueError("max_span_tokens must be positive")
    spans = sorted(enumerate_spans(context, max_span_tokens), key=lambda s: len(s.split()))
    return spans + list(phrases)


def score_slot(
    context: str,
    slot: str,
    schema: Schema,
    backend: GenerationBackend,
    cfg: AbstainConfig,
    max_span_tokens: int = DEFAULT_MAX_SPAN_TOKENS,
) -> SlotScores:
    prompt = build_slot_prompt(context, schema.question(slot))
    spans = enumerate_spans(context, max_span_tokens)
    phrases = [p for p in cfg.phrases if p not in spans] if cfg.mode == "phrase_set" else []
    if not spans and not phrases:
        return SlotScores(slot, [], [])
    scored = backend.score_candidates(prompt, spans + phrases)
    nlls = [g.nll for g in scored]
    return SlotScores(slot, list(zip(spans, nlls[: len(spans)])), list(zip(phrases, nlls[len(spans) :])))


def decide(scores: SlotScores, cfg: AbstainConfig) -> SlotAnswer:
    """Pick a value or abstain. Ties favour spans (earliest start, then shortest) over phrases."""
    best = scores.best_span()
    span_value, span_nll = best if best else (None, None)
    if cfg.mode == "phrase_set":
        phrase = scores.best_phrase()
        if best is None:
            return SlotAnswer(scores.slot, None, phrase[1] if phrase else math.inf, True, None, None)
        if phrase is not None and phrase[1] < best[1]:
            return SlotAnswer(scores.slot, None, phrase[1], True, span_value, span_nll)
        return SlotAnswer(scores.slot, span_value, span_nll, False, span_value, span_nll)
    if best is None:
        return SlotAnswer(scores.slot, None, math.inf, True, None, None)
    if span_nll > cfg.threshold:
        return SlotAnswer(scores.slot, None, span_nll, True, span_value, span_nll)
    return SlotAnswer(scores.slot, span_value, span_nll, False, span_value, span_nll)


def ranked_options(scores: SlotScores, cfg: AbstainConfig, k: int) -> list[tuple[str | None, float]]:
    """Top-``k`` (value, nll) options in decision order; ``None`` is the abstain option.

    The abstain option sits at the best phrase NLL (phrase-set mode) or at the
    threshold (nll-threshold mode), so ``ranked_options(...)[0]`` always agrees
    with :func:`decide`.
    """
    if cfg.mode == "phrase_set":
        phrase = scores.best_phrase()
        abstain_nll = phrase[1] if phrase else math.inf
    else:
        abstain_nll = cfg.threshold
    # (nll, tier, position): spans precede the abstain option on ties
    entries = [(nll, 0, i, text) for i, (text, nll) in enumerate(scores.spans)]
    entries.append((abstain_nll, 1, 0, None))
    entries.sort(key=lambda e: e[:3])
    return [(text, nll) for nll, _, _, text in entries[:k]]


def option_log_normalizer(scores: SlotScores, cfg: AbstainConfig) -> float:
    """``log sum exp(-nll)`` over every span plus the single abstain option of :func:`ranked_options`."""
    if cfg.mode == "phrase_set":
        phrase = scores.best_phrase()
        abstain_nll = phrase[1] if phrase else math.inf
    else:
        abstain_nll = cfg.threshold
    neg = [-nll for _, nll in scores.spans] + [-abstain_nll]
    neg = [x for x in neg if math.isfinite(x)]
    return float(logsumexp(neg)) if neg else 0.0


def extract_slot(
    context: str,
    slot: str,
    schema: Schema,
    backend: GenerationBackend,
    cfg: AbstainConfig,
    max_span_tokens: int = DEFAULT_MAX_SPAN_TOKENS,
) -> SlotAnswer:
    return decide(score_slot(context, slot, schema, backend, cfg, max_span_tokens), cfg)


def abstain_rate(answers: Sequence[SlotAnswer], gold_unanswerable: Sequence[bool]) -> dict[str, float | None]:
    """Fraction abstained within unanswerable and answerable questions; ``None`` when a class is absent."""
    if len(answers) != len(gold_unanswerable):
        raise ValueError("answers and gold_unanswerable differ in length")
    counts = {True: [0, 0], False: [0, 0]}
    for ans, unans in zip(answers, gold_unanswerable):
        c = counts[bool(unans)]
        c[0] += ans.abstained
        c[1] += 1
    rate = lambda c: c[0] / c[1] if c[1] else None
    return {"on_unanswerable": rate(counts[True]), "on_answerable": rate(counts[False])}
