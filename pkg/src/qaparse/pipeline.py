"""Top-down parsing: intent first, then slot questions, then nested intents.

:func:`parse_greedy` takes the best answer at every step. :func:`parse_beam`
keeps the top-``k`` intents and top-``k`` options per slot and picks the frame
with the highest aggregated log-likelihood.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .backend import GenerationBackend, SimilarityProvider
from .intent import (
    DEFAULT_CONTENT_FREE,
    DEFAULT_MAX_INTENT_TOKENS,
    IntentPrediction,
    log_softmax,
    predict_intent,
)
from .mr import IntentFrame, SlotFilling, parse_mr, serialize_mr
from .schema import Schema
from .slots import (
    DEFAULT_MAX_SPAN_TOKENS,
    AbstainConfig,
    SlotAnswer,
    decide,
    option_log_normalizer,
    ranked_options,
    score_slot,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_COMBINATIONS = 10_000
BEAM_SCORINGS = ("normalized", "nll", "zero")


class PipelineError(RuntimeError):
    """A backend failure mid-parse; ``trace`` holds whatever was computed so far."""

    def __init__(self, message: str, trace: "ParseTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PipelineConfig:
    intent_mode: str = "unconstrained"
    abstain: AbstainConfig = field(default_factory=AbstainConfig)
    max_span_tokens: int = DEFAULT_MAX_SPAN_TOKENS
    max_intent_tokens: int = DEFAULT_MAX_INTENT_TOKENS
    content_free_inputs: tuple[str, ...] = DEFAULT_CONTENT_FREE
    raw_labels: bool = False


@dataclass(frozen=True)
class BeamConfig:
    k: int = 1
    alpha: float = 0.5
    max_combinations: int = DEFAULT_MAX_COMBINATIONS
    # how a slot option becomes a log-probability:
    # "normalized": -NLL minus log-sum-exp over the slot's spans and its abstain option
    # "nll": raw -NLL, abstaining scores -NLL of its abstain option
    # "zero": raw -NLL, abstaining adds nothing
    abstain_score: str = "normalized"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("beam size k must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.abstain_score not in BEAM_SCORINGS:
            raise ValueError(f"abstain_score must be one of {BEAM_SCORINGS}")


@dataclass
class ParseTrace:
    utterance: str
    intent_prediction: IntentPrediction | None = None
    slot_answers: dict[str, SlotAnswer] = field(default_factory=dict)
    nested: dict[str, tuple[str, dict[str, SlotAnswer]]] = field(default_factory=dict)
    final: IntentFrame | None = None
    score: float | None = None
    error: str | None = None
    beam_fallback: bool = False

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def mr(self) -> str | None:
        return serialize_mr(self.final) if self.final is not None else None

    def to_dict(self) -> dict:
        return {
            "utterance": self.utterance,
            "intent_prediction": self.intent_prediction.to_dict() if self.intent_prediction else None,
            "slot_answers": {s: a.to_dict() for s, a in self.slot_answers.items()},
            "nested": {
                s: {"intent": intent, "slot_answers": {n: a.to_dict() for n, a in answers.items()}}
                for s, (intent, answers) in self.nested.items()
            },
            "final": self.mr,
            "score": self.score,
            "error": self.error,
            "beam_fallback": self.beam_fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParseTrace":
        ip = d.get("intent_prediction")
        return cls(
            utterance=d["utterance"],
            intent_prediction=IntentPrediction.from_dict(ip) if ip else None,
            slot_answers={s: SlotAnswer.from_dict(a) for s, a in d.get("slot_answers", {}).items()},
            nested={
                s: (n["intent"], {k: SlotAnswer.from_dict(a) for k, a in n["slot_answers"].items()})
                for s, n in d.get("nested", {}).items()
            },
            final=parse_mr(d["final"]) if d.get("final") else None,
            score=d.get("score"),
            error=d.get("error"),
            beam_fallback=d.get("beam_fallback", False),
        )


def aggregate_score(intent_logp: float, slot_logps: Sequence[float], alpha: float) -> float:
    """``alpha * log p(intent) + (1 - alpha) * sum(log p(slot value))``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if intent_logp > 1e-9 or any(lp > 1e-9 for lp in slot_logps):
        raise ValueError("log-probabilities must be <= 0")
    return alpha * intent_logp + (1.0 - alpha) * math.fsum(slot_logps)


def _span_position(utterance_tokens: list[str], value: str) -> int:
    target = value.split()
    n = len(target)
    for i in range(len(utterance_tokens) - n + 1):
        if utterance_tokens[i : i + n] == target:
            return i
    return len(utterance_tokens)


def _assemble(intent: str, slot_order: Sequence[str], values: dict, raw_text: dict, context: str) -> IntentFrame:
    """Build a frame; fillings follow the utterance position of each slot's text, then prompt order."""
    tokens = context.split()
    present = [s for s in slot_order if s in values]
    present.sort(key=lambda s: _span_position(tokens, raw_text[s]))
    return IntentFrame(intent, tuple(SlotFilling(s, values[s]) for s in present))


def _expand_nested_scored(
    value: str, slot: str, schema: Schema, backend: GenerationBackend, cfg: PipelineConfig
) -> tuple[str, dict[str, SlotAnswer], dict[str, float]] | None:
    best = None
    for rank, nested_intent in enumerate(schema.nested_candidates(slot)):
        answers, logz = {}, {}
        for nested_slot in schema.slots_of(nested_intent):
            scores = score_slot(value, nested_slot, schema, backend, cfg.abstain, cfg.max_span_tokens)
            answers[nested_slot] = decide(scores, cfg.abstain)
            logz[nested_slot] = option_log_normalizer(scores, cfg.abstain)
        answered = [a for a in answers.values() if not a.abstained]
        if not answered:
            continue
        key = (-len(answered), math.fsum(a.nll for a in answered), rank)
        if best is None or key < best[0]:
            best = (key, nested_intent, answers, logz)
    if best is None:
        return None
    return best[1], best[2], best[3]


def _expand_nested(
    value: str, slot: str, schema: Schema, backend: GenerationBackend, cfg: PipelineConfig
) -> tuple[str, dict[str, SlotAnswer]] | None:
    """Ask the slots of every candidate nested intent against ``value`` and pick one to attach.

    The winner has the most answered slots, then the lowest summed NLL, then
    comes first in the schema's nested-intent list.
    """
    found = _expand_nested_scored(value, slot, schema, backend, cfg)
    return None if found is None else found[:2]


def _nested_frame(intent: str, answers: dict[str, SlotAnswer], schema: Schema, value: str) -> IntentFrame:
    vals = {s: a.value for s, a in answers.items() if not a.abstained}
    return _assemble(intent, schema.slots_of(intent), vals, vals, value)


def parse_greedy(
    utterance: str,
    schema: Schema,
    backend: GenerationBackend,
    simprovider: SimilarityProvider | None,
    abstain_cfg: AbstainConfig | None = None,
    config: PipelineConfig | None = None,
) -> ParseTrace:
    cfg = config or PipelineConfig()
    if abstain_cfg is not None:
        cfg = PipelineConfig(**{**cfg.__dict__, "abstain": abstain_cfg})
    trace = ParseTrace(utterance)
    try:
        pred = _predict_intent(utterance, schema, backend, simprovider, cfg)
        trace.intent_prediction = pred
        values, raw = {}, {}
        for slot in schema.slots_of(pred.intent):
            scores = score_slot(utterance, slot, schema, backend, cfg.abstain, cfg.max_span_tokens)
            ans = decide(scores, cfg.abstain)
            trace.slot_answers[slot] = ans
            if ans.abstained:
                continue
            values[slot] = raw[slot] = ans.value
            nested = _expand_nested(ans.value, slot, schema, backend, cfg) if schema.nested_candidates(slot) else None
            if nested is not None:
                trace.nested[slot] = nested
                values[slot] = _nested_frame(nested[0], nested[1], schema, ans.value)
    except Exception as exc:
        trace.error = f"{type(exc).__name__}: {exc}"
        raise PipelineError(str(exc), trace) from exc
    trace.final = _assemble(pred.intent, schema.slots_of(pred.intent), values, raw, utterance)
    return trace


def _predict_intent(utterance, schema, backend, simprovider, cfg: PipelineConfig) -> IntentPrediction:
    return predict_intent(
        utterance,
        schema,
        backend,
        simprovider,
        mode=cfg.intent_mode,
        max_tokens=cfg.max_intent_tokens,
        content_free_inputs=cfg.content_free_inputs,
        raw_labels=cfg.raw_labels,
    )


@dataclass
class SlotOption:
    slot: str
    value: str | None
    nll: float
    logp: float
    frame_value: object = None  # str, IntentFrame or None
    nested: tuple[str, dict[str, SlotAnswer]] | None = None
    span: tuple[str | None, float | None] = (None, None)


@dataclass
class BeamCandidate:
    """One fully specified frame with the pieces of its aggregated score."""

    intent: str
    intent_logp: float
    options: tuple[SlotOption, ...]
    frame: IntentFrame

    @property
    def slot_logps(self) -> list[float]:
        return [o.logp for o in self.options]

    def score(self, alpha: float) -> float:
        return aggregate_score(self.intent_logp, self.slot_logps, alpha)


@dataclass
class BeamExpansion:
    prediction: IntentPrediction
    candidates: list[BeamCandidate]
    fallback: bool = False


def _option_logp(value: str | None, nll: float, logz: float, beam: BeamConfig) -> float:
    if beam.abstain_score == "normalized":
        return min(0.0, -nll - logz) if math.isfinite(nll) else -math.inf
    if value is None and (beam.abstain_score == "zero" or not math.isfinite(nll)):
        return 0.0
    return -nll


def _answer_logp(ans: SlotAnswer, logz: float, cfg: PipelineConfig, beam: BeamConfig) -> float:
    if not ans.abstained:
        return _option_logp(ans.value, ans.nll, logz, beam)
    nll = ans.nll if cfg.abstain.mode == "phrase_set" else cfg.abstain.threshold
    return _option_logp(None, nll, logz, beam)


def expand_beam(
    utterance: str,
    schema: Schema,
    backend: GenerationBackend,
    simprovider: SimilarityProvider | None,
    config: PipelineConfig,
    beam: BeamConfig,
) -> BeamExpansion:
    """Enumerate every (intent, slot option...) combination the beam keeps.

    Candidates come out in intent-rank order, then option order, so the first
    maximum under any ``alpha`` is the greedy choice when ``k == 1``.
    """
    cfg = config
    pred = _predict_intent(utterance, schema, backend, simprovider, cfg)
    intent_logps = log_softmax([s for _, s in pred.ranked])

    per_intent = []
    for (intent, _), intent_logp in zip(pred.ranked[: beam.k], intent_logps[: beam.k]):
        slot_opts = []
        for slot in schema.slots_of(intent):
            scores = score_slot(utterance, slot, schema, backend, cfg.abstain, cfg.max_span_tokens)
            best = scores.best_span() or (None, None)
            logz = option_log_normalizer(scores, cfg.abstain)
            opts = []
            for value, nll in ranked_options(scores, cfg.abstain, beam.k):
                if value is None:
                    opts.append(SlotOption(slot, None, nll, _option_logp(None, nll, logz, beam), span=best))
                    continue
                nested = None
                if schema.nested_candidates(slot):
                    nested = _expand_nested_scored(value, slot, schema, backend, cfg)
                if nested is None:
                    opts.append(SlotOption(slot, value, nll, _option_logp(value, nll, logz, beam), value, span=best))
                else:
                    # a nested frame stands in for the text; its slots carry the score
                    n_intent, n_answers, n_logz = nested
                    logp = math.fsum(_answer_logp(a, n_logz[s], cfg, beam) for s, a in n_answers.items())
                    frame = _nested_frame(n_intent, n_answers, schema, value)
                    opts.append(SlotOption(slot, value, nll, logp, frame, (n_intent, n_answers), span=best))
            slot_opts.append(opts)
        per_intent.append((intent, float(intent_logp), slot_opts))

    total = sum(math.prod(len(o) for o in opts) for _, _, opts in per_intent)
    fallback = total > beam.max_combinations
    if fallback:
        log.info("beam: %d combinations exceed cap %d; per-slot greedy", total, beam.max_combinations)

    candidates = []
    for intent, intent_logp, slot_opts in per_intent:
        combos = [tuple(o[0] for o in slot_opts)] if fallback else itertools.product(*slot_opts)
        for combo in combos:
            values = {o.slot: o.frame_value for o in combo if o.value is not None}
            raw = {o.slot: o.value for o in combo if o.value is not None}
            frame = _assemble(intent, schema.slots_of(intent), values, raw, utterance)
            candidates.append(BeamCandidate(intent, intent_logp, tuple(combo), frame))
    return BeamExpansion(pred, candidates, fallback)


def select_candidate(expansion: BeamExpansion, alpha: float) -> BeamCandidate:
    best, best_score = None, -math.inf
    for cand in expansion.candidates:
        s = cand.score(alpha)
        if best is None or s > best_score:
            best, best_score = cand, s
    return best


def _beam_trace(utterance: str, expansion: BeamExpansion, alpha: float) -> ParseTrace:
    cand = select_candidate(expansion, alpha)
    trace = ParseTrace(utterance, expansion.prediction, beam_fallback=expansion.fallback)
    for o in cand.options:
        span_value, span_nll = o.span
        trace.slot_answers[o.slot] = SlotAnswer(o.slot, o.value, o.nll, o.value is None, span_value, span_nll)
        if o.nested is not None:
            trace.nested[o.slot] = o.nested
    trace.final = cand.frame
    trace.score = cand.score(alpha)
    return trace


def parse_beam(
    utterance: str,
    schema: Schema,
    backend: GenerationBackend,
    simprovider: SimilarityProvider | None,
    abstain_cfg: AbstainConfig | None = None,
    beam: BeamConfig | None = None,
    config: PipelineConfig | None = None,
) -> ParseTrace:
    cfg = config or PipelineConfig()
    if abstain_cfg is not None:
        cfg = PipelineConfig(**{**cfg.__dict__, "abstain": abstain_cfg})
    beam = beam or BeamConfig()
    try:
        expansion = expand_beam(utterance, schema, backend, simprovider, cfg, beam)
    except Exception as exc:
        trace = ParseTrace(utterance, error=f"{type(exc).__name__}: {exc}")
        raise PipelineError(str(exc), trace) from exc
    return _beam_trace(utterance, expansion, beam.alpha)


def parse_corpus(
    records: Sequence[str],
    schema: Schema,
    backend: GenerationBackend,
    simprovider: SimilarityProvider | None,
    config: PipelineConfig | None = None,
    beam: BeamConfig | None = None,
    n_jobs: int = 1,
) -> list[ParseTrace]:
    """Parse every utterance; failures become error-marked traces, input order is kept."""
    cfg = config or PipelineConfig()

    def one(utterance: str) -> ParseTrace:
        try:
            if beam is None:
                return parse_greedy(utterance, schema, backend, simprovider, config=cfg)
            return parse_beam(utterance, schema, backend, simprovider, beam=beam, config=cfg)
        except PipelineError as exc:
            log.warning("parse failed for %r: %s", utterance, exc)
            return exc.trace

    if n_jobs <= 1:
        return [one(u) for u in records]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(one, records))
