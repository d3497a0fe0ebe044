"""Dataset ingestion and evaluation metrics."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

from .backend import GenerationBackend
from .mr import (
    IntentFrame,
    MRSchemaError,
    MRSyntaxError,
    _canonical,
    check_frame,
    exact_match,
    normalize_text,
    parse_mr,
    serialize_mr,
)
from .schema import Schema
from .slots import DEFAULT_MAX_SPAN_TOKENS, AbstainConfig, SlotAnswer, abstain_rate, score_slot

SWEEP_HEADER = ("tau", "f1_all", "f1_answerable", "f1_unanswerable", "abstain_rate")

# MTOP release layout: id, intent, slots, utterance, domain, locale, decoupled form, tokens
MTOP_UTTERANCE_COL = 3
MTOP_MR_COL = 6
MTOP_DOMAIN_COL = 4


@dataclass
class LabeledExample:
    utterance: str
    gold: IntentFrame
    domain: str | None = None

    def to_dict(self) -> dict:
        return {"utterance": self.utterance, "mr": serialize_mr(self.gold), "domain": self.domain}

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledExample":
        return cls(d["utterance"], parse_mr(d["mr"]), d.get("domain"))


class IngestResult(NamedTuple):
    examples: list[LabeledExample]
    errors: list[dict]
    n_lines: int


def ingest_mtop_tsv(
    path: str | Path,
    utterance_col: int = MTOP_UTTERANCE_COL,
    mr_col: int = MTOP_MR_COL,
    domain_col: int | None = MTOP_DOMAIN_COL,
    schema: Schema | None = None,
) -> IngestResult:
    """Read a tab-separated file; bad lines are reported in ``errors`` and skipped."""
    examples, errors, n = [], [], 0
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            n += 1
            cols = line.split("\t")
            try:
                utterance = cols[utterance_col]
                mr_text = cols[mr_col]
                domain = cols[domain_col] if domain_col is not None else None
            except IndexError:
                errors.append({"line": lineno, "error": "missing column"})
                continue
            try:
                gold = parse_mr(mr_text, schema)
            except (MRSyntaxError, MRSchemaError) as exc:
                errors.append({"line": lineno, "error": str(exc)})
                continue
            examples.append(LabeledExample(utterance, gold, domain or None))
    return IngestResult(examples, errors, n)


def read_examples(path: str | Path) -> list[LabeledExample]:
    with Path(path).open(encoding="utf-8") as fh:
        return [LabeledExample.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_examples(examples: Sequence[LabeledExample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), ensure_ascii=False) + "\n")


def _check_lengths(predictions, gold, allow_empty=False):
    if len(predictions) != len(gold):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold")
    if not gold and not allow_empty:
        raise ValueError("cannot score an empty corpus")


def exact_match_accuracy(predictions: Sequence[IntentFrame | None], gold: Sequence[IntentFrame]) -> float:
    _check_lengths(predictions, gold)
    hits = sum(p is not None and exact_match(p, g) for p, g in zip(predictions, gold))
    return hits / len(gold)


def intent_accuracy(predictions: Sequence[IntentFrame | None], gold: Sequence[IntentFrame]) -> float:
    _check_lengths(predictions, gold)
    hits = sum(p is not None and p.intent == g.intent for p, g in zip(predictions, gold))
    return hits / len(gold)


def _value_key(value) -> object:
    return _canonical(value, False) if isinstance(value, IntentFrame) else normalize_text(value)


def _slot_pairs(frame: IntentFrame | None) -> Counter:
    if frame is None:
        return Counter()
    return Counter((f.slot, _value_key(f.value)) for f in frame.fillings)


def slot_macro_f1(
    predictions: Sequence[IntentFrame | None], gold: Sequence[IntentFrame], schema: Schema | None = None
) -> float:
    """Macro F1 over top-level slot types that occur in gold.

    Each example contributes its (slot, normalized value) pairs; true
    positives are matched within the example only. ``schema`` is accepted for
    interface symmetry and restricts scoring to its slots when given.
    """
    _check_lengths(predictions, gold, allow_empty=True)
    tp, n_pred, n_gold = Counter(), Counter(), Counter()
    for p, g in zip(predictions, gold):
        pp, gp = _slot_pairs(p), _slot_pairs(g)
        for (slot, _), c in pp.items():
            n_pred[slot] += c
        for (slot, _), c in gp.items():
            n_gold[slot] += c
        for (slot, _), c in (pp & gp).items():
            tp[slot] += c
    slots = [s for s in n_gold if schema is None or s in schema.questions]
    if not slots:
        return 1.0 if not n_pred else 0.0
    f1s = []
    for s in slots:
        prec = tp[s] / n_pred[s] if n_pred[s] else 0.0
        rec = tp[s] / n_gold[s]
        f1s.append(0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    return math.fsum(f1s) / len(f1s)


@dataclass
class SweepItem:
    """One slot question with its best span and NLL; ``gold is None`` means unanswerable."""

    slot: str
    gold: str | None
    span_value: str | None
    span_nll: float | None


def token_f1(prediction: str, gold: str) -> float:
    p, g = prediction.split(), gold.split()
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    prec, rec = common / len(p), common / len(g)
    return 2 * prec * rec / (prec + rec)


def sweep_items_from_traces(traces, gold: Sequence[IntentFrame]) -> list[SweepItem]:
    """Items from the slots the pipeline actually asked (predicted-intent conditioning)."""
    if len(traces) != len(gold):
        raise ValueError("traces and gold differ in length")
    items = []
    for trace, g in zip(traces, gold):
        gold_vals = {
            f.slot: serialize_mr(f.value) if f.is_nested else normalize_text(f.value) for f in g.fillings
        }
        for slot, ans in trace.slot_answers.items():
            items.append(SweepItem(slot, gold_vals.get(slot), ans.span_value, ans.span_nll))
    return items


def probe_gold_intent_slots(
    examples: Sequence[LabeledExample],
    schema: Schema,
    backend: GenerationBackend,
    max_span_tokens: int = DEFAULT_MAX_SPAN_TOKENS,
) -> list[SweepItem]:
    """Ask every slot of each example's gold intent and keep the best span (gold-intent conditioning)."""
    cfg = AbstainConfig("nll_threshold", (), threshold=0.0)
    items = []
    for ex in examples:
        gold_vals = {
            f.slot: serialize_mr(f.value) if f.is_nested else normalize_text(f.value) for f in ex.gold.fillings
        }
        for slot in schema.slots_of(ex.gold.intent):
            best = score_slot(ex.utterance, slot, schema, backend, cfg, max_span_tokens).best_span()
            value, nll = best if best else (None, None)
            items.append(SweepItem(slot, gold_vals.get(slot), value, nll))
    return items


def _mean(xs: list[float]) -> float | None:
    return math.fsum(xs) / len(xs) if xs else None


def threshold_sweep(items: Sequence[SweepItem], taus: Sequence[float]) -> list[dict]:
    """Re-threshold recorded NLLs offline.

    A value is kept iff its NLL is <= tau. Answerable items score the token F1
    of the kept value (0 when abstaining); unanswerable items score 1 for
    abstaining and 0 otherwise. ``f1_all`` averages over every item.
    """
    for it in items:
        if it.span_value is not None and it.span_nll is None:
            raise ValueError(f"sweep item for slot {it.slot} is missing its NLL")
    rows = []
    for tau in taus:
        ans_scores, unans_scores, abstained = [], [], 0
        for it in items:
            keep = it.span_value is not None and it.span_nll <= tau
            abstained += not keep
            if it.gold is None:
                unans_scores.append(0.0 if keep else 1.0)
            else:
                ans_scores.append(token_f1(it.span_value, it.gold) if keep else 0.0)
        rows.append(
            {
                "tau": float(tau),
                "f1_all": _mean(ans_scores + unans_scores),
                "f1_answerable": _mean(ans_scores),
                "f1_unanswerable": _mean(unans_scores),
                "abstain_rate": abstained / len(items) if items else None,
            }
        )
    return rows


def write_sweep_csv(rows: Sequence[dict], path_or_file) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow(["" if r[k] is None else repr(float(r[k])) for k in SWEEP_HEADER])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with Path(path_or_file).open("w", encoding="utf-8", newline="") as fh:
            _write(fh)


@dataclass
class EvalReport:
    exact_match_accuracy: float
    intent_accuracy: float
    slot_macro_f1: float
    n: int
    per_domain: dict[str, dict] = field(default_factory=dict)
    abstain_stats: dict[str, float | None] = field(default_factory=dict)
    failed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _core_metrics(preds, gold, schema) -> dict:
    return {
        "exact_match_accuracy": exact_match_accuracy(preds, gold),
        "intent_accuracy": intent_accuracy(preds, gold),
        "slot_macro_f1": slot_macro_f1(preds, gold, schema),
        "n": len(gold),
    }


def evaluate(traces, examples: Sequence[LabeledExample], schema: Schema | None = None) -> EvalReport:
    if len(traces) != len(examples):
        raise ValueError("traces and examples differ in length")
    preds = [t.final for t in traces]
    gold = [ex.gold for ex in examples]
    core = _core_metrics(preds, gold, schema)

    by_domain: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        by_domain.setdefault(ex.domain or "unknown", []).append(i)
    per_domain = {
        d: _core_metrics([preds[i] for i in idx], [gold[i] for i in idx], schema) for d, idx in sorted(by_domain.items())
    }

    answers: list[SlotAnswer] = []
    unanswerable: list[bool] = []
    for t, g in zip(traces, gold):
        gold_slots = {f.slot for f in g.fillings}
        for slot, ans in t.slot_answers.items():
            answers.append(ans)
            unanswerable.append(slot not in gold_slots)
    return EvalReport(
        per_domain=per_domain,
        abstain_stats=abstain_rate(answers, unanswerable),
        failed=sum(t.failed for t in traces),
        **core,
    )


def validate_examples(examples: Sequence[LabeledExample], schema: Schema) -> None:
    for ex in examples:
        check_frame(ex.gold, schema)
