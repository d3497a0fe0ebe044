"""Synthetic unanswerable QA samples for training an abstaining reader.

Two strategies turn an answerable (question, context, answer) triple into an
unanswerable one: dropping every context sentence that contains the answer,
or pairing the question with a context drawn from another sample.
"""
from __future__ import annotations

import itertools
import json
import math
import random
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

STRATEGIES = ("removal", "swap")
MAX_SWAP_DRAWS = 10

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.?!])\s+(?=[A-Z])")


@dataclass(frozen=True)
class QASample:
    id: str
    question: str
    context: str
    answer: str
    source: str = "unknown"
    answerable: bool = True
    kind: str = "extractive"
    provenance_strategy: str | None = None
    provenance_source_id: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QASample":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class SynthesisReport:
    input_count: int = 0
    removed_sentence_count: int = 0
    swapped_count: int = 0
    skipped_count: int = 0
    skip_reasons: dict[str, int] = field(default_factory=dict)
    emitted_answerable: int = 0
    emitted_unanswerable: int = 0
    target_ratio: float | None = None
    ratio_reached: bool = True

    @property
    def attempted(self) -> int:
        return self.removed_sentence_count + self.swapped_count + self.skipped_count

    def skipped_by_strategy(self, strategy: str) -> int:
        return sum(n for reason, n in self.skip_reasons.items() if reason.startswith(strategy + ":"))

    def skip(self, reason: str) -> None:
        self.skipped_count += 1
        self.skip_reasons[reason] = self.skip_reasons.get(reason, 0) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["skip_reasons"] = dict(sorted(self.skip_reasons.items()))
        return d


def split_sentences(text: str) -> list[str]:
    """Split at ``.``/``?``/``!`` followed by whitespace and an uppercase letter."""
    text = " ".join(text.split())
    if not text:
        return []
    return _SENTENCE_BOUNDARY.split(text)


class Skip(Exception):
    """A sample for which a strategy produced nothing; ``reason`` names why."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _removal(sample: QASample) -> QASample:
    if sample.kind != "extractive" or not sample.answer or sample.answer not in sample.context:
        raise Skip("removal:answer_not_in_context")
    kept = [s for s in split_sentences(sample.context) if sample.answer not in s]
    context = " ".join(kept)
    if not context:
        raise Skip("removal:empty_context")
    if sample.answer in context:
        raise Skip("removal:residual_answer")
    return replace(
        sample,
        id=f"{sample.id}::removal",
        context=context,
        answerable=False,
        provenance_strategy="removal",
        provenance_source_id=sample.id,
    )


def make_unanswerable_by_removal(sample: QASample) -> QASample | None:
    """Drop every sentence containing the answer; ``None`` when that is not possible."""
    try:
        return _removal(sample)
    except Skip:
        return None


def _sample_rng(seed, sample_id: str) -> random.Random:
    return random.Random(f"{seed}:{sample_id}")


def _swap(sample: QASample, pool: Sequence[QASample], rng_seed, guard: bool = True) -> QASample:
    eligible = [p for p in pool if p.question != sample.question and p.context != sample.context]
    if not eligible:
        raise Skip("swap:no_eligible")
    rng = _sample_rng(rng_seed, sample.id)
    for _ in range(MAX_SWAP_DRAWS):
        donor = eligible[rng.randrange(len(eligible))]
        if guard and sample.answer and sample.answer in donor.context:
            continue
        return replace(
            sample,
            id=f"{sample.id}::swap",
            context=donor.context,
            answerable=False,
            provenance_strategy="swap",
            provenance_source_id=sample.id,
        )
    raise Skip("swap:answer_in_donor")


def make_unanswerable_by_swap(
    sample: QASample, pool: Sequence[QASample], rng_seed=0, guard: bool = True
) -> QASample | None:
    """Pair the question with a donor context; ``None`` when no safe donor turns up."""
    if not pool:
        raise ValueError("pool must be non-empty")
    try:
        return _swap(sample, pool, rng_seed, guard)
    except Skip:
        return None


def synthesize(
    samples: Sequence[QASample],
    strategies: Sequence[str] = STRATEGIES,
    target_ratio: float = 0.5,
    rng_seed=0,
    swap_guard: bool = True,
    pool: Sequence[QASample] | None = None,
) -> tuple[list[QASample], SynthesisReport]:
    """Augment answerable samples with synthetic unanswerables at ``target_ratio``.

    Every strategy is attempted on every answerable sample. Sample ``i`` offers
    its synthetic from strategy ``i mod len(strategies)`` first, so picks
    alternate between strategies; further rounds draw the remaining ones.
    Output interleaves the classes evenly.
    """
    if not 0.0 < target_ratio <= 1.0:
        raise ValueError("target_ratio must lie in (0, 1]")
    strategies = list(dict.fromkeys(strategies))
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    answerable = [s for s in samples if s.answerable]
    pool = list(pool if pool is not None else answerable)
    report = SynthesisReport(input_count=len(samples), target_ratio=target_ratio)

    offers: list[list[QASample]] = []
    for i, sample in enumerate(answerable):
        made = {}
        for strategy in strategies:
            if strategy == "removal" and sample.kind != "extractive":
                continue
            try:
                if strategy == "removal":
                    made[strategy] = _removal(sample)
                    report.removed_sentence_count += 1
                else:
                    if not pool:
                        raise Skip("swap:no_eligible")
                    made[strategy] = _swap(sample, pool, rng_seed, swap_guard)
                    report.swapped_count += 1
            except Skip as skip:
                report.skip(skip.reason)
        order = strategies[i % len(strategies) :] + strategies[: i % len(strategies)]
        offers.append([made[s] for s in order if s in made])

    n_ans = len(answerable)
    available = sum(len(o) for o in offers)
    if target_ratio == 1.0:
        wanted = available
        n_ans = 0
    else:
        wanted = round(n_ans * target_ratio / (1.0 - target_ratio))
    report.ratio_reached = available >= wanted
    wanted = min(wanted, available)

    picked: list[QASample] = []
    for depth in itertools.count():
        if len(picked) >= wanted or all(len(o) <= depth for o in offers):
            break
        for o in offers:
            if len(picked) >= wanted:
                break
            if len(o) > depth:
                picked.append(o[depth])

    kept_answerable = answerable[:n_ans]
    out = interleave(kept_answerable, picked)
    report.emitted_answerable = len(kept_answerable)
    report.emitted_unanswerable = len(picked)
    return out, report


def interleave(positives: Sequence, negatives: Sequence) -> list:
    """Merge two lists so every prefix holds negatives in proportion (Bresenham spacing)."""
    total = len(positives) + len(negatives)
    out, i, j = [], 0, 0
    for k in range(total):
        if j < len(negatives) and (i >= len(positives) or math.floor((k + 1) * len(negatives) / total) > j):
            out.append(negatives[j])
            j += 1
        else:
            out.append(positives[i])
            i += 1
    return out


def read_jsonl(path: str | Path) -> list[QASample]:
    with Path(path).open(encoding="utf-8") as fh:
        return [QASample.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_jsonl(samples: Iterable[QASample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def read_squad_v2(path: str | Path, source: str = "squad_v2") -> list[QASample]:
    """Flatten a SQuAD v2 JSON file; the first gold answer is kept."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for article in doc["data"]:
        for para in article["paragraphs"]:
            context = para["context"]
            for qa in para["qas"]:
                answers = qa.get("answers") or []
                impossible = qa.get("is_impossible", not answers)
                answer = "" if impossible or not answers else answers[0]["text"]
                out.append(
                    QASample(
                        id=str(qa["id"]),
                        question=qa["question"],
                        context=context,
                        answer=answer,
                        source=source,
                        answerable=not impossible,
                    )
                )
    return out


def read_samples(path: str | Path, fmt: str = "auto") -> list[QASample]:
    path = Path(path)
    if fmt == "auto":
        fmt = "jsonl" if path.suffix.lower() == ".jsonl" else "squad"
    if fmt == "squad":
        return read_squad_v2(path)
    if fmt == "jsonl":
        return read_jsonl(path)
    raise ValueError(f"unknown input format {fmt!r}")


def synthesize_corpus(
    input_path: str | Path,
    output_path: str | Path,
    strategies: Sequence[str] = STRATEGIES,
    target_ratio: float = 0.5,
    rng_seed=0,
    fmt: str = "auto",
    swap_guard: bool = True,
    report_path: str | Path | None = None,
) -> SynthesisReport:
    """File-to-file driver: read samples, synthesize, write JSONL (and a JSON report)."""
    samples = read_samples(input_path, fmt)
    by_source: dict[str, list[QASample]] = {}
    for s in samples:
        if s.answerable:
            by_source.setdefault(s.source, []).append(s)
    # swap donors come from the same dataset
    out: list[QASample] = []
    report = SynthesisReport(input_count=len(samples), target_ratio=target_ratio)
    reasons: Counter = Counter()
    for source, group in by_source.items():
        part, rep = synthesize(group, strategies, target_ratio, rng_seed, swap_guard)
        out.extend(part)
        report.removed_sentence_count += rep.removed_sentence_count
        report.swapped_count += rep.swapped_count
        report.skipped_count += rep.skipped_count
        reasons.update(rep.skip_reasons)
        report.emitted_answerable += rep.emitted_answerable
        report.emitted_unanswerable += rep.emitted_unanswerable
        report.ratio_reached &= rep.ratio_reached
    report.skip_reasons = dict(reasons)
    write_jsonl(out, output_path)
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
