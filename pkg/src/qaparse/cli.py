"""Command-line entry point: ``qaparse <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backend import ReplayBackend
from .config import ConfigError, RunConfig, load_config
from .datagen import STRATEGIES, synthesize_corpus
from .metrics import (
    evaluate,
    ingest_mtop_tsv,
    probe_gold_intent_slots,
    read_examples,
    sweep_items_from_traces,
    threshold_sweep,
    write_examples,
    write_sweep_csv,
)
from .pipeline import parse_corpus

log = logging.getLogger("qaparse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration (YAML or JSON)")
    p.add_argument("--beam-k", type=int, help="beam size; 1 means greedy")
    p.add_argument("--alpha", type=float, help="intent weight in the aggregated beam score")
    p.add_argument("--jobs", type=int, default=1, help="parallel utterances")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qaparse", description="Zero-shot task-oriented parsing via question answering.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse utterances and print meaning representations")
    _add_run_options(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--utterance", action="append", help="utterance to parse (repeatable)")
    src.add_argument("--input", type=Path, help="file with one utterance per line, or JSONL with 'utterance'")
    p.add_argument("--traces", type=Path, help="write parse traces as JSONL")

    p = sub.add_parser("eval", help="evaluate on a labelled dataset")
    _add_run_options(p)
    p.add_argument("--data", type=Path, required=True, help="examples JSONL (see 'ingest') or MTOP TSV")
    p.add_argument("--output", type=Path, help="EvalReport JSON path (default: stdout)")
    p.add_argument("--traces", type=Path, help="write parse traces as JSONL")

    p = sub.add_parser("replay", help="re-run 'eval' from a recorded trace log, without network")
    _add_run_options(p)
    p.add_argument("--trace-log", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p.add_argument("--traces", type=Path)

    p = sub.add_parser("gen-unanswerable", help="synthesize unanswerable QA samples")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--report", type=Path)
    p.add_argument("--format", choices=("auto", "squad", "jsonl"), default="auto")
    p.add_argument("--strategies", default=",".join(STRATEGIES), help="comma separated subset of removal,swap")
    p.add_argument("--ratio", type=float, default=0.5, help="unanswerable fraction of the output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-swap-guard", action="store_true", help="allow donor contexts containing the answer")

    p = sub.add_parser("sweep-threshold", help="F1 vs NLL abstain threshold, as CSV")
    _add_run_options(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--taus", default="0:20:50", help="'start:stop:num' grid or comma separated values")
    p.add_argument("--condition", choices=("gold", "predicted"), default="gold")
    p.add_argument("--output", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("ingest", help="convert an MTOP TSV file to examples JSONL")
    p.add_argument("--tsv", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--utterance-col", type=int, default=3)
    p.add_argument("--mr-col", type=int, default=6)
    p.add_argument("--domain-col", type=int, default=4, help="negative to disable")
    p.add_argument("--errors", type=Path, help="write unparseable lines as JSONL")
    return parser


def _load_run(args) -> tuple[RunConfig, object]:
    cfg = load_config(args.config)
    if args.beam_k is not None or args.alpha is not None:
        cfg.beam = replace(
            cfg.beam,
            k=args.beam_k if args.beam_k is not None else cfg.beam.k,
            alpha=args.alpha if args.alpha is not None else cfg.beam.alpha,
        )
    return cfg, cfg.load_schema()


def _read_utterances(path: Path) -> list[str]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if path.suffix == ".jsonl":
            out.append(json.loads(line)["utterance"])
        else:
            out.append(line.strip())
    return out


def _read_data(path: Path):
    if path.suffix.lower() in (".tsv", ".txt"):
        return ingest_mtop_tsv(path).examples
    return read_examples(path)


def _run_parse(cfg: RunConfig, schema, backend, utterances, jobs: int):
    beam = cfg.beam if cfg.beam.k > 1 else None
    return parse_corpus(utterances, schema, backend, cfg.make_similarity(), cfg.pipeline, beam, jobs)


def _write_traces(path: Path | None, traces) -> None:
    if path is None:
        return
    with path.open("w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def cmd_parse(args) -> int:
    cfg, schema = _load_run(args)
    utterances = args.utterance or _read_utterances(args.input)
    traces = _run_parse(cfg, schema, cfg.make_backend(), utterances, args.jobs)
    _write_traces(args.traces, traces)
    failed = 0
    for t in traces:
        if t.failed:
            failed += 1
            print(f"error: {t.utterance!r}: {t.error}", file=sys.stderr)
            print("")
        else:
            print(t.mr)
    return 2 if failed else 0


def _eval(args, backend) -> int:
    cfg, schema = _load_run(args)
    examples = _read_data(args.data)
    traces = _run_parse(cfg, schema, backend, [ex.utterance for ex in examples], args.jobs)
    _write_traces(args.traces, traces)
    _emit(evaluate(traces, examples, schema).to_json(), args.output)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    return _eval(args, cfg.make_backend())


def cmd_replay(args) -> int:
    return _eval(args, ReplayBackend.from_log(args.trace_log))


def cmd_gen(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies or any(s not in STRATEGIES for s in strategies):
        raise UsageError(f"--strategies must be a subset of {','.join(STRATEGIES)}")
    if not 0.0 < args.ratio <= 1.0:
        raise UsageError("--ratio must lie in (0, 1]")
    report = synthesize_corpus(
        args.input,
        args.output,
        strategies,
        args.ratio,
        args.seed,
        args.format,
        swap_guard=not args.no_swap_guard,
        report_path=args.report,
    )
    print(json.dumps(report.to_dict(), sort_keys=True), file=sys.stderr)
    return 0


def parse_taus(spec: str) -> list[float]:
    try:
        if ":" in spec:
            start, stop, num = spec.split(":")
            return [float(x) for x in np.linspace(float(start), float(stop), int(num))]
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --taus {spec!r}: {exc}") from None


def cmd_sweep(args) -> int:
    taus = parse_taus(args.taus)
    cfg, schema = _load_run(args)
    examples = _read_data(args.data)
    backend = cfg.make_backend()
    if args.condition == "gold":
        items = probe_gold_intent_slots(examples, schema, backend, cfg.pipeline.max_span_tokens)
    else:
        traces = _run_parse(cfg, schema, backend, [ex.utterance for ex in examples], args.jobs)
        items = sweep_items_from_traces(traces, [ex.gold for ex in examples])
    rows = threshold_sweep(items, taus)
    if args.output is None:
        write_sweep_csv(rows, sys.stdout)
    else:
        write_sweep_csv(rows, args.output)
    return 0


def cmd_ingest(args) -> int:
    domain_col = args.domain_col if args.domain_col >= 0 else None
    result = ingest_mtop_tsv(args.tsv, args.utterance_col, args.mr_col, domain_col)
    write_examples(result.examples, args.output)
    if args.errors is not None:
        with args.errors.open("w", encoding="utf-8") as fh:
            for e in result.errors:
                fh.write(json.dumps(e) + "\n")
    print(f"{len(result.examples)} examples, {len(result.errors)} errors of {result.n_lines} lines", file=sys.stderr)
    return 0


COMMANDS = {
    "parse": cmd_parse,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "gen-unanswerable": cmd_gen,
    "sweep-threshold": cmd_sweep,
    "ingest": cmd_ingest,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qaparse: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"qaparse: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
