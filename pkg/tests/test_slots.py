import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qaparse.backend import ScriptedBackend
from qaparse.schema import Schema
from qaparse.slots import (
    DEFAULT_ABSTAIN_PHRASES,
    AbstainConfig,
    SlotAnswer,
    SlotScores,
    abstain_rate,
    build_slot_prompt,
    decide,
    enumerate_candidates,
    enumerate_spans,
    extract_slot,
    option_log_normalizer,
    ranked_options,
)

SCHEMA = Schema(
    intents=("CREATE_CALL",),
    slots=("CONTACT",),
    questions={"CONTACT": "Who should be called?"},
    i2s={"CREATE_CALL": ("CONTACT",)},
    s2ni={},
)
PROMPT = build_slot_prompt("call mom", "Who should be called?")
PHRASES = AbstainConfig()
THRESHOLD = AbstainConfig(mode="nll_threshold", threshold=2.5)


def test_prompt_bytes():
    assert PROMPT == (
        "Answer the following question depending on the context.\n"
        "context: A user said, call mom.\n"
        "question: Who should be called?\n"
        "answer:"
    )
    assert "A user said, call mom.." in build_slot_prompt("call mom.", "q?")
    with pytest.raises(ValueError):
        build_slot_prompt("call mom", "")
    with pytest.raises(ValueError):
        build_slot_prompt("", "q?")


def test_enumerate_candidates():
    assert enumerate_candidates("a b", 2, ["none"]) == ["a", "b", "a b", "none"]
    assert enumerate_candidates("a a", 1, ["none"]) == ["a", "none"]
    assert enumerate_candidates("a b c", 2) == ["a", "b", "c", "a b", "b c"]
    assert enumerate_spans("a b c", 2) == ["a", "a b", "b", "b c", "c"]
    with pytest.raises(ValueError):
        enumerate_candidates("", 3)
    with pytest.raises(ValueError):
        enumerate_candidates("a", 0)


@given(st.integers(1, 12))
def test_span_count_identity(n):
    context = " ".join(f"w{i}" for i in range(n))
    assert len(enumerate_spans(context, n)) == n * (n + 1) // 2


@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=8), st.integers(1, 4))
def test_spans_are_token_substrings(tokens, k):
    context = " ".join(tokens)
    padded = f" {context} "
    for span in enumerate_spans(context, k):
        assert f" {span} " in padded
        assert len(span.split()) <= k


def _backend(scores):
    return ScriptedBackend(scores={PROMPT: scores}, default_nll=9.0)


def test_phrase_set_picks_span():
    ans = extract_slot("call mom", "CONTACT", SCHEMA, _backend({"mom": 1.0, "unanswerable": 5.0}), PHRASES)
    assert (ans.value, ans.nll, ans.abstained) == ("mom", 1.0, False)


def test_phrase_set_abstains():
    ans = extract_slot("call mom", "CONTACT", SCHEMA, _backend({"mom": 4.0, "no answer": 2.0}), PHRASES)
    assert ans.abstained and ans.value is None
    assert ans.nll == 2.0
    assert (ans.span_value, ans.span_nll) == ("mom", 4.0)


def test_threshold_mode():
    backend = _backend({"mom": 3.0, "unanswerable": 0.1})
    ans = extract_slot("call mom", "CONTACT", SCHEMA, backend, THRESHOLD)
    assert ans.abstained
    assert (ans.span_value, ans.span_nll) == ("mom", 3.0)
    ok = extract_slot("call mom", "CONTACT", SCHEMA, backend, AbstainConfig("nll_threshold", threshold=3.0))
    assert ok.value == "mom" and not ok.abstained


def test_ties_prefer_earliest_then_shortest_then_span():
    backend = _backend({"call": 1.0, "mom": 1.0, "call mom": 1.0, "unanswerable": 1.0})
    assert extract_slot("call mom", "CONTACT", SCHEMA, backend, PHRASES).value == "call"
    backend = _backend({"mom": 1.0, "call mom": 1.0})
    assert extract_slot("call mom", "CONTACT", SCHEMA, backend, PHRASES).value == "call mom"


def test_phrase_equal_to_span_is_a_span():
    prompt = build_slot_prompt("no answer", "Who should be called?")
    backend = ScriptedBackend(scores={prompt: {"no answer": 0.5}}, default_nll=9.0)
    ans = extract_slot("no answer", "CONTACT", SCHEMA, backend, PHRASES)
    assert ans.value == "no answer" and not ans.abstained


def test_abstain_config_validation():
    with pytest.raises(ValueError):
        AbstainConfig(mode="phrase_set", phrases=())
    with pytest.raises(ValueError):
        AbstainConfig(mode="nll_threshold")
    with pytest.raises(ValueError):
        AbstainConfig(mode="nll_threshold", threshold=math.inf)
    with pytest.raises(ValueError):
        AbstainConfig(mode="other")
    assert AbstainConfig().phrases == DEFAULT_ABSTAIN_PHRASES


nll = st.floats(0.0, 20.0, allow_nan=False)


@given(st.lists(nll, min_size=1, max_size=6), nll)
def test_phrase_dominance_fully_determines_abstention(span_nlls, phrase_nll):
    scores = SlotScores("S", [(f"t{i}", v) for i, v in enumerate(span_nlls)], [("unanswerable", phrase_nll)])
    ans = decide(scores, PHRASES)
    if phrase_nll < min(span_nlls):
        assert ans.abstained
    else:
        assert not ans.abstained and ans.nll == min(span_nlls)


@given(st.lists(nll, min_size=1, max_size=30), nll, nll)
def test_threshold_monotone(span_nlls, t1, t2):
    lo, hi = sorted((t1, t2))
    slots = [SlotScores("S", [("x", v)]) for v in span_nlls]

    def count(tau):
        return sum(decide(s, AbstainConfig("nll_threshold", threshold=tau)).abstained for s in slots)

    assert count(hi) <= count(lo)


@given(st.lists(nll, min_size=1, max_size=6), nll, st.integers(1, 8))
def test_ranked_options_agree_with_decide(span_nlls, phrase_nll, k):
    scores = SlotScores("S", [(f"t{i}", v) for i, v in enumerate(span_nlls)], [("unanswerable", phrase_nll)])
    for cfg in (PHRASES, AbstainConfig("nll_threshold", threshold=phrase_nll)):
        opts = ranked_options(scores, cfg, k)
        ans = decide(scores, cfg)
        assert len(opts) == min(k, len(span_nlls) + 1)
        assert opts[0][0] == ans.value
        assert [n for _, n in opts] == sorted(n for _, n in opts)


def test_option_normalizer():
    scores = SlotScores("S", [("a", 1.0), ("b", 2.0)], [("unanswerable", 3.0), ("no answer", 0.5)])
    # spans plus the single best phrase
    expected = math.log(math.exp(-1.0) + math.exp(-2.0) + math.exp(-0.5))
    assert option_log_normalizer(scores, PHRASES) == pytest.approx(expected)
    expected_t = math.log(math.exp(-1.0) + math.exp(-2.0) + math.exp(-2.5))
    assert option_log_normalizer(scores, THRESHOLD) == pytest.approx(expected_t)


def test_no_candidates_abstains():
    ans = decide(SlotScores("S", [], []), PHRASES)
    assert ans.abstained and ans.value is None


def _answer(abstained):
    return SlotAnswer("S", None if abstained else "x", 1.0, abstained)


def test_abstain_rate():
    assert abstain_rate([_answer(True)] * 3, [True] * 3) == {"on_unanswerable": 1.0, "on_answerable": None}
    assert abstain_rate([_answer(False)] * 4, [True, False, True, False]) == {
        "on_unanswerable": 0.0,
        "on_answerable": 0.0,
    }
    rates = abstain_rate([_answer(True), _answer(True), _answer(False), _answer(False)], [True] * 4)
    assert rates["on_unanswerable"] == 0.5
    with pytest.raises(ValueError):
        abstain_rate([_answer(True)], [True, False])


def test_slot_answer_invariant():
    with pytest.raises(ValueError):
        SlotAnswer("S", "x", 1.0, True)
    with pytest.raises(ValueError):
        SlotAnswer("S", None, 1.0, False)
    ans = SlotAnswer("S", "x", 1.0, False, "x", 1.0)
    assert SlotAnswer.from_dict(ans.to_dict()) == ans
