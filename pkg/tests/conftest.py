import itertools
import json
import math
import random
from pathlib import Path

import pytest
from hypothesis import strategies as st
from scipy.special import logsumexp

from qaparse import ScriptedBackend, load_schema
from qaparse.backend import HashedBagOfWords
from qaparse.intent import build_intent_prompt, log_softmax, predict_intent
from qaparse.mr import IntentFrame, SlotFilling, parse_mr
from qaparse.pipeline import PipelineConfig
from qaparse.slots import build_slot_prompt, enumerate_spans

DATA = Path(__file__).parent / "data"

ABSTAIN_NLL = 5.0
ANSWER_NLL = 1.0
DEFAULT_NLL = 8.0

# (utterance, generated intent description, gold intent, top-level answers,
#  nested answers keyed by slot value, expected MR)
CORPUS = [
    ("wake me up at 7 am", "create an alarm", "CREATE_ALARM", {"DATE_TIME": "at 7 am"}, {},
     "[IN:CREATE_ALARM [SL:DATE_TIME at 7 am ] ]"),
    ("set an alarm for 2 pm", "create alarm", "CREATE_ALARM", {"DATE_TIME": "for 2 pm"}, {},
     "[IN:CREATE_ALARM [SL:DATE_TIME for 2 pm ] ]"),
    ("set an alarm", "create alarm", "CREATE_ALARM", {}, {},
     "[IN:CREATE_ALARM ]"),
    ("set a gym alarm for 6 am", "create an alarm", "CREATE_ALARM", {"DATE_TIME": "for 6 am", "ALARM_NAME": "gym"}, {},
     "[IN:CREATE_ALARM [SL:ALARM_NAME gym ] [SL:DATE_TIME for 6 am ] ]"),
    ("message my mom that i am late", "send a message", "SEND_MESSAGE",
     {"RECIPIENT": "my mom", "CONTENT_EXACT": "i am late"},
     {"my mom": {"CONTACT_RELATED": "my", "TYPE_RELATION": "mom"}},
     "[IN:SEND_MESSAGE [SL:RECIPIENT [IN:GET_CONTACT [SL:CONTACT_RELATED my ] [SL:TYPE_RELATION mom ] ] ] "
     "[SL:CONTENT_EXACT i am late ] ]"),
    ("text john hello", "send message", "SEND_MESSAGE", {"RECIPIENT": "john", "CONTENT_EXACT": "hello"}, {},
     "[IN:SEND_MESSAGE [SL:RECIPIENT john ] [SL:CONTENT_EXACT hello ] ]"),
    ("call mom", "make a call", "CREATE_CALL", {"CONTACT": "mom"}, {"mom": {"TYPE_RELATION": "mom"}},
     "[IN:CREATE_CALL [SL:CONTACT [IN:GET_CONTACT [SL:TYPE_RELATION mom ] ] ] ]"),
    ("call alice", "make a call", "CREATE_CALL", {"CONTACT": "alice"}, {},
     "[IN:CREATE_CALL [SL:CONTACT alice ] ]"),
    ("what is the weather in paris", "get the weather", "GET_WEATHER", {"LOCATION": "paris"}, {},
     "[IN:GET_WEATHER [SL:LOCATION paris ] ]"),
    ("will it rain tomorrow in london", "weather forecast", "GET_WEATHER",
     {"LOCATION": "london", "DATE_TIME": "tomorrow"}, {},
     "[IN:GET_WEATHER [SL:DATE_TIME tomorrow ] [SL:LOCATION london ] ]"),
    ("weather please", "get weather", "GET_WEATHER", {}, {},
     "[IN:GET_WEATHER ]"),
    ("remind me to buy milk tomorrow", "create a reminder", "CREATE_REMINDER",
     {"PERSON_REMINDED": "me", "TODO": "buy milk", "DATE_TIME": "tomorrow"}, {},
     "[IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:TODO buy milk ] [SL:DATE_TIME tomorrow ] ]"),
    ("remind my dad to call the bank", "create a reminder", "CREATE_REMINDER",
     {"PERSON_REMINDED": "my dad", "TODO": "call the bank"},
     {"my dad": {"CONTACT_RELATED": "my", "TYPE_RELATION": "dad"}},
     "[IN:CREATE_REMINDER [SL:PERSON_REMINDED [IN:GET_CONTACT [SL:CONTACT_RELATED my ] [SL:TYPE_RELATION dad ] ] ] "
     "[SL:TODO call the bank ] ]"),
    ("play some jazz", "play music", "PLAY_MUSIC", {"MUSIC_GENRE": "jazz"}, {},
     "[IN:PLAY_MUSIC [SL:MUSIC_GENRE jazz ] ]"),
    ("play songs by adele", "play some music", "PLAY_MUSIC", {"MUSIC_ARTIST_NAME": "adele"}, {},
     "[IN:PLAY_MUSIC [SL:MUSIC_ARTIST_NAME adele ] ]"),
    ("play music", "play music", "PLAY_MUSIC", {}, {},
     "[IN:PLAY_MUSIC ]"),
    ("call my sister", "make a call", "CREATE_CALL", {"CONTACT": "my sister"},
     {"my sister": {"CONTACT_RELATED": "my", "TYPE_RELATION": "sister"}},
     "[IN:CREATE_CALL [SL:CONTACT [IN:GET_CONTACT [SL:CONTACT_RELATED my ] [SL:TYPE_RELATION sister ] ] ] ]"),
    ("send a message to bob saying see you soon", "send a message", "SEND_MESSAGE",
     {"RECIPIENT": "bob", "CONTENT_EXACT": "see you soon"}, {},
     "[IN:SEND_MESSAGE [SL:RECIPIENT bob ] [SL:CONTENT_EXACT see you soon ] ]"),
    ("set an alarm called work for 8 am", "create alarm", "CREATE_ALARM",
     {"ALARM_NAME": "work", "DATE_TIME": "for 8 am"}, {},
     "[IN:CREATE_ALARM [SL:ALARM_NAME work ] [SL:DATE_TIME for 8 am ] ]"),
    ("remind me at 5 pm", "create reminder", "CREATE_REMINDER", {"PERSON_REMINDED": "me", "DATE_TIME": "at 5 pm"}, {},
     "[IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:DATE_TIME at 5 pm ] ]"),
]

# utterances where the description matches no label, so greedy falls back to
# schema order; the gold intent is the only one whose slot gets answered
BEAM_HELPS = [
    ("ring alice", "ring", "CREATE_CALL", {"CONTACT": "alice"}, {}, "[IN:CREATE_CALL [SL:CONTACT alice ] ]"),
    ("tunes by adele", "tunes", "PLAY_MUSIC", {"MUSIC_ARTIST_NAME": "adele"}, {},
     "[IN:PLAY_MUSIC [SL:MUSIC_ARTIST_NAME adele ] ]"),
]


def script_abstainer(backend, schema, context, slot_answers, nested_answers):
    """Script every slot question of every intent for ``context``.

    Answers in ``slot_answers`` get ANSWER_NLL, the abstain phrase gets
    ABSTAIN_NLL, and every other candidate falls back to DEFAULT_NLL. Answered
    values hosting nested intents are scripted recursively.
    """
    for slot in schema.slots:
        scores = {"unanswerable": ABSTAIN_NLL}
        if slot in slot_answers:
            scores[slot_answers[slot]] = ANSWER_NLL
        backend.add_scores(build_slot_prompt(context, schema.question(slot)), scores)
    for slot, value in slot_answers.items():
        if schema.nested_candidates(slot):
            script_abstainer(backend, schema, value, nested_answers.get(value, {}), {})


class ScriptDocument:
    """Collects the same script as a backend, in the file layout ``ScriptedBackend.from_file`` reads."""

    def __init__(self):
        self.doc = {"generate": {}, "score": {}, "default_nll": DEFAULT_NLL}

    def add_generation(self, prompt, text, nll=0.0):
        self.doc["generate"][prompt] = [text, nll]

    def add_scores(self, prompt, scores):
        self.doc["score"].setdefault(prompt, {}).update(scores)


def _script(target, schema, corpus):
    for utterance, description, _, answers, nested, _ in corpus:
        target.add_generation(build_intent_prompt(utterance), description, 2.0)
        script_abstainer(target, schema, utterance, answers, nested)
    return target


def scripted_backend(schema, corpus):
    return _script(ScriptedBackend(default_nll=DEFAULT_NLL), schema, corpus)


def script_document(schema, corpus):
    return _script(ScriptDocument(), schema, corpus).doc


@pytest.fixture(scope="session")
def toy_schema():
    return load_schema(DATA / "toy_schema.yaml")


@pytest.fixture(scope="session")
def mtop_schema():
    return load_schema(DATA / "mtop_shaped_schema.json")


@pytest.fixture
def corpus_backend(toy_schema):
    return scripted_backend(toy_schema, CORPUS + BEAM_HELPS)


NAMES = ["Tagore", "Curie", "Okafor", "Lindqvist", "Moreau", "Tanaka", "Iverson", "Castillo", "Novak", "Haddad"]
CITIES = ["Calcutta", "Warsaw", "Lagos", "Uppsala", "Lyon", "Osaka", "Bergen", "Seville", "Brno", "Beirut",
          "Quito", "Perth", "Tartu", "Porto", "Gdansk", "Leeds", "Tromso", "Izmir", "Cusco", "Hobart"]
FIELDS = ["poetry", "chemistry", "architecture", "astronomy", "linguistics", "botany", "music", "geology"]
INSTITUTIONS = ["the Royal Academy", "the City College", "the National Museum", "the Free University",
                "the Polytechnic Institute", "the Observatory"]


def make_squad_v2(n_questions=500, seed=7):
    """SQuAD v2 layout with answerable questions whose answers sit in one sentence each."""
    rng = random.Random(seed)
    data, qid = [], 0
    while qid < n_questions:
        name = rng.choice(NAMES) + f" {rng.choice('ABCDEFGHJKLMNPRSTVW')}."
        surname = name.split()[0]
        city, city2 = rng.sample(CITIES, 2)
        field_ = rng.choice(FIELDS)
        inst = rng.choice(INSTITUTIONS)
        year = rng.randint(1700, 1990)
        n_books = rng.randint(3, 60)
        sents = [
            (f"{surname} was born in {city} in the year {year}.", "Where was {s} born?", city),
            (f"Early on, {surname} studied {field_} with great enthusiasm.", "What did {s} study?", field_),
            (f"Later {surname} taught at {inst} for many years.", "Where did {s} teach?", inst),
            (f"In total {surname} wrote {n_books} books.", "How many books did {s} write?", str(n_books)),
            (f"The final years were spent in {city2} near the sea.", "Where were the final years of {s} spent?", city2),
            ("Critics remain divided about the legacy.", None, None),
        ]
        rng.shuffle(sents)
        context = " ".join(s for s, _, _ in sents)
        qas = []
        for _, q, a in sents:
            if q is None or qid >= n_questions:
                continue
            start = context.index(a)
            qas.append({"id": f"q{qid:05d}", "question": q.format(s=surname) + f" ({qid})",
                        "answers": [{"text": a, "answer_start": start}], "is_impossible": False})
            qid += 1
        data.append({"title": f"{surname} {qid}", "paragraphs": [{"context": context, "qas": qas}]})
    return {"version": "v2.0", "data": data}


@pytest.fixture
def squad_file(tmp_path):
    path = tmp_path / "squad_subset.json"
    path.write_text(json.dumps(make_squad_v2()), encoding="utf-8")
    return path


# random frames for round-trip properties
LABELS = st.from_regex(r"[A-Z][A-Z0-9_]{0,7}", fullmatch=True)
WORDS = st.text(alphabet="abcdefghijklmnopqrstuvwxyzABC0123456789'.,:-", min_size=1, max_size=6)
TEXT_VALUES = st.lists(WORDS, min_size=1, max_size=4).map(" ".join)


def _frames(nested_allowed):
    value = st.one_of(TEXT_VALUES, _frames(False)) if nested_allowed else TEXT_VALUES
    fillings = st.lists(st.builds(SlotFilling, LABELS, value), max_size=4).map(tuple)
    return st.builds(IntentFrame, LABELS, fillings)


FRAMES = st.deferred(lambda: _frames(True))


def random_frame(rng, depth=1):
    """Seeded generator of valid frames (depth <= 4), independent of hypothesis."""
    def label():
        return rng.choice("ABCDEFGH") + "".join(rng.choice("ABCXYZ_019") for _ in range(rng.randint(0, 6)))

    def text():
        return " ".join(
            "".join(rng.choice("abcdefxyz0189'.:-") for _ in range(rng.randint(1, 5)))
            for _ in range(rng.randint(1, 4))
        )

    fillings = []
    for _ in range(rng.randint(0, 4)):
        if depth == 1 and rng.random() < 0.3:
            fillings.append(SlotFilling(label(), random_frame(rng, depth=3)))
        else:
            fillings.append(SlotFilling(label(), text()))
    return IntentFrame(label(), tuple(fillings))


def oracle_beam(utterance, schema, backend, k, alpha, cfg=PipelineConfig()):
    """Independent exhaustive search over top-k intents and top-k options per slot.

    A slot option's log-probability is its -NLL normalized over the slot's spans
    and its abstain option (the best abstain phrase). A nested value is scored
    by the normalized log-probabilities of the nested slots' greedy decisions.
    """
    phrases = cfg.abstain.phrases

    def slot_table(context, slot):
        spans = enumerate_spans(context, cfg.max_span_tokens)
        cands = spans + [p for p in phrases if p not in spans]
        nlls = {g.text: g.nll for g in backend.score_candidates(build_slot_prompt(context, schema.question(slot)), cands)}
        abstain = min(nlls[p] for p in cands[len(spans):])
        options = [(nlls[s], 0, i, s) for i, s in enumerate(spans)] + [(abstain, 1, 0, None)]
        logz = logsumexp([-o[0] for o in options])
        return sorted(options), logz

    def nested_value(value, slot):
        best = None
        for rank, intent in enumerate(schema.nested_candidates(slot)):
            picks = {}
            for ns in schema.slots_of(intent):
                options, logz = slot_table(value, ns)
                picks[ns] = (options[0][3], options[0][0], -options[0][0] - logz)
            answered = {s: p for s, p in picks.items() if p[0] is not None}
            if not answered:
                continue
            key = (-len(answered), math.fsum(p[1] for p in answered.values()), rank)
            if best is None or key < best[0]:
                best = (key, intent, picks)
        return best

    pred = predict_intent(utterance, schema, backend, HashedBagOfWords())
    intent_lps = log_softmax([s for _, s in pred.ranked])
    best_score, best_frame = -math.inf, None
    for (intent, _), ilp in list(zip(pred.ranked, intent_lps))[:k]:
        per_slot = []
        for slot in schema.slots_of(intent):
            options, logz = slot_table(utterance, slot)
            choices = []
            for nll, _, _, value in options[:k]:
                text = value
                lp = -nll - logz
                if value is not None and schema.nested_candidates(slot):
                    nested = nested_value(value, slot)
                    if nested is not None:
                        _, n_intent, picks = nested
                        lp = math.fsum(p[2] for p in picks.values())
                        inner = " ".join(f"[SL:{s} {p[0]} ]" for s, p in picks.items() if p[0] is not None)
                        text = f"[IN:{n_intent} {inner} ]"
                choices.append((slot, text, lp))
            per_slot.append(choices)
        for combo in itertools.product(*per_slot):
            score = alpha * ilp + (1 - alpha) * math.fsum(c[2] for c in combo)
            if score > best_score + 1e-12:
                body = " ".join(f"[SL:{s} {t} ]" for s, t, _ in combo if t is not None)
                best_score, best_frame = score, f"[IN:{intent} {body} ]"
    return best_score, parse_mr(best_frame)


# one status line per acceptance criterion, printed after the run
_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    status = _CRITERIA.get(report.nodeid, (name, "PASS"))[1]
    if report.failed:
        status = "FAIL"
    elif report.skipped and status != "FAIL":
        status = "SKIP"
    _CRITERIA[report.nodeid] = (name, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _CRITERIA.values():
        terminalreporter.write_line(f"{status} {name}")
