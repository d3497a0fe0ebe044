import json

import numpy as np
import pytest
from conftest import BEAM_HELPS, CORPUS, make_squad_v2
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qaparse.backend import ScriptedBackend
from qaparse.datagen import read_squad_v2
from qaparse.estimators import IntentClassifier, UnanswerableSynthesizer, ZeroShotParser
from qaparse.intent import build_intent_prompt
from qaparse.mr import parse_mr

UTTERANCES = [row[0] for row in CORPUS]
GOLD = [parse_mr(row[5]) for row in CORPUS]


def test_parser_params_and_clone(toy_schema, corpus_backend):
    parser = ZeroShotParser(toy_schema, corpus_backend, beam_k=3, alpha=0.3)
    params = parser.get_params()
    assert params["beam_k"] == 3 and params["alpha"] == 0.3 and params["abstain_score"] == "normalized"
    twin = clone(parser)
    assert twin.get_params()["alpha"] == 0.3 and not hasattr(twin, "alpha_")
    parser.set_params(alpha=0.7)
    assert parser.alpha == 0.7


def test_parser_predict_and_score(toy_schema, corpus_backend):
    parser = ZeroShotParser(toy_schema, corpus_backend)
    with pytest.raises(NotFittedError):
        parser.predict(["call mom"])
    parser.fit()
    assert parser.predict_mr(UTTERANCES) == [row[5] for row in CORPUS]
    assert parser.score(UTTERANCES, GOLD) == 1.0
    assert parser.score(UTTERANCES, [row[5] for row in CORPUS]) == 1.0
    assert parser.fit(UTTERANCES, GOLD).alpha_ == 0.5


def test_parser_requires_schema_and_backend(toy_schema):
    with pytest.raises(ValueError):
        ZeroShotParser(toy_schema).fit()
    with pytest.raises(ValueError):
        ZeroShotParser(toy_schema, ScriptedBackend(), beam_k=0).fit()


def test_parser_alpha_tuning(toy_schema, corpus_backend):
    rows = CORPUS + BEAM_HELPS
    X, y = [r[0] for r in rows], [parse_mr(r[5]) for r in rows]
    parser = ZeroShotParser(toy_schema, corpus_backend, beam_k=3, alpha_grid=(0.0, 0.5, 1.0)).fit(X, y)
    # alpha = 0.5 recovers "ring alice" on top of the greedy parses; the extremes do worse
    assert parser.alpha_ == 0.5
    assert parser.validation_accuracy_ == pytest.approx(21 / 22)
    assert parser.score(X, y) == pytest.approx(21 / 22)
    greedy = ZeroShotParser(toy_schema, corpus_backend).fit()
    assert greedy.score(X, y) == pytest.approx(20 / 22)


def test_intent_classifier(toy_schema, corpus_backend):
    clf = IntentClassifier(toy_schema, corpus_backend).fit()
    pred = clf.predict(UTTERANCES)
    assert list(pred) == [row[2] for row in CORPUS]
    assert clf.score(UTTERANCES, [row[2] for row in CORPUS]) == 1.0
    proba = clf.predict_proba(UTTERANCES[:3])
    assert proba.shape == (3, len(toy_schema.intents))
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert list(clf.classes_[proba.argmax(axis=1)]) == list(pred[:3])


def test_intent_classifier_modes(toy_schema):
    backend = ScriptedBackend(scores={build_intent_prompt("x"): {"play music": 0.5}}, default_nll=4.0)
    assert IntentClassifier(toy_schema, backend, mode="constrained").fit().predict(["x"])[0] == "PLAY_MUSIC"
    sim = IntentClassifier(toy_schema, mode="utterance_similarity").fit()
    assert sim.predict(["get weather now"])[0] == "GET_WEATHER"
    with pytest.raises(ValueError):
        IntentClassifier(toy_schema, mode="constrained").fit()


def test_synthesizer(tmp_path):
    path = tmp_path / "squad.json"
    path.write_text(json.dumps(make_squad_v2(30, seed=1)))
    samples = read_squad_v2(path)
    synth = UnanswerableSynthesizer(rng_seed=2)
    with pytest.raises(NotFittedError):
        synth.transform(samples)
    out = synth.fit_transform(samples)
    assert len(out) == 60 and sum(not s.answerable for s in out) == 30
    assert synth.report_.emitted_unanswerable == 30
    assert clone(synth).fit(samples).transform(samples) == out
    removal_only = UnanswerableSynthesizer(strategies=("removal",)).fit(samples).transform(samples)
    assert {s.provenance_strategy for s in removal_only if not s.answerable} == {"removal"}
