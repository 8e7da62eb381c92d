import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iragent.core import TaskType
from iragent.entities import (
    EntityEvalCase,
    RuleBasedExtractor,
    evaluate_extraction,
    extract_entities,
    fuzzy_similarity,
    levenshtein,
    load_cases,
)
from iragent.errors import UnknownTaskType, UnparseableResponse
from iragent.llm import ScriptedBackend, Transcript

from conftest import DATA


class Answering:
    """Replies with a fixed JSON object per question."""

    name = "answering"

    def __init__(self, table):
        self.table = table

    def send(self, messages, cfg):
        q = next(m["content"] for m in messages if m["role"] == "user")
        return json.dumps(self.table[q]), {}


def reply(obj, task):
    return json.dumps({"research_object": obj, "task": task})


def test_well_formed_reply():
    backend = ScriptedBackend(queue=[reply("Pu'er tea", "classification")])
    got = extract_entities(backend, "Where does this Pu'er tea come from?")
    assert got.research_object == "Pu'er tea"
    assert got.task is TaskType.CLASSIFICATION and got.attempts == 1


def test_prose_then_json_needs_two_attempts():
    log = Transcript()
    backend = ScriptedBackend(queue=["Sure! The object is tea.", reply("tea", "regression")])
    got = extract_entities(backend, "Predict caffeine in tea", transcript=log)
    assert got.attempts == 2 and len(log) == 2
    second = backend.calls[1]
    assert second[-2] == {"role": "assistant", "content": "Sure! The object is tea."}


def test_extraction_uses_low_temperature():
    seen = []

    class Spy(ScriptedBackend):
        def send(self, messages, cfg):
            seen.append(cfg.temperature)
            return super().send(messages, cfg)

    extract_entities(Spy(queue=[reply("ink", "classification")]), "Classify ink")
    assert seen == [0.1]


def test_unknown_task_is_not_retried():
    backend = ScriptedBackend(queue=[reply("ink", "clustering"), reply("ink", "classification")])
    with pytest.raises(UnknownTaskType):
        extract_entities(backend, "Cluster the inks")
    assert len(backend.calls) == 1


def test_three_bad_replies_fail():
    backend = ScriptedBackend(queue=["no", "still no", "nope"])
    with pytest.raises(UnparseableResponse):
        extract_entities(backend, "Classify ink")
    assert len(backend.calls) == 3


def test_fenced_json_accepted():
    backend = ScriptedBackend(queue=["```json\n" + reply("COD", "regression") + "\n```"])
    assert extract_entities(backend, "COD?").task is TaskType.REGRESSION


# -- fuzzy matching ------------------------------------------------------------


@pytest.mark.parametrize("a,b", [("Pu'er tea", "pu er tea"), ("ink", "ink"),
                                 ("stamp pad ink", "ink pad stamp"), ("", "")])
def test_fuzzy_full_matches(a, b):
    assert fuzzy_similarity(a, b) == 100


def test_fuzzy_partial_and_empty():
    assert fuzzy_similarity("", "ink") == 0
    # "ink" vs "inks": one insertion over 4 characters
    assert fuzzy_similarity("ink", "inks") == 75
    assert levenshtein("kitten", "sitting") == 3


words = st.text(alphabet="abcde '-", max_size=20)


@settings(max_examples=200, deadline=None)
@given(words, words)
def test_fuzzy_symmetric_and_bounded(a, b):
    s = fuzzy_similarity(a, b)
    assert s == fuzzy_similarity(b, a)
    assert 0 <= s <= 100


# -- evaluation ----------------------------------------------------------------


CASES = [
    EntityEvalCase("Which origin is this tea from?", "Pu'er tea", TaskType.CLASSIFICATION),
    EntityEvalCase("Predict COD of waste water", "waste water COD", TaskType.REGRESSION),
    EntityEvalCase("Is this ink genuine?", "stamp pad ink", TaskType.ANOMALY_DETECTION),
]


def test_evaluate_verbatim_golds():
    table = {c.question: {"research_object": c.gold_object, "task": c.gold_task.value}
             for c in CASES}
    assert evaluate_extraction(Answering(table), CASES) == (100.0, 100.0)


def test_evaluate_empty_answers():
    table = {c.question: {"research_object": "", "task": ""} for c in CASES}
    assert evaluate_extraction(Answering(table), CASES) == (0.0, 0.0)


def test_evaluate_is_deterministic_on_bundled_cases():
    cases = load_cases(DATA / "entity_cases.jsonl")
    assert len(cases) == 100
    a = evaluate_extraction(RuleBasedExtractor(), cases)
    assert a == evaluate_extraction(RuleBasedExtractor(), cases)
    assert all(0 <= v <= 100 for v in a)
