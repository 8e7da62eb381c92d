"""Research-object / task-type extraction from a natural-language question."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .core import TaskType
from .errors import IrAgentError, UnknownTaskType, UnparseableResponse
from .kb import tokenize
from .llm import LlmBackend, LlmConfig, Transcript, complete, for_extraction

MAX_ATTEMPTS = 3
DEFAULT_THRESHOLD = 80

EXTRACTION_PROMPT = """\
You identify two entities in questions about infrared spectral analysis.

research_object: the material, sample or analyte being studied, copied as
written in the question (for example "Pu'er tea", "stamp pad ink",
"waste water COD").
task: exactly one of "classification", "anomaly_detection", "regression".
  - classification: assign samples to categories, origins, brands or grades.
  - anomaly_detection: decide whether a sample belongs to a reference class,
    spot adulterated, counterfeit or abnormal samples.
  - regression: predict a continuous quantity such as a concentration or content.

Reply with a single JSON object and nothing else:
{"research_object": "...", "task": "classification|anomaly_detection|regression"}"""

CORRECTION = (
    "Your reply could not be parsed. Answer again with only the JSON object "
    '{"research_object": "...", "task": "classification|anomaly_detection|regression"}.'
)


@dataclass(frozen=True)
class ExtractedEntities:
    research_object: str
    task: TaskType
    raw_response: str
    attempts: int = 1


@dataclass(frozen=True)
class EntityEvalCase:
    question: str
    gold_object: str
    gold_task: TaskType

    @classmethod
    def from_json(cls, obj: dict) -> "EntityEvalCase":
        if not obj.get("gold_object") or not obj.get("question"):
            raise ValueError("eval cases need a question and a gold object")
        return cls(obj["question"], obj["gold_object"], TaskType.parse(obj["gold_task"]))


def load_cases(path) -> list[EntityEvalCase]:
    return [EntityEvalCase.from_json(json.loads(line))
            for line in Path(path).read_text().splitlines() if line.strip()]


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def extract_json(text: str):
    """Parse a JSON value from a reply, tolerating a surrounding code fence."""
    m = _FENCE.search(text)
    body = (m.group(1) if m else text).strip()
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise UnparseableResponse(f"reply is not valid JSON: {exc}") from None


def parse_entities(text: str) -> tuple[str, TaskType]:
    obj = extract_json(text)
    if not isinstance(obj, dict) or not isinstance(obj.get("research_object"), str) \
            or not isinstance(obj.get("task"), str):
        raise UnparseableResponse("reply lacks string fields research_object and task")
    obj_name = obj["research_object"].strip()
    if not obj_name:
        raise UnparseableResponse("research_object is empty")
    try:
        task = TaskType.parse(obj["task"])
    except ValueError:
        raise UnknownTaskType(f"task {obj['task']!r} is not one of "
                              f"{', '.join(t.value for t in TaskType)}") from None
    return obj_name, task


def extract_entities(backend: LlmBackend, question: str, cfg: LlmConfig | None = None,
                     transcript: Transcript | None = None) -> ExtractedEntities:
    """Ask the model for the research object and task type.

    Malformed replies get up to two reformat requests that quote the bad reply
    back to the model. A task outside the closed vocabulary is an immediate
    :class:`UnknownTaskType`.
    """
    if not question.strip():
        raise ValueError("question must not be empty")
    cfg = for_extraction(cfg or LlmConfig())
    messages = [
        {"role": "system", "content": EXTRACTION_PROMPT},
        {"role": "user", "content": question},
    ]
    last: UnparseableResponse | None = None
    for attempt in range(1, MAX_ATTEMPTS + 1):
        ex = complete(cfg, messages, backend, transcript, tag=f"extract:{attempt}")
        try:
            obj_name, task = parse_entities(ex.response)
        except UnparseableResponse as exc:
            last = exc
            messages = messages + [
                {"role": "assistant", "content": ex.response},
                {"role": "user", "content": CORRECTION},
            ]
            continue
        return ExtractedEntities(obj_name, task, ex.response, attempt)
    raise UnparseableResponse(f"no parseable reply after {MAX_ATTEMPTS} attempts: {last}")


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _norm(s: str) -> str:
    return " ".join(sorted(tokenize(s)))


def fuzzy_similarity(a: str, b: str) -> int:
    """Token-sort edit similarity in [0, 100]."""
    na, nb = _norm(a), _norm(b)
    if not na and not nb:
        return 100
    if not na or not nb:
        return 0
    return round(100 * (1 - levenshtein(na, nb) / max(len(na), len(nb))))


def evaluate_extraction(backend: LlmBackend, cases: Sequence[EntityEvalCase],
                        threshold: int = DEFAULT_THRESHOLD, cfg: LlmConfig | None = None,
                        transcript: Transcript | None = None) -> tuple[float, float]:
    """Percent of cases with a fuzzy-matching object and an exactly matching task.

    A case whose extraction raises counts as wrong on both entities.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("no evaluation cases")
    obj_ok = task_ok = 0
    for case in cases:
        try:
            got = extract_entities(backend, case.question, cfg, transcript)
        except IrAgentError:
            continue
        obj_ok += fuzzy_similarity(got.research_object, case.gold_object) >= threshold
        task_ok += got.task is case.gold_task
    return 100.0 * obj_ok / len(cases), 100.0 * task_ok / len(cases)


_TASK_CUES = (
    (TaskType.ANOMALY_DETECTION, ("anomal", "adulterat", "counterfeit", "abnormal", "outlier",
                                  "authentic", "belong", "fake", "genuine")),
    (TaskType.REGRESSION, ("predict", "concentration", "content", "quantif", "estimate",
                           "how much", "level of", "cod", "amount")),
    (TaskType.CLASSIFICATION, ("classif", "origin", "brand", "distinguish", "discriminat",
                               "categor", "identify", "which", "grade", "type")),
)
_PHRASE = re.compile(
    r"\b(?:of|for|between|among|from|on|in|this|these)\s+"
    r"(?:(?:the|different|several|a|their)\s+)*"
    r"(.+?)(?=\s+(?:samples?|spectra|specimens?|using|by|with|from|based|into|according|of|in)\b"
    r"|[?.,;]|$)",
    re.I,
)
_SAMPLE_WORD = re.compile(r"^(?:samples?|spectra|specimens?)$", re.I)
# words that never belong to a research object in these questions
_NOT_OBJECT = frozenset("""
    the a an of for in from on by with using this these each whether their between among
    detect classify identify predict estimate quantify find decide distinguish discriminate
    adulterated counterfeit abnormal outlier genuine different several
    nir uv vis infrared near mid spectroscopy spectra spectrum measurements
""".split())


def _guess_object(question: str) -> str:
    words = question.strip().rstrip("?.").split()
    # 1. the noun phrase right before "samples" / "spectra"
    for k, w in enumerate(words):
        if _SAMPLE_WORD.match(w):
            picked = []
            for prev in reversed(words[:k]):
                if prev.lower() in _NOT_OBJECT:
                    break
                picked.append(prev)
            if picked:
                return " ".join(reversed(picked))
            break
    # 2. the last prepositional phrase that carries a content word
    phrases = [m.group(1).strip() for m in _PHRASE.finditer(question)]
    phrases = [p for p in phrases if any(w.lower() not in _NOT_OBJECT for w in p.split())]
    return phrases[-1] if phrases else question.strip().rstrip("?.")


class RuleBasedExtractor:
    """Offline stand-in for the extraction model: keyword cues pick the task and
    a couple of phrase heuristics pick the research object."""

    name = "rule-mock"

    def __init__(self):
        self.calls: list[list[dict]] = []

    @staticmethod
    def guess(question: str) -> dict:
        low = question.lower()
        task = TaskType.CLASSIFICATION
        for candidate, cues in _TASK_CUES:
            if any(c in low for c in cues):
                task = candidate
                break
        return {"research_object": _guess_object(question), "task": task.value}

    def send(self, messages, cfg):
        self.calls.append(messages)
        question = next(m["content"] for m in messages if m["role"] == "user")
        return json.dumps(self.guess(question)), {}
