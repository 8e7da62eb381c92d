"""Multi-turn few-shot inference over feature vectors.

Each round sends the exemplar set (training samples plus hard samples from
earlier rounds, with true labels) and the whole validation subset as queries.
Mispredicted validation samples are appended to the exemplars for the next
round. The test subset is queried once, with the final exemplar set, after the
loop stops.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import FeatureMatrix, Split, TaskType, split_indices
from .entities import extract_json
from .errors import (
    BudgetExceeded,
    ConstantTruth,
    DuplicateIds,
    IdMismatch,
    IrAgentError,
    MissingIds,
    SingleClass,
    UnexpectedIds,
    UnparseableResponse,
)
from .llm import LlmBackend, LlmConfig, Transcript, complete, estimate_tokens

NORMAL, ANOMALOUS = "normal", "anomalous"
PRIMARY_METRIC = {
    TaskType.CLASSIFICATION: "accuracy",
    TaskType.ANOMALY_DETECTION: "auc",
    TaskType.REGRESSION: "r2",
}
REFORMAT = (
    "Your reply could not be used ({problem}). Reply again with only the JSON "
    "array described in the instructions, one object per query id."
)


@dataclass(frozen=True)
class ReasoningConfig:
    max_rounds: int = 5
    delta: float = 0.01
    hard_sample_cap: int = 10
    top_k: int = 5
    epsilon: str | float = "rmse"
    convergence: str = "signed"
    temperature: float = 0.5
    repeats: int = 10
    seed: int = 0
    split_ratio: tuple = (4, 2, 2)
    parse_attempts: int = 3

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.hard_sample_cap < 1 or self.top_k < 1:
            raise ValueError("hard-sample caps must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.convergence not in ("signed", "absolute"):
            raise ValueError("convergence must be 'signed' or 'absolute'")
        if self.epsilon != "rmse" and not (isinstance(self.epsilon, (int, float)) and self.epsilon >= 0):
            raise ValueError("epsilon must be 'rmse' or a non-negative number")
        if self.parse_attempts < 1:
            raise ValueError("parse_attempts must be >= 1")
        object.__setattr__(self, "split_ratio", tuple(self.split_ratio))

    def to_json(self) -> dict:
        out = asdict(self)
        out["split_ratio"] = list(self.split_ratio)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "ReasoningConfig":
        return cls(**obj)


def converged(metric: float, previous: float, cfg: ReasoningConfig) -> bool:
    """The stopping inequality: improvement below ``delta``.

    With ``convergence='signed'`` a drop in the metric also stops the loop;
    ``'absolute'`` compares ``|change|`` instead.
    """
    change = metric - previous
    if cfg.convergence == "absolute":
        change = abs(change)
    return change < cfg.delta


# -- prompt construction -------------------------------------------------------------


def _fmt(x: float) -> str:
    s = f"{x:.6g}"
    return "0" if s == "-0" else s


def _label_text(task: TaskType, target) -> str:
    if task is TaskType.ANOMALY_DETECTION:
        return NORMAL if target else ANOMALOUS
    if task is TaskType.REGRESSION:
        return _fmt(float(target))
    return str(target)


_SCHEMA = {
    TaskType.CLASSIFICATION: (
        'Reply with only a JSON array holding one object per query sample: '
        '[{"id": "<id>", "label": "<class>"}, ...]. Use one of the allowed labels.'
    ),
    TaskType.REGRESSION: (
        'Reply with only a JSON array holding one object per query sample: '
        '[{"id": "<id>", "value": <number>}, ...].'
    ),
    TaskType.ANOMALY_DETECTION: (
        'Reply with only a JSON array holding one object per query sample: '
        '[{"id": "<id>", "flag": <true|false>, "score": <number in [0, 1]>}, ...]. '
        '"flag" is true when the sample conforms to the normal class and false '
        'when it is anomalous; "score" is your confidence that the sample is '
        "anomalous (higher means more anomalous). Both fields are required."
    ),
}

_GOAL = {
    TaskType.CLASSIFICATION: "assign each query sample to one of the classes seen in the examples",
    TaskType.REGRESSION: "predict the continuous target value of each query sample",
    TaskType.ANOMALY_DETECTION: "decide whether each query sample is normal or anomalous",
}


def build_prompt(task, features: FeatureMatrix, exemplars: Mapping[str, object],
                 queries: Sequence[str], feature_names: Sequence[str] | None = None,
                 context: str = "", budget: int | None = None) -> list[dict]:
    """Messages for one round.

    ``exemplars`` maps sample id to its true target (class, normal flag or value),
    in prompt order. Query rows carry no label. Raises :class:`BudgetExceeded`
    when ``budget`` is given and the estimated token count exceeds it.
    """
    task = TaskType.parse(task)
    if not exemplars:
        raise ValueError("at least one exemplar is required")
    names = list(feature_names or features.feature_names)
    if len(names) != features.dim:
        raise ValueError(f"{len(names)} feature names for {features.dim} features")
    pos = {i: k for k, i in enumerate(features.ids)}

    def row(sid: str) -> str:
        if sid not in pos:
            raise KeyError(f"no feature row for sample {sid!r}")
        return ",".join(_fmt(v) for v in features.rows[pos[sid]])

    system = [
        "You are a spectral analysis assistant working from extracted spectral features.",
        f"Task: {task.value}",
        f"Goal: {_GOAL[task]}.",
        f"Each sample is described by {len(names)} features ({', '.join(names)}).",
    ]
    if context:
        system.append(f"Feature semantics: {context}")
    if task is TaskType.CLASSIFICATION:
        classes = sorted({str(v) for v in exemplars.values()})
        system.append(f"Allowed labels: {', '.join(classes)}")
    if task is TaskType.ANOMALY_DETECTION:
        system.append(f"Example labels are '{NORMAL}' or '{ANOMALOUS}'.")
    system.append(f"Output: {_SCHEMA[task]}")

    user = ["Labelled examples (id | features | label):"]
    user += [f"{sid} | {row(sid)} | {_label_text(task, y)}" for sid, y in exemplars.items()]
    user += ["", "Query samples (id | features):"]
    user += [f"{sid} | {row(sid)}" for sid in queries]
    messages = [
        {"role": "system", "content": "\n".join(system)},
        {"role": "user", "content": "\n".join(user)},
    ]
    if budget is not None:
        est = estimate_tokens(messages)
        if est > budget:
            raise BudgetExceeded(est, budget)
    return messages


# -- reply parsing -------------------------------------------------------------------


@dataclass(frozen=True)
class AnomalyPrediction:
    flag: bool
    score: float


def _bool(v, sid):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.strip().lower() in ("true", "false"):
        return v.strip().lower() == "true"
    raise UnparseableResponse(f"sample {sid!r}: flag must be a boolean, got {v!r}")


def _number(v, sid, what):
    if isinstance(v, bool):
        raise UnparseableResponse(f"sample {sid!r}: {what} must be a number")
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise UnparseableResponse(f"sample {sid!r}: {what} must be a number, got {v!r}") from None
    if not math.isfinite(x):
        raise UnparseableResponse(f"sample {sid!r}: {what} is not finite")
    return x


def parse_predictions(task, response: str, expected_ids: Sequence[str]) -> dict:
    """Predictions keyed by id, in ``expected_ids`` order.

    Classification gives label strings, regression floats, anomaly detection
    :class:`AnomalyPrediction` (score falls back to the flag when omitted and is
    clamped into [0, 1] with a warning).
    """
    task = TaskType.parse(task)
    obj = extract_json(response)
    if isinstance(obj, dict) and isinstance(obj.get("predictions"), list):
        obj = obj["predictions"]
    if not isinstance(obj, list) or not all(isinstance(o, dict) for o in obj):
        raise UnparseableResponse("reply must be a JSON array of objects")
    expected = [str(i) for i in expected_ids]
    wanted = set(expected)
    got: dict = {}
    dups, extra = [], []
    for o in obj:
        if "id" not in o:
            raise UnparseableResponse(f"prediction without id: {o!r}")
        sid = str(o["id"])
        if sid in got:
            dups.append(sid)
            continue
        if sid not in wanted:
            extra.append(sid)
            continue
        if task is TaskType.CLASSIFICATION:
            if "label" not in o or isinstance(o["label"], (dict, list)) or o["label"] is None:
                raise UnparseableResponse(f"sample {sid!r}: missing label")
            got[sid] = str(o["label"])
        elif task is TaskType.REGRESSION:
            got[sid] = _number(o.get("value"), sid, "value")
        else:
            if "flag" not in o:
                raise UnparseableResponse(f"sample {sid!r}: missing flag")
            flag = _bool(o["flag"], sid)
            if o.get("score") is None:
                score = 0.0 if flag else 1.0
            else:
                score = _number(o["score"], sid, "score")
                if not 0.0 <= score <= 1.0:
                    warnings.warn(f"sample {sid!r}: score {score} clamped into [0, 1]", stacklevel=2)
                    score = min(1.0, max(0.0, score))
            got[sid] = AnomalyPrediction(flag, score)
    if dups:
        raise DuplicateIds(sorted(set(dups)))
    missing = [i for i in expected if i not in got]
    if missing:
        raise MissingIds(missing)
    if extra:
        raise UnexpectedIds(sorted(extra))
    return {i: got[i] for i in expected}


# -- metrics -------------------------------------------------------------------------


def _aligned(preds, truth) -> tuple[list, list]:
    if isinstance(preds, Mapping) != isinstance(truth, Mapping):
        raise IdMismatch("predictions and truth must both be mappings or both sequences")
    if isinstance(preds, Mapping):
        if set(preds) != set(truth):
            raise IdMismatch(
                f"prediction ids {sorted(set(preds) ^ set(truth))[:5]} do not match truth"
            )
        keys = list(truth)
        return [preds[k] for k in keys], [truth[k] for k in keys]
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise IdMismatch(f"{len(preds)} predictions for {len(truth)} truths")
    return preds, truth


def accuracy(preds, truth) -> float:
    p, t = _aligned(preds, truth)
    if not t:
        raise IdMismatch("no samples to score")
    return sum(a == b for a, b in zip(p, t)) / len(t)


def auc(scores, positives) -> float:
    """Pairwise AUC with half credit for tied scores.

    ``positives`` marks the positive (anomalous) samples; a higher score should
    mean more likely positive.
    """
    s, y = _aligned(scores, positives)
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise SingleClass("AUC needs at least one positive and one negative sample")
    diff = pos[:, None] - neg[None, :]
    wins = int(np.count_nonzero(diff > 0))
    ties = int(np.count_nonzero(diff == 0))
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def r_squared(preds, truth) -> float:
    p, t = _aligned(preds, truth)
    if len(t) < 2:
        raise ConstantTruth("R² needs at least two samples")
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0:
        raise ConstantTruth("truth values are constant")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def rmse(preds, truth) -> float:
    p, t = _aligned(preds, truth)
    if not t:
        raise IdMismatch("no samples to score")
    r = np.asarray(p, dtype=float) - np.asarray(t, dtype=float)
    return math.sqrt(float(np.mean(r * r)))


def anomaly_precision(flags, truth_flags) -> float:
    """Share of predicted anomalies (flag False) that are true anomalies; 0 if none predicted."""
    p, t = _aligned(flags, truth_flags)
    predicted = [b for a, b in zip(p, t) if not a]
    return sum(not b for b in predicted) / len(predicted) if predicted else 0.0


def _scores(preds: Mapping) -> dict:
    return {k: v.score for k, v in preds.items()}


def primary_metric(task: TaskType, preds: Mapping, truth: Mapping) -> float:
    if task is TaskType.CLASSIFICATION:
        return accuracy(preds, truth)
    if task is TaskType.REGRESSION:
        return r_squared(preds, truth)
    return auc(_scores(preds), {k: not v for k, v in truth.items()})


def final_metrics(task: TaskType, preds: Mapping, truth: Mapping) -> dict:
    if task is TaskType.CLASSIFICATION:
        return {"accuracy": accuracy(preds, truth)}
    if task is TaskType.REGRESSION:
        return {"r2": r_squared(preds, truth), "rmse": rmse(preds, truth)}
    return {
        "auc": auc(_scores(preds), {k: not v for k, v in truth.items()}),
        "precision": anomaly_precision({k: v.flag for k, v in preds.items()}, truth),
    }


# -- hard samples --------------------------------------------------------------------


@dataclass
class TurnState:
    round: int
    exemplar_ids: list
    predictions: dict
    metric: float
    hard_ids: list = field(default_factory=list)
    exchanges: list = field(default_factory=list)  # transcript indices

    def to_json(self, task: TaskType) -> dict:
        if task is TaskType.ANOMALY_DETECTION:
            preds = {k: {"flag": v.flag, "score": v.score} for k, v in self.predictions.items()}
        else:
            preds = dict(self.predictions)
        return {
            "round": self.round,
            "exemplar_ids": list(self.exemplar_ids),
            "predictions": preds,
            "metric": self.metric,
            "hard_ids": list(self.hard_ids),
            "exchanges": list(self.exchanges),
        }


def select_hard_samples(task, turn: TurnState, truth: Mapping, cfg: ReasoningConfig) -> list[str]:
    """Validation ids to append to the next round's exemplars."""
    task = TaskType.parse(task)
    taken = set(turn.exemplar_ids)
    preds = {k: v for k, v in turn.predictions.items() if k not in taken}
    if task is TaskType.CLASSIFICATION:
        wrong = [k for k, v in preds.items() if v != truth[k]]
        return sorted(wrong, reverse=True)[: cfg.hard_sample_cap]
    if task is TaskType.REGRESSION:
        if cfg.epsilon == "rmse":
            eps = rmse(turn.predictions, {k: truth[k] for k in turn.predictions})
        else:
            eps = float(cfg.epsilon)
        res = {k: abs(float(v) - float(truth[k])) for k, v in preds.items()}
        over = [k for k, r in res.items() if r > eps]
        over.sort(key=lambda k: (-res[k], k))
        return over[: cfg.top_k]
    # anomaly: count misordered (anomaly, normal) pairs each sample takes part in
    ids = list(turn.predictions)
    score = {k: turn.predictions[k].score for k in ids}
    anomalies = [k for k in ids if not truth[k]]
    normals = [k for k in ids if truth[k]]
    count = dict.fromkeys(ids, 0)
    for a in anomalies:
        for n in normals:
            if score[a] <= score[n]:
                count[a] += 1
                count[n] += 1
    ranked = [k for k in ids if count[k] > 0 and k not in taken]
    ranked.sort(key=lambda k: (-count[k], k))
    return ranked[: cfg.top_k]


# -- the nearest-neighbour responder -------------------------------------------------


class NearestNeighborBackend:
    """Deterministic offline responder that reads the prompt like a model would.

    It parses the exemplar and query lines of the first user message and answers
    by 1-NN (class, anomaly flag), inverse-distance 3-NN (regression) and the
    normalised nearest-neighbour distance ``d_normal / (d_normal + d_anomalous)``
    (anomaly score).
    """

    name = "knn-mock"

    def __init__(self):
        self.calls: list[list[dict]] = []

    @staticmethod
    def _parse(messages):
        task = None
        for line in messages[0]["content"].splitlines():
            if line.startswith("Task: "):
                task = TaskType.parse(line[6:].strip())
        user = next(m["content"] for m in messages if m["role"] == "user")
        ex, qs = [], []
        section = None
        for line in user.splitlines():
            if line.startswith("Labelled examples"):
                section = ex
                continue
            if line.startswith("Query samples"):
                section = qs
                continue
            parts = line.split(" | ")
            if section is ex and len(parts) == 3:
                ex.append((parts[0], [float(v) for v in parts[1].split(",")], parts[2]))
            elif section is qs and len(parts) == 2:
                qs.append((parts[0], [float(v) for v in parts[1].split(",")]))
        return task, ex, qs

    def send(self, messages, cfg):
        self.calls.append(messages)
        task, ex, qs = self._parse(messages)
        if task is None or not ex:
            return "I cannot find the task or the examples.", {}
        E = np.array([v for _, v, _ in ex])
        labels = [lab for _, _, lab in ex]
        out = []
        for sid, q in qs:
            d = np.sqrt(np.sum((E - np.asarray(q)) ** 2, axis=1))
            nearest = int(np.argmin(d))
            if task is TaskType.CLASSIFICATION:
                out.append({"id": sid, "label": labels[nearest]})
            elif task is TaskType.REGRESSION:
                y = np.array([float(v) for v in labels])
                order = np.argsort(d, kind="stable")[:3]
                if d[order[0]] == 0:
                    value = float(y[order[0]])
                else:
                    w = 1.0 / d[order]
                    value = float(np.sum(w * y[order]) / np.sum(w))
                out.append({"id": sid, "value": value})
            else:
                normal = np.array([lab == NORMAL for lab in labels])
                dn = float(d[normal].min()) if normal.any() else math.inf
                da = float(d[~normal].min()) if (~normal).any() else math.inf
                if math.isinf(dn):
                    score = 1.0
                elif math.isinf(da):
                    score = dn / (dn + 1.0)
                elif dn + da == 0:
                    score = 0.5
                else:
                    score = dn / (dn + da)
                out.append({"id": sid, "flag": labels[nearest] == NORMAL, "score": score})
        return json.dumps(out), {}


# -- the loop ------------------------------------------------------------------------


class HeldOutTruth(Mapping):
    """Truth lookup that refuses held-out ids until :meth:`release` is called.

    Guards the test partition against use inside the reasoning loop.
    """

    def __init__(self, truth: Mapping, held_out: Sequence[str]):
        self._truth = truth
        self._held = set(held_out)
        self.released = False

    def release(self) -> None:
        self.released = True

    def __getitem__(self, key):
        if key in self._held and not self.released:
            raise AssertionError(f"held-out sample {key!r} accessed before the loop finished")
        return self._truth[key]

    def __iter__(self):
        return (k for k in self._truth if self.released or k not in self._held)

    def __len__(self):
        return sum(1 for _ in self)


@dataclass
class RepeatResult:
    repeat: int
    seed: int
    split: dict
    turns: list = field(default_factory=list)
    convergence_round: int | None = None
    stop_reason: str = ""
    final_exemplar_ids: list = field(default_factory=list)
    test_predictions: dict = field(default_factory=dict)
    test_metrics: dict = field(default_factory=dict)
    failed: bool = False
    error: str = ""

    def to_json(self, task: TaskType) -> dict:
        if task is TaskType.ANOMALY_DETECTION:
            tp = {k: {"flag": v.flag, "score": v.score} for k, v in self.test_predictions.items()}
        else:
            tp = dict(self.test_predictions)
        return {
            "repeat": self.repeat,
            "seed": self.seed,
            "split": self.split,
            "failed": self.failed,
            "error": self.error,
            "stop_reason": self.stop_reason,
            "convergence_round": self.convergence_round,
            "turns": [t.to_json(task) for t in self.turns],
            "final_exemplar_ids": list(self.final_exemplar_ids),
            "test_predictions": tp,
            "test_metrics": self.test_metrics,
        }


def _mean_std(values: Sequence[float]) -> dict:
    """Mean and sample standard deviation (0 for a single value)."""
    v = [float(x) for x in values]
    if not v:
        return {"mean": None, "std": None, "n": 0}
    std = statistics.stdev(v) if len(v) > 1 else 0.0
    return {"mean": statistics.fmean(v), "std": std, "n": len(v)}


@dataclass
class RunReport:
    task: TaskType
    config: ReasoningConfig
    features_digest: str
    repeats: list
    label: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def metric_name(self) -> str:
        return PRIMARY_METRIC[self.task]

    def values(self, metric: str) -> list[float]:
        return [r.test_metrics[metric] for r in self.repeats if not r.failed]

    @property
    def aggregate(self) -> dict:
        ok = [r for r in self.repeats if not r.failed]
        names = list(ok[0].test_metrics) if ok else []
        return {m: _mean_std(self.values(m)) for m in names}

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.repeats)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "label": self.label,
            "task": self.task.value,
            "metric": self.metric_name,
            "config": self.config.to_json(),
            "features_digest": self.features_digest,
            "metadata": self.metadata,
            "repeats": [r.to_json(self.task) for r in self.repeats],
            "failed_repeats": self.n_failed,
            "aggregate": self.aggregate,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "repeat", "round", "metric", "value"])
        for r in self.repeats:
            for t in r.turns:
                w.writerow(["round", r.repeat, t.round, f"validation_{self.metric_name}", repr(t.metric)])
            for m, v in r.test_metrics.items():
                w.writerow(["final", r.repeat, r.convergence_round or "", m, repr(v)])
            if r.failed:
                w.writerow(["failed", r.repeat, "", "error", r.error])
        for m, agg in self.aggregate.items():
            w.writerow(["aggregate_mean", "", "", m, repr(agg["mean"])])
            w.writerow(["aggregate_std", "", "", m, repr(agg["std"])])
        return buf.getvalue()


def _truth_targets(task: TaskType, truth: Mapping, ids: Sequence[str]) -> list:
    return [truth[i] for i in ids]


@dataclass
class _Loop:
    task: TaskType
    features: FeatureMatrix
    backend: LlmBackend
    cfg: ReasoningConfig
    llm: LlmConfig
    transcript: Transcript | None
    context: str
    on_event: Callable | None

    def event(self, *args):
        if self.on_event is not None:
            self.on_event(*args)

    def prompt(self, exemplars: dict, queries: Sequence[str]) -> list[dict]:
        return build_prompt(self.task, self.features, exemplars, queries,
                            context=self.context, budget=self.llm.prompt_budget)

    def ask(self, messages: list[dict], ids: Sequence[str], tag: str) -> tuple[dict, list[int]]:
        refs = []
        problem = None
        for attempt in range(1, self.cfg.parse_attempts + 1):
            ex = complete(self.llm, messages, self.backend, self.transcript, tag=f"{tag}:{attempt}")
            if self.transcript is not None:
                refs.append(len(self.transcript) - 1)
            try:
                return parse_predictions(self.task, ex.response, ids), refs
            except (UnparseableResponse, MissingIds, DuplicateIds, UnexpectedIds) as exc:
                problem = exc
                messages = messages + [
                    {"role": "assistant", "content": ex.response},
                    {"role": "user", "content": REFORMAT.format(problem=exc)},
                ]
        raise UnparseableResponse(
            f"{tag}: no usable reply after {self.cfg.parse_attempts} attempts: {problem}"
        )

    def fit_budget(self, train: list[str], truth: Mapping, queries: list[str], seed: int) -> list[str]:
        """Training exemplars, deterministically subsampled if the prompt is over budget."""
        try:
            self.prompt({i: truth[i] for i in train}, queries)
            return train
        except BudgetExceeded:
            pass
        order = [train[k] for k in np.random.default_rng(seed).permutation(len(train))]
        lo, hi = 0, len(order)  # largest prefix that fits
        while lo < hi:
            mid = (lo + hi + 1) // 2
            keep = set(order[:mid])
            try:
                self.prompt({i: truth[i] for i in train if i in keep}, queries)
                lo = mid
            except BudgetExceeded:
                hi = mid - 1
        if lo == 0:
            raise BudgetExceeded(estimate_tokens(self.prompt_noguard(train[:1], truth, queries)),
                                 self.llm.prompt_budget)
        keep = set(order[:lo])
        warnings.warn(f"prompt over budget: using {lo} of {len(train)} training exemplars",
                      stacklevel=3)
        return [i for i in train if i in keep]

    def prompt_noguard(self, ids, truth, queries):
        return build_prompt(self.task, self.features, {i: truth[i] for i in ids}, queries,
                            context=self.context)

    def run(self, repeat: int, seed: int, split: Split, truth: Mapping) -> RepeatResult:
        ids = self.features.ids
        train = [ids[i] for i in split.train]
        val = [ids[i] for i in split.validation]
        test = [ids[i] for i in split.test]
        result = RepeatResult(repeat, seed, {"train": train, "validation": val, "test": test})
        guarded = HeldOutTruth(truth, test)

        base = self.fit_budget(train, guarded, val, seed)
        hard: list[str] = []
        prev = None
        for t in range(1, self.cfg.max_rounds + 1):
            while True:
                exemplar_ids = base + hard
                try:
                    messages = self.prompt({i: guarded[i] for i in exemplar_ids}, val)
                    break
                except BudgetExceeded:
                    if not hard:
                        raise
                    hard.pop(0)  # oldest hard samples go first
            self.event("round", repeat, t)
            try:
                preds, refs = self.ask(messages, val, f"repeat{repeat}:round{t}")
            except IrAgentError as exc:
                exc.round = t
                raise
            val_truth = {i: guarded[i] for i in val}
            metric = primary_metric(self.task, preds, val_truth)
            turn = TurnState(t, list(exemplar_ids), preds, metric, [], refs)
            turn.hard_ids = select_hard_samples(self.task, turn, guarded, self.cfg)
            result.turns.append(turn)
            if prev is not None and converged(metric, prev, self.cfg):
                result.stop_reason = "converged"
                break
            if not turn.hard_ids:
                result.stop_reason = "no_hard_samples"
                break
            if t == self.cfg.max_rounds:
                result.stop_reason = "max_rounds"
                break
            hard.extend(turn.hard_ids)
            prev = metric
        result.convergence_round = len(result.turns)
        result.final_exemplar_ids = list(result.turns[-1].exemplar_ids)

        guarded.release()
        self.event("test", repeat, None)
        messages = self.prompt({i: truth[i] for i in result.final_exemplar_ids}, test)
        preds, _ = self.ask(messages, test, f"repeat{repeat}:test")
        result.test_predictions = preds
        result.test_metrics = final_metrics(self.task, preds, {i: truth[i] for i in test})
        return result


def _describe(exc: Exception) -> str:
    where = f"round {exc.round}: " if hasattr(exc, "round") else ""
    return f"{where}{type(exc).__name__}: {exc}"


def run_multi_turn(task, features: FeatureMatrix, split: Split | None, truth: Mapping,
                   backend: LlmBackend, cfg: ReasoningConfig | None = None, *,
                   llm: LlmConfig | None = None, transcript: Transcript | None = None,
                   context: str = "", label: str = "",
                   on_event: Callable | None = None) -> RunReport:
    """Run ``cfg.repeats`` repeats of the multi-turn protocol.

    Repeat ``r`` uses seed ``cfg.seed + r``. With ``split=None`` each repeat
    draws its own stratified split from that seed; a given split is reused for
    every repeat. A repeat that raises is recorded as failed.
    """
    task = TaskType.parse(task)
    cfg = cfg or ReasoningConfig()
    llm = replace(llm or LlmConfig(), temperature=cfg.temperature)
    missing = [i for i in features.ids if i not in truth]
    if missing:
        raise IdMismatch(f"no truth for feature rows {missing[:5]}")
    loop = _Loop(task, features, backend, cfg, llm, transcript, context, on_event)
    targets = _truth_targets(task, truth, features.ids)
    repeats = []
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        sp = split if split is not None else split_indices(task, targets, cfg.split_ratio, seed)
        try:
            repeats.append(loop.run(r, seed, sp, truth))
        except IrAgentError as exc:
            ids = features.ids
            repeats.append(RepeatResult(
                r, seed,
                {"train": [ids[i] for i in sp.train], "validation": [ids[i] for i in sp.validation],
                 "test": [ids[i] for i in sp.test]},
                failed=True, error=_describe(exc),
            ))
    return RunReport(task, cfg, features.digest(), repeats, label or
                     ("LLM(single)" if cfg.max_rounds == 1 else "LLM(multi)"))


def single_turn(task, features: FeatureMatrix, split: Split | None, truth: Mapping,
                backend: LlmBackend, cfg: ReasoningConfig | None = None, **kwargs) -> RunReport:
    cfg = replace(cfg or ReasoningConfig(), max_rounds=1)
    return run_multi_turn(task, features, split, truth, backend, cfg, **kwargs)


def report_from_json(obj: Mapping) -> RunReport:
    """Rebuild a report written by :meth:`RunReport.to_json`."""
    task = TaskType.parse(obj["task"])

    def preds(d):
        if task is TaskType.ANOMALY_DETECTION:
            return {k: AnomalyPrediction(v["flag"], v["score"]) for k, v in d.items()}
        return dict(d)

    repeats = []
    for r in obj["repeats"]:
        turns = [TurnState(t["round"], t["exemplar_ids"], preds(t["predictions"]), t["metric"],
                           t["hard_ids"], t["exchanges"]) for t in r["turns"]]
        repeats.append(RepeatResult(
            r["repeat"], r["seed"], r["split"], turns, r["convergence_round"], r["stop_reason"],
            r["final_exemplar_ids"], preds(r["test_predictions"]), r["test_metrics"],
            r["failed"], r["error"],
        ))
    cfg = ReasoningConfig.from_json(obj["config"])
    return RunReport(task, cfg, obj["features_digest"], repeats, obj.get("label", ""),
                     obj.get("metadata", {}))
