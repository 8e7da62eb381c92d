"""Literature knowledge base and lexical retrieval (bag-of-words, BM25, TF-IDF)."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EmptyCorpus, NoResolvablePlan, ParseError
from .features import FeatureSpec
from .preprocess import MethodPlan, PreprocessStep, resolve_step

ENGINES = ("BoW", "BM25", "TFIDF")
BM25_K1 = 1.5
BM25_B = 0.75
INDEX_MAGIC = b"SKB1"
INDEX_VERSION = 1

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop 1-character tokens."""
    return [t for t in _TOKEN.findall(text.lower()) if len(t) >= 2]


@dataclass(frozen=True)
class KbRecord:
    id: str
    material_focus: str
    technique: str = ""
    wavelength_bands: str = ""
    best_preprocessing: tuple = ()
    best_feature: dict = field(default_factory=dict)
    model_architecture: str = ""
    citation: str = ""

    def __post_init__(self):
        object.__setattr__(self, "best_preprocessing", tuple(self.best_preprocessing))
        object.__setattr__(self, "best_feature", dict(self.best_feature))

    @property
    def indexed_text(self) -> str:
        return " ".join((self.material_focus, self.technique, self.wavelength_bands))

    def to_json(self) -> dict:
        out = asdict(self)
        out["best_preprocessing"] = list(self.best_preprocessing)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "KbRecord":
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ParseError(f"bad knowledge-base record: {exc}") from None

    def plan(self) -> MethodPlan:
        """The record's preprocessing chain and feature extractor as a plan."""
        try:
            steps = [resolve_step(tok) if isinstance(tok, str) else PreprocessStep.from_json(tok)
                     for tok in self.best_preprocessing]
            feature = FeatureSpec.from_json(self.best_feature)
        except (ValueError, KeyError, TypeError) as exc:
            raise NoResolvablePlan(f"record {self.id!r}: {exc}") from None
        return MethodPlan(tuple(steps), feature, (self.id,))


def load_kb(path) -> list[KbRecord]:
    records = []
    seen = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = KbRecord.from_json(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if rec.id in seen:
            raise ParseError(f"{path}:{lineno}: duplicate record id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def save_kb(records: Iterable[KbRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def _engine_name(engine: str) -> str:
    key = engine.replace("-", "").lower()
    for name in ENGINES:
        if name.lower() == key:
            return name
    raise ValueError(f"unknown retrieval engine {engine!r}; choose from {', '.join(ENGINES)}")


@dataclass(eq=False)
class KbIndex:
    engine: str
    doc_ids: list
    term_freqs: list            # one {term: count} per document
    doc_freqs: dict
    doc_lengths: list
    avg_doc_length: float
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.engine = _engine_name(self.engine)
        n = len(self.doc_ids)
        self._norms = []
        for tf in self.term_freqs:
            if self.engine == "TFIDF":
                self._norms.append(math.sqrt(sum((c * self.idf(t)) ** 2 for t, c in tf.items())))
            else:
                self._norms.append(math.sqrt(sum(c * c for c in tf.values())))
        if any(df > n for df in self.doc_freqs.values()):
            raise ParseError("document frequency exceeds corpus size")

    @property
    def vocabulary(self) -> list[str]:
        return sorted(self.doc_freqs)

    def __len__(self) -> int:
        return len(self.doc_ids)

    def idf(self, term: str) -> float:
        n = len(self.doc_ids)
        df = self.doc_freqs.get(term, 0)
        if self.engine == "BM25":
            return math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        return math.log((n + 1) / (df + 1)) + 1.0

    def scores(self, text: str) -> list[float]:
        q = Counter(tokenize(text))
        terms = sorted(t for t in q if t in self.doc_freqs)
        out = [0.0] * len(self.doc_ids)
        if not terms:
            return out
        if self.engine == "BM25":
            for i, tf in enumerate(self.term_freqs):
                norm = BM25_K1 * (1 - BM25_B + BM25_B * self.doc_lengths[i] / self.avg_doc_length)
                s = 0.0
                for t in terms:
                    f = tf.get(t, 0)
                    if f:
                        s += q[t] * self.idf(t) * f * (BM25_K1 + 1) / (f + norm)
                out[i] = s
            return out
        if self.engine == "TFIDF":
            qw = {t: q[t] * self.idf(t) for t in terms}
            qn = math.sqrt(sum(w * w for w in qw.values()))
            for i, tf in enumerate(self.term_freqs):
                dot = sum(qw[t] * tf.get(t, 0) * self.idf(t) for t in terms)
                if dot:
                    out[i] = dot / (qn * self._norms[i])
            return out
        qn = math.sqrt(sum(c * c for c in q.values()))
        for i, tf in enumerate(self.term_freqs):
            dot = sum(q[t] * tf.get(t, 0) for t in terms)
            if dot:
                out[i] = dot / (qn * self._norms[i])
        return out

    # -- cache file -------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        body = {
            "engine": self.engine,
            "doc_ids": self.doc_ids,
            "term_freqs": self.term_freqs,
            "doc_freqs": self.doc_freqs,
            "doc_lengths": self.doc_lengths,
            "avg_doc_length": self.avg_doc_length,
            "records": [r.to_json() for r in self.records],
        }
        payload = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return INDEX_MAGIC + bytes([INDEX_VERSION]) + payload.encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "KbIndex":
        if data[:4] != INDEX_MAGIC:
            raise ParseError("not a knowledge-base index (bad magic)")
        if data[4] != INDEX_VERSION:
            raise ParseError(f"unsupported index version {data[4]}")
        body = json.loads(data[5:].decode("utf-8"))
        body["records"] = [KbRecord.from_json(r) for r in body.get("records", [])]
        return cls(**body)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "KbIndex":
        return cls.from_bytes(Path(path).read_bytes())


def build_index(records: Sequence[KbRecord], engine: str = "BM25") -> KbIndex:
    """Index material focus, technique and wavelength bands of each record."""
    if not records:
        raise EmptyCorpus("cannot index an empty corpus")
    tfs, lengths, df = [], [], Counter()
    for rec in records:
        toks = tokenize(rec.indexed_text)
        tf = Counter(toks)
        tfs.append(dict(sorted(tf.items())))
        lengths.append(len(toks))
        df.update(tf.keys())
    avgdl = sum(lengths) / len(lengths)
    if avgdl <= 0:
        raise EmptyCorpus("corpus has no indexable tokens")
    return KbIndex(
        engine,
        [r.id for r in records],
        tfs,
        dict(sorted(df.items())),
        lengths,
        avgdl,
        list(records),
    )


@dataclass(frozen=True)
class RetrievalHit:
    record_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class QueryResult:
    hits: tuple
    empty_query: bool = False

    def __iter__(self):
        return iter(self.hits)

    def __len__(self):
        return len(self.hits)

    def __getitem__(self, i):
        return self.hits[i]

    @property
    def ids(self) -> list[str]:
        return [h.record_id for h in self.hits]


def query(idx: KbIndex, text: str, top_k: int = 3) -> QueryResult:
    """Top-``top_k`` documents with a positive score; ties by record id.

    A query with no in-vocabulary tokens returns no hits with ``empty_query`` set.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if not any(t in idx.doc_freqs for t in tokenize(text)):
        return QueryResult((), True)
    scored = [(s, did) for s, did in zip(idx.scores(text), idx.doc_ids) if s > 0]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return QueryResult(tuple(RetrievalHit(did, s, r) for r, (s, did) in enumerate(scored[:top_k], 1)))


def evaluate_retrieval(idx: KbIndex, labeled_queries, top_k: int = 3) -> float:
    """Mean over queries of |top-k hits that are relevant| / top_k."""
    labeled_queries = list(labeled_queries)
    if not labeled_queries:
        return 0.0
    total = 0.0
    for text, relevant in labeled_queries:
        relevant = set(relevant)
        if not relevant:
            raise ValueError(f"query {text!r} has no relevant documents")
        hits = query(idx, text, top_k).ids
        total += len(relevant.intersection(hits)) / top_k
    return total / len(labeled_queries)


def plan_from_records(hits, records) -> list[MethodPlan]:
    """Distinct (chain, feature) plans from the hit records, best rank first.

    Records whose steps cannot be resolved are skipped; if none resolve the call
    fails with :class:`NoResolvablePlan`.
    """
    hits = list(hits)
    if not hits:
        raise NoResolvablePlan("no retrieval hits to build a plan from")
    by_id = records if isinstance(records, Mapping) else {r.id: r for r in records}
    order: list[str] = []
    plans: dict[str, MethodPlan] = {}
    provenance: dict[str, list[str]] = {}
    errors = []
    for hit in sorted(hits, key=lambda h: h.rank):
        rec = by_id.get(hit.record_id)
        if rec is None:
            errors.append(f"unknown record {hit.record_id!r}")
            continue
        try:
            plan = rec.plan()
        except NoResolvablePlan as exc:
            errors.append(str(exc))
            continue
        key = json.dumps([plan.to_json()["steps"], plan.to_json()["feature"]], sort_keys=True)
        if key not in plans:
            order.append(key)
            plans[key] = plan
            provenance[key] = []
        if rec.id not in provenance[key]:
            provenance[key].append(rec.id)
    if not order:
        raise NoResolvablePlan("; ".join(errors) or "no resolvable records")
    return [MethodPlan(plans[k].steps, plans[k].feature, tuple(provenance[k])) for k in order]


def retrieve_plans(records: Sequence[KbRecord], text: str, engine: str = "TFIDF",
                   top_k: int = 3) -> tuple[list[MethodPlan], QueryResult]:
    idx = build_index(records, engine)
    hits = query(idx, text, top_k)
    if not hits:
        raise NoResolvablePlan(f"no knowledge-base record matches {text!r}")
    return plan_from_records(hits, records), hits
