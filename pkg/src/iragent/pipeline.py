"""End-to-end experiment: plan -> preprocess -> features -> reasoning -> baselines."""

from __future__ import annotations

import contextlib
import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .baselines import BaselineSpec, ComparisonTable, compare, default_baselines
from .core import (
    FeatureMatrix,
    Split,
    SpectralDataset,
    TaskType,
    build_anomaly_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .entities import RuleBasedExtractor, extract_entities
from .errors import ConfigError, IrAgentError
from .features import FittedExtractor, fit_extractor, transform
from .kb import load_kb, retrieve_plans
from .llm import HttpBackend, LlmBackend, LlmConfig, Transcript
from .preprocess import MethodPlan, QualityReport, apply_chain
from .reasoning import NearestNeighborBackend, ReasoningConfig, RunReport, run_multi_turn

CONFIG_VERSION = 1
PLAN_SOURCES = ("kb_query", "file", "interactive")
SUPERVISED = ("PLS", "LambertBeerPearson")


class MockBackend:
    """Offline backend: rule-based extraction replies, nearest-neighbour predictions."""

    name = "mock"

    def __init__(self):
        self.extractor = RuleBasedExtractor()
        self.reasoner = NearestNeighborBackend()

    def send(self, messages, cfg):
        if "research_object" in messages[0]["content"]:
            return self.extractor.send(messages, cfg)
        return self.reasoner.send(messages, cfg)


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    plan: dict
    output_dir: Path
    task: TaskType | None = None
    seed: int = 0
    question: str = ""
    reference_class: str | None = None
    llm: LlmConfig = field(default_factory=LlmConfig)
    reasoning: ReasoningConfig = field(default_factory=ReasoningConfig)
    baselines: tuple | None = None
    compare_single: bool = True

    @classmethod
    def from_json(cls, obj: Mapping, base_dir=".") -> "RunConfig":
        base = Path(base_dir)
        if obj.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config 'version' must be {CONFIG_VERSION}")
        known = {"version", "$schema", "dataset", "plan", "output_dir", "task", "seed", "question",
                 "reference_class", "llm", "reasoning", "baselines", "compare_single"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("dataset", "plan", "output_dir"):
            if key not in obj:
                raise ConfigError(f"config is missing {key!r}")
        plan = dict(obj["plan"])
        sources = [k for k in PLAN_SOURCES if plan.get(k)]
        if len(sources) != 1:
            raise ConfigError(f"exactly one plan source required ({', '.join(PLAN_SOURCES)}), got {sources}")
        for key in ("kb", "file"):
            if key in plan:
                plan[key] = str(base / plan[key])
        if "kb_query" in plan and "kb" not in plan:
            raise ConfigError("a kb_query plan source needs a 'kb' file")
        dataset = base / obj["dataset"]
        try:
            seed = int(obj.get("seed", 0))
            reasoning = ReasoningConfig.from_json({"seed": seed, **obj.get("reasoning", {})})
            llm = LlmConfig.from_env(**obj.get("llm", {}))
            baselines = obj.get("baselines")
            if baselines is not None:
                baselines = tuple(BaselineSpec(b["kind"], b.get("params", {})) for b in baselines)
            task = TaskType.parse(obj["task"]) if obj.get("task") else None
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        cfg = cls(dataset, plan, base / obj["output_dir"], task, seed, obj.get("question", ""),
                  obj.get("reference_class"), llm, reasoning, baselines,
                  bool(obj.get("compare_single", True)))
        cfg.validate_files()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(obj, path.parent)

    def validate_files(self) -> None:
        missing = [p for p in (self.dataset, self.plan.get("kb"), self.plan.get("file"))
                   if p is not None and not Path(p).exists()]
        if missing:
            raise ConfigError(f"referenced file(s) do not exist: {', '.join(map(str, missing))}")


@contextlib.contextmanager
def stage(name: str):
    """Tag library errors with the pipeline stage they came from."""
    try:
        yield
    except IrAgentError as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


@dataclass
class PreparedData:
    dataset: SpectralDataset
    preprocessed: SpectralDataset
    quality: QualityReport
    split: Split
    extractor: FittedExtractor
    features: FeatureMatrix
    truth: dict


def prepare(ds: SpectralDataset, plan: MethodPlan, split: Split) -> PreparedData:
    """Preprocess every spectrum, fit the extractor on the training partition only
    and transform all samples."""
    with stage("preprocess"):
        pre, quality = apply_chain(ds, plan.steps)
    with stage("features"):
        train = pre.subset(split.train)
        y = None
        if plan.feature.kind in SUPERVISED:
            if ds.task is not TaskType.REGRESSION:
                raise ConfigError(f"{plan.feature.kind} features need a regression dataset")
            y = np.asarray(train.targets, dtype=float)
        extractor = fit_extractor(plan.feature, train, y)
        features = transform(extractor, pre)
    truth = dict(zip(ds.ids, ds.targets))
    return PreparedData(ds, pre, quality, split, extractor, features, truth)


def resolve_plan(cfg: RunConfig, backend: LlmBackend, transcript: Transcript | None) -> tuple[MethodPlan, dict]:
    """The configured plan and a provenance note for the report."""
    src = cfg.plan
    if src.get("file"):
        with stage("plan"):
            try:
                plan = MethodPlan.from_json(json.loads(Path(src["file"]).read_text()))
            except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"cannot read plan file: {exc}") from None
        return plan, {"source": "file"}
    if src.get("interactive"):
        raise ConfigError("interactive plans are chosen with the 'session' command; "
                          "pass its plan.json as the plan file")
    text = src["kb_query"]
    note = {"source": "kb_query", "query": text, "engine": src.get("engine", "TFIDF")}
    if cfg.question:
        with stage("extract"):
            ent = extract_entities(backend, cfg.question, cfg.llm, transcript)
        note["extracted"] = {"research_object": ent.research_object, "task": ent.task.value}
        if text is True or text == "auto":
            text = ent.research_object
            note["query"] = text
    with stage("plan"):
        plans, hits = retrieve_plans(load_kb(src["kb"]), text, note["engine"], src.get("top_k", 3))
    note["hits"] = hits.ids
    return plans[0], note


@dataclass
class RunResult:
    report: RunReport
    single: RunReport | None
    comparison: ComparisonTable
    prepared: PreparedData
    plan: MethodPlan


def run_experiment(cfg: RunConfig, backend: LlmBackend, *, single_turn: bool = False,
                   repeats: int | None = None, transcript: Transcript | None = None) -> RunResult:
    reasoning = cfg.reasoning
    if repeats is not None:
        reasoning = replace(reasoning, repeats=repeats)
    if single_turn:
        reasoning = replace(reasoning, max_rounds=1)

    with stage("load"):
        ds = load_dataset(cfg.dataset)
        task = cfg.task or ds.task
        if task is TaskType.ANOMALY_DETECTION and ds.task is TaskType.CLASSIFICATION:
            if not cfg.reference_class:
                raise ConfigError("anomaly detection on a classification dataset needs reference_class")
            ds = build_anomaly_dataset(ds, cfg.reference_class, seed=cfg.seed)
        elif task is not ds.task:
            raise ConfigError(f"dataset holds {ds.task.value} labels, config asks for {task.value}")
    plan, note = resolve_plan(cfg, backend, transcript)
    with stage("split"):
        split = split_dataset(ds, reasoning.split_ratio, cfg.seed)
    prepared = prepare(ds, plan, split)

    context = f"{plan.feature.describe()} features of spectra preprocessed with {plan.chain_label()}"
    meta = {
        "dataset": cfg.dataset.name,
        "material": ds.material,
        "n_samples": len(ds),
        "plan": plan.to_json(),
        "plan_source": note,
        "backend": getattr(backend, "name", type(backend).__name__),
        "single_turn": reasoning.max_rounds == 1,
    }
    with stage("reasoning"):
        report = run_multi_turn(task, prepared.features, split, prepared.truth, backend, reasoning,
                                llm=cfg.llm, transcript=transcript, context=context)
        report.metadata = meta
        single = None
        if cfg.compare_single and reasoning.max_rounds > 1:
            single = run_multi_turn(task, prepared.features, split, prepared.truth, backend,
                                    replace(reasoning, max_rounds=1), llm=cfg.llm,
                                    transcript=transcript, context=context)
            single.metadata = dict(meta, single_turn=True)
    with stage("baselines"):
        specs = list(cfg.baselines) if cfg.baselines is not None else default_baselines(task)
        runs = [r for r in (single, report) if r is not None]
        table = compare(runs, specs, prepared.features, prepared.truth)
    return RunResult(report, single, table, prepared, plan)


def write_features(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *fm.feature_names])
        for sid, row in zip(fm.ids, fm.rows):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def read_features(path) -> tuple[FeatureMatrix, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise ValueError(f"{path}: expected a header starting with 'id'")
    names = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    X = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(ids), len(names))
    return FeatureMatrix(X, ids, names), ids


def write_artifacts(result: RunResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = result.prepared
    files = {
        "run_report.json": result.report.dumps(),
        "run_report.csv": result.report.to_csv(),
        "comparison.csv": result.comparison.to_csv(),
        "plan.json": json.dumps(result.plan.to_json(), indent=2) + "\n",
        "quality.json": json.dumps(p.quality.to_json(), indent=2) + "\n",
        "split.json": json.dumps(
            {"train": [p.dataset.ids[i] for i in p.split.train],
             "validation": [p.dataset.ids[i] for i in p.split.validation],
             "test": [p.dataset.ids[i] for i in p.split.test]}, indent=2) + "\n",
        "extractor.json": result.prepared.extractor.dumps() + "\n",
    }
    if result.single is not None:
        files["run_report_single.json"] = result.single.dumps()
    written = []
    for name, text in files.items():
        (out / name).write_text(text)
        written.append(out / name)
    save_dataset(p.dataset, out / "raw.csv")
    save_dataset(p.preprocessed, out / "preprocessed.csv")
    write_features(p.features, out / "features.csv")
    written += [out / "raw.csv", out / "preprocessed.csv", out / "features.csv"]
    return written


def make_backend(mock: bool, cfg: LlmConfig) -> LlmBackend:
    """Mock backend, or the HTTP backend after checking the API key is set."""
    if mock:
        return MockBackend()
    if not cfg.api_key():
        raise ConfigError(f"environment variable {cfg.api_key_env} is not set "
                          "(use --mock-backend for an offline run)")
    if not cfg.model:
        raise ConfigError("no model configured (set LLM_MODEL or llm.model)")
    return HttpBackend()
