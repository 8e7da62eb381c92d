"""Command-line interface.

Exit codes: 0 success, 1 user or configuration error, 2 pipeline error,
3 LLM provider error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import __version__
from .baselines import BaselineSpec, compare, default_baselines
from .core import load_dataset
from .entities import evaluate_extraction, extract_entities, load_cases
from .errors import ConfigError, IrAgentError, LlmError, ParseError, UserError
from .features import fit_extractor, parse_feature, transform
from .kb import ENGINES, KbIndex, build_index, evaluate_retrieval, load_kb, plan_from_records, query
from .llm import LlmConfig, Transcript
from .pipeline import RunConfig, make_backend, read_features, run_experiment, write_artifacts
from .plots import write_plots
from .preprocess import apply_chain, parse_chain
from .reasoning import report_from_json
from .session import answers_from, run_session
from .synthetic import read_queries


def bundled(name: str) -> Path:
    """Path of a file shipped in the package's data directory."""
    return Path(str(resources.files("iragent") / "data" / name))


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, LlmError):
        return 3
    if isinstance(exc, (UserError, FileNotFoundError)):
        return 1
    return 2


class Output:
    def __init__(self, as_json: bool):
        self.as_json = as_json

    def emit(self, obj, text: str | None = None) -> None:
        if self.as_json:
            print(json.dumps(obj, ensure_ascii=False))
        else:
            print(text if text is not None else obj)


# -- kb --------------------------------------------------------------------------------


def cmd_kb_build(args, out: Output) -> int:
    idx = build_index(load_kb(args.corpus), args.engine)
    idx.save(args.output)
    out.emit({"index": str(args.output), "engine": idx.engine, "documents": len(idx)},
             f"indexed {len(idx)} records with {idx.engine} -> {args.output}")
    return 0


def cmd_kb_query(args, out: Output) -> int:
    path = Path(args.index)
    idx = KbIndex.load(path) if path.suffix != ".jsonl" else build_index(load_kb(path), args.engine)
    res = query(idx, args.text, args.top_k)
    if res.empty_query:
        warnings.warn("query has no terms in the index vocabulary")
    for hit in res:
        # hits are JSON lines in both modes
        print(json.dumps({"rank": hit.rank, "id": hit.record_id, "score": hit.score}))
    return 0


def cmd_kb_eval(args, out: Output) -> int:
    records = load_kb(args.corpus or bundled("retrieval_corpus.jsonl"))
    queries = read_queries(args.queries or bundled("retrieval_queries.jsonl"))
    result = {}
    for engine in ENGINES:
        result[engine] = evaluate_retrieval(build_index(records, engine), queries, args.top_k)
    out.emit({"top_k": args.top_k, "queries": len(queries), "precision": result},
             "\n".join(f"{e:6s} {100 * p:6.2f}" for e, p in result.items()))
    return 0


# -- extract -------------------------------------------------------------------------


def cmd_extract(args, out: Output) -> int:
    cfg = LlmConfig.from_env()
    backend = make_backend(args.mock_backend, cfg)
    transcript = Transcript(args.transcript) if args.transcript else None
    if args.eval:
        cases = load_cases(bundled("entity_cases.jsonl") if args.eval == "bundled" else args.eval)
        obj_pct, task_pct = evaluate_extraction(backend, cases, args.threshold, cfg, transcript)
        out.emit({"cases": len(cases), "research_object": obj_pct, "task": task_pct},
                 f"research object {obj_pct:.1f}%  task {task_pct:.1f}%  ({len(cases)} cases)")
        return 0
    if not args.question:
        raise ConfigError("extract needs a question or --eval")
    ent = extract_entities(backend, args.question, cfg, transcript)
    out.emit({"research_object": ent.research_object, "task": ent.task.value,
              "attempts": ent.attempts},
             f"research_object: {ent.research_object}\ntask: {ent.task.value}")
    return 0


# -- run -------------------------------------------------------------------------------


def cmd_run(args, out: Output) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, reasoning=replace(cfg.reasoning, seed=args.seed))
    out_dir = Path(args.out) if args.out else cfg.output_dir
    backend = make_backend(args.mock_backend, cfg.llm)  # fails before any computation
    out_dir.mkdir(parents=True, exist_ok=True)
    transcript = Transcript(out_dir / "transcript.jsonl")
    result = run_experiment(cfg, backend, single_turn=args.single_turn, repeats=args.repeats,
                            transcript=transcript)
    files = write_artifacts(result, out_dir)
    agg = result.report.aggregate
    summary = {
        "output_dir": str(out_dir),
        "files": sorted(p.name for p in files) + ["transcript.jsonl"],
        "aggregate": agg,
        "failed_repeats": result.report.n_failed,
    }
    lines = [f"{m}: {a['mean']:.4f} +- {a['std']:.4f} over {a['n']} repeats" for m, a in agg.items()]
    lines.append(result.comparison.to_csv().rstrip())
    lines.append(f"artifacts written to {out_dir}")
    out.emit(summary, "\n".join(lines))
    return 0


# -- session ---------------------------------------------------------------------------


def cmd_session(args, out: Output) -> int:
    ds = load_dataset(args.dataset)
    records = load_kb(args.kb or bundled("kb.jsonl"))
    idx = build_index(records, args.engine)
    hits = query(idx, args.question, args.top_k)
    candidates = plan_from_records(hits, records) if len(hits) else []
    if args.answers:
        lines = Path(args.answers).read_text().splitlines()
        ask = answers_from(lines)
    else:
        def ask(prompt):
            return input(prompt)
    say = (lambda s: print(s, file=sys.stderr)) if out.as_json else print
    plan = run_session(candidates, ds, ask, say, {r.id: r for r in records})
    Path(args.output).write_text(json.dumps(plan.to_json(), indent=2) + "\n")
    out.emit({"plan": plan.to_json(), "output": str(args.output)}, f"plan written to {args.output}")
    return 0


# -- plot ------------------------------------------------------------------------------


def _plot_inputs(path: Path, args):
    """(raw, processed, features) from a run directory or a dataset file."""
    run_dir = path if path.is_dir() else (path.parent if path.name.startswith("run_report") else None)
    if run_dir is not None:
        try:
            raw = load_dataset(run_dir / "raw.csv")
            pre = load_dataset(run_dir / "preprocessed.csv")
            fm, _ = read_features(run_dir / "features.csv")
        except (OSError, ValueError) as exc:
            raise ParseError(f"{run_dir}: not a complete run directory ({exc})") from None
        return raw, pre, fm
    raw = load_dataset(path)
    if len(raw) == 0:
        return raw, raw, None
    steps = parse_chain(args.chain)
    pre, _ = apply_chain(raw, steps)
    feature = parse_feature(args.feature)
    fm = transform(fit_extractor(feature, pre), pre) if len(pre) >= 2 else None
    return raw, pre, fm


def cmd_plot(args, out: Output) -> int:
    raw, pre, fm = _plot_inputs(Path(args.input), args)
    if len(raw) == 0:
        warnings.warn("dataset is empty; no plots written")
        out.emit({"files": []}, "no plots written (empty dataset)")
        return 0
    files = write_plots(raw, pre, fm, args.out)
    out.emit({"files": [str(p) for p in files]}, f"wrote {len(files)} SVG files to {args.out}")
    return 0


# -- compare ---------------------------------------------------------------------------


def cmd_compare(args, out: Output) -> int:
    run_dir = Path(args.run_dir)
    try:
        runs = [report_from_json(json.loads((run_dir / name).read_text()))
                for name in ("run_report_single.json", "run_report.json")
                if (run_dir / name).exists()]
        fm, _ = read_features(run_dir / "features.csv")
        pre = load_dataset(run_dir / "preprocessed.csv")
    except (OSError, ValueError, KeyError) as exc:
        raise ParseError(f"{run_dir}: not a complete run directory ({exc})") from None
    if not runs:
        raise ParseError(f"{run_dir}: no run_report.json")
    if args.baselines:
        specs = [BaselineSpec(b["kind"], b.get("params", {}))
                 for b in json.loads(Path(args.baselines).read_text())]
    else:
        specs = default_baselines(runs[-1].task)
    table = compare(runs, specs, fm, dict(zip(pre.ids, pre.targets)))
    target = Path(args.output) if args.output else run_dir / "comparison.csv"
    target.write_text(table.to_csv())
    out.emit(table.to_json(), table.to_csv().rstrip())
    return 0


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # The flags are accepted before or after the subcommand; SUPPRESS keeps a
    # subcommand's defaults from overwriting values given before it.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="machine-readable output")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the configured seed")

    ap = argparse.ArgumentParser(prog="iragent", parents=[common],
                                 description="Literature-guided IR spectral analysis with few-shot LLM reasoning.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    kb = sub.add_parser("kb", help="knowledge-base index, query and evaluation")
    kbs = kb.add_subparsers(dest="kb_command", required=True)
    p = kbs.add_parser("build", parents=[common], help="index a JSONL corpus")
    p.add_argument("corpus")
    p.add_argument("--engine", default="BM25", help="BoW, BM25 or TFIDF")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_kb_build)
    p = kbs.add_parser("query", parents=[common], help="top-k records for a query")
    p.add_argument("index", help="index file, or a .jsonl corpus to index on the fly")
    p.add_argument("text")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--engine", default="TFIDF", help="engine when indexing a corpus on the fly")
    p.set_defaults(func=cmd_kb_query)
    p = kbs.add_parser("eval", parents=[common], help="top-k precision per engine")
    p.add_argument("--corpus", help="JSONL records (default: bundled synthetic corpus)")
    p.add_argument("--queries", help="JSONL {query, relevant} (default: bundled queries)")
    p.add_argument("--top-k", type=int, default=3)
    p.set_defaults(func=cmd_kb_eval)

    p = sub.add_parser("extract", parents=[common], help="research object and task from a question")
    p.add_argument("question", nargs="?")
    p.add_argument("--eval", help="JSONL evaluation cases, or 'bundled'")
    p.add_argument("--threshold", type=int, default=80)
    p.add_argument("--mock-backend", action="store_true")
    p.add_argument("--transcript")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("run", parents=[common], help="full experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("--single-turn", action="store_true")
    p.add_argument("--mock-backend", action="store_true")
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("session", parents=[common], help="choose and tune a method plan")
    p.add_argument("dataset")
    p.add_argument("question")
    p.add_argument("--kb", help="JSONL knowledge base (default: bundled)")
    p.add_argument("--engine", default="TFIDF")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--answers", help="replay answers from a file, one per line")
    p.add_argument("-o", "--output", default="plan.json")
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("plot", parents=[common], help="SVG figures for a dataset or run directory")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--chain", default="none", help="preprocessing chain for dataset input")
    p.add_argument("--feature", default="PCA(n_components=2)", help="feature extractor for dataset input")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("compare", parents=[common], help="baseline comparison table for a run")
    p.add_argument("run_dir")
    p.add_argument("--baselines", help="JSON list of {kind, params}")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.json = getattr(args, "json", False)
    args.seed = getattr(args, "seed", None)
    out = Output(args.json)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            warnings.showwarning = _show_warning
            return args.func(args, out)
    except (IrAgentError, FileNotFoundError) as exc:
        code = exit_code(exc)
        stage = getattr(exc, "stage", None)
        message = f"{stage}: {exc}" if stage else str(exc)
        if args.json:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc), "stage": stage,
                              "exit_code": code}), file=sys.stderr)
        else:
            print(f"error: {message}", file=sys.stderr)
        return code


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
