"""Command-line surface, run pipeline, scripted sessions and plots."""

import json
import shutil

import numpy as np
import pytest

from iragent.cli import main
from iragent.core import SpectralDataset, TaskType, save_dataset
from iragent.errors import AbortedByUser, ConfigError
from iragent.kb import INDEX_MAGIC
from iragent.llm import HttpBackend
from iragent.pipeline import MockBackend, RunConfig, run_experiment
from iragent.features import FeatureSpec
from iragent.preprocess import MethodPlan, parse_chain
from iragent.session import answers_from, edit_plan, run_session
from iragent.synthetic import ink_like

from conftest import DATA, GOLDEN


def run_cli(capsys, *argv):
    code = main(list(map(str, argv)))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture
def workdir(tmp_path):
    for name in ("ink.csv", "ink.labels.json", "kb.jsonl", "run_config.json"):
        shutil.copy(DATA / name, tmp_path / name)
    return tmp_path


# -- config --------------------------------------------------------------------


def test_config_requires_one_plan_source(workdir):
    obj = json.loads((workdir / "run_config.json").read_text())
    obj["plan"]["file"] = "plan.json"
    with pytest.raises(ConfigError, match="exactly one plan source"):
        RunConfig.from_json(obj, workdir)


def test_config_rejects_missing_files_and_bad_version(workdir):
    obj = json.loads((workdir / "run_config.json").read_text())
    with pytest.raises(ConfigError, match="do not exist"):
        RunConfig.from_json({**obj, "dataset": "nope.csv"}, workdir)
    with pytest.raises(ConfigError, match="version"):
        RunConfig.from_json({**obj, "version": 2}, workdir)
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_json({**obj, "colour": "red"}, workdir)


# -- kb ------------------------------------------------------------------------


def test_kb_build_and_query(capsys, tmp_path):
    idx = tmp_path / "kb.idx"
    code, _, _ = run_cli(capsys, "kb", "build", DATA / "kb.jsonl", "--engine", "bm25", "-o", idx)
    assert code == 0 and idx.read_bytes()[:4] == INDEX_MAGIC
    code, out, _ = run_cli(capsys, "kb", "query", idx, "pu er tea", "--top-k", "3", "--json")
    hits = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and 1 <= len(hits) <= 3
    assert hits[0]["id"] == "tea-01" and hits[0]["rank"] == 1
    scores = [h["score"] for h in hits]
    assert scores == sorted(scores, reverse=True)


def test_kb_eval_orders_engines(capsys):
    code, out, _ = run_cli(capsys, "kb", "eval", "--json")
    res = json.loads(out)["precision"]
    assert code == 0
    assert res["BoW"] < res["BM25"] and res["BoW"] < res["TFIDF"]


# -- extract -------------------------------------------------------------------


def test_extract_single_question(capsys):
    code, out, _ = run_cli(capsys, "extract", "Predict the COD of waste water samples",
                           "--mock-backend", "--json")
    got = json.loads(out)
    assert code == 0 and got["task"] == "regression" and got["research_object"] == "waste water"


# -- run -----------------------------------------------------------------------


def test_run_matches_golden_report(capsys, tmp_path):
    before = HttpBackend.requests_sent
    code, _, _ = run_cli(capsys, "run", DATA / "run_config.json", "--mock-backend", "--out", tmp_path)
    assert code == 0
    assert HttpBackend.requests_sent == before
    assert (tmp_path / "run_report.json").read_bytes() == (GOLDEN / "run_report.json").read_bytes()
    for name in ("comparison.csv", "transcript.jsonl", "features.csv", "preprocessed.csv",
                 "raw.csv", "plan.json", "split.json", "quality.json"):
        assert (tmp_path / name).exists(), name


def test_run_single_turn_flag_in_metadata(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "run", DATA / "run_config.json", "--mock-backend",
                         "--single-turn", "--repeats", "1", "--out", tmp_path)
    report = json.loads((tmp_path / "run_report.json").read_text())
    assert code == 0
    assert report["metadata"]["single_turn"] is True and report["config"]["max_rounds"] == 1


def test_run_without_key_fails_before_computation(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    out_dir = tmp_path / "out"
    code, _, err = run_cli(capsys, "run", DATA / "run_config.json", "--out", out_dir)
    assert code == 1 and "LLM_API_KEY" in err
    assert not out_dir.exists()


def test_json_error_output(capsys, tmp_path):
    code, out, err = run_cli(capsys, "--json", "run", tmp_path / "missing.json", "--mock-backend")
    obj = json.loads(err)
    assert code == 1 and out == ""
    assert obj["error"] == "ConfigError" and obj["exit_code"] == 1


def test_seed_flag_changes_split(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(capsys, "run", DATA / "run_config.json", "--mock-backend", "--repeats", "1",
            "--seed", "5", "--out", a)
    run_cli(capsys, "run", DATA / "run_config.json", "--mock-backend", "--repeats", "1",
            "--seed", "6", "--out", b)
    assert (a / "split.json").read_text() != (b / "split.json").read_text()


def test_pipeline_fits_extractor_on_training_rows(workdir):
    cfg = RunConfig.load(workdir / "run_config.json")
    res = run_experiment(cfg, MockBackend(), repeats=1)
    prep = res.prepared
    train = prep.preprocessed.subset(prep.split.train)
    assert np.allclose(prep.extractor.arrays["mean"], train.X.mean(axis=0))
    assert res.comparison.get("KNN", "accuracy").n == 1


def test_compare_command_rebuilds_table(capsys, tmp_path):
    run_cli(capsys, "run", DATA / "run_config.json", "--mock-backend", "--repeats", "2",
            "--out", tmp_path)
    written = (tmp_path / "comparison.csv").read_text()
    (tmp_path / "comparison.csv").unlink()
    code, _, _ = run_cli(capsys, "compare", tmp_path)
    assert code == 0 and (tmp_path / "comparison.csv").read_text() == written


# -- session -------------------------------------------------------------------


@pytest.mark.parametrize("name,answers", [
    ("session_accept", ["1", "accept"]),
    ("session_edit_m7", ["1", "m=7", "accept"]),
    ("session_manual", ["manual", "SG(m=4)+MinMax", "PCA(n_components=3)", "accept"]),
])
def test_session_replay_matches_golden(capsys, tmp_path, name, answers):
    ans = tmp_path / "answers.txt"
    ans.write_text("\n".join(answers) + "\n")
    plan = tmp_path / "plan.json"
    code, out, _ = run_cli(capsys, "session", DATA / "ink.csv", "stamp pad ink",
                           "--answers", ans, "-o", plan)
    assert code == 0
    assert plan.read_text() == (GOLDEN / f"{name}.plan.json").read_text()
    if name == "session_edit_m7":
        assert out.count("preview on") == 2  # shown again after the edit


def test_session_abort_writes_nothing(capsys, tmp_path):
    ans = tmp_path / "answers.txt"
    ans.write_text("1\n")
    plan = tmp_path / "plan.json"
    code, _, _ = run_cli(capsys, "session", DATA / "ink.csv", "stamp pad ink",
                         "--answers", ans, "-o", plan)
    assert code != 0 and not plan.exists()


def test_session_first_candidate_and_bad_edit():
    cand = MethodPlan(tuple(parse_chain("SG+SNV")), FeatureSpec("PCA"), ("ink-01",))
    said = []
    plan = run_session([cand], ink_like(n_per_class=2), answers_from(["9", "1", "zz=3", "accept"]),
                       said.append)
    assert plan == cand
    assert any("unrecognised choice" in s for s in said)
    assert any("edit rejected" in s for s in said)
    with pytest.raises(AbortedByUser):
        run_session([cand], ink_like(n_per_class=2), answers_from(["quit"]), said.append)
    assert edit_plan(cand, "feature.n_components=2").feature.params["n_components"] == 2


# -- plots ---------------------------------------------------------------------


def test_plot_files_and_determinism(capsys, tmp_path):
    ds = ink_like(n_per_class=2)
    save_dataset(ds, tmp_path / "small.csv")
    a, b = tmp_path / "a", tmp_path / "b"
    for target in (a, b):
        code, _, _ = run_cli(capsys, "plot", tmp_path / "small.csv", "--out", target,
                             "--chain", "SG+SNV")
        assert code == 0
    files = sorted(p.name for p in a.iterdir())
    assert len(files) == len(ds) + 1 and "feature_scatter.svg" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert "<svg xmlns" in (a / name).read_text()


def test_plot_run_directory(capsys, tmp_path):
    run_cli(capsys, "run", DATA / "run_config.json", "--mock-backend", "--repeats", "1",
            "--out", tmp_path / "run")
    code, _, _ = run_cli(capsys, "plot", tmp_path / "run", "--out", tmp_path / "fig")
    assert code == 0 and len(list((tmp_path / "fig").iterdir())) == 81


def test_plot_empty_dataset(capsys, tmp_path):
    empty = SpectralDataset([], [], "nothing", TaskType.CLASSIFICATION)
    save_dataset(empty, tmp_path / "empty.csv")
    code, _, err = run_cli(capsys, "plot", tmp_path / "empty.csv", "--out", tmp_path / "fig")
    assert code == 0 and "warning: dataset is empty" in err
    assert not (tmp_path / "fig").exists() or not list((tmp_path / "fig").iterdir())
