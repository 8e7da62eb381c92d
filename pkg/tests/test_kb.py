import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iragent.errors import EmptyCorpus, NoResolvablePlan
from iragent.kb import (
    ENGINES,
    INDEX_MAGIC,
    KbIndex,
    KbRecord,
    build_index,
    evaluate_retrieval,
    load_kb,
    plan_from_records,
    query,
    retrieve_plans,
    tokenize,
)
from iragent.preprocess import MethodPlan
from iragent.synthetic import retrieval_corpus

from conftest import DATA


def rec(rid, text, steps=("SNV",), feature=None):
    return KbRecord(rid, text, best_preprocessing=steps,
                    best_feature=feature or {"kind": "PCA", "n_components": 5})


TOY = [rec("d1", "red ink"), rec("d2", "red tea tea"), rec("d3", "water")]


def test_tokenize_examples():
    assert tokenize("Pu'er Tea (NIR)") == ["pu", "er", "tea", "nir"]
    assert tokenize("") == []
    assert tokenize("COD COD cod") == ["cod", "cod", "cod"]
    assert tokenize("a b 900-1700 nm") == ["900", "1700", "nm"]


def test_vocabulary_is_union_of_tokens():
    idx = build_index(TOY)
    assert idx.vocabulary == ["ink", "red", "tea", "water"]
    assert idx.avg_doc_length == 2.0


def test_bm25_matches_hand_evaluation():
    # N = 3, avgdl = 2, k1 = 1.5, b = 0.75
    idx = build_index(TOY, "BM25")
    tea = idx.scores("tea")
    idf_tea = math.log((3 - 1 + 0.5) / (1 + 0.5) + 1)       # ln(8/3)
    norm_d2 = 1.5 * (1 - 0.75 + 0.75 * 3 / 2)               # 2.0625
    assert tea[1] == pytest.approx(idf_tea * 2 * 2.5 / (2 + norm_d2), abs=1e-9)
    assert tea[0] == 0 and tea[2] == 0
    red = idx.scores("red")
    idf_red = math.log((3 - 2 + 0.5) / (2 + 0.5) + 1)       # ln(1.6)
    assert red[0] == pytest.approx(idf_red * 2.5 / (1 + 1.5), abs=1e-9)
    assert red[1] == pytest.approx(idf_red * 2.5 / (1 + norm_d2), abs=1e-9)


def test_tfidf_and_bow_hand_values():
    bow = build_index(TOY, "BoW")
    # query "red tea" vs d2 counts (red 1, tea 2): (1 + 2) / (sqrt2 * sqrt5)
    assert bow.scores("red tea")[1] == pytest.approx(3 / math.sqrt(10), abs=1e-12)
    tfidf = build_index(TOY, "TFIDF")
    i_red = math.log(4 / 3) + 1
    i_tea = math.log(4 / 2) + 1
    dot = i_red * i_red + 2 * i_tea * i_tea
    norm_q = math.hypot(i_red, i_tea)
    norm_d = math.hypot(i_red, 2 * i_tea)
    assert tfidf.scores("red tea")[1] == pytest.approx(dot / (norm_q * norm_d), abs=1e-12)


@pytest.mark.parametrize("engine", ENGINES)
def test_self_query_ranks_first(engine):
    records, _ = retrieval_corpus(seed=1)
    idx = build_index(records, engine)
    for r in records[:40]:
        assert query(idx, r.indexed_text, 3)[0].record_id == r.id


@pytest.mark.parametrize("engine", ENGINES)
def test_single_term_sole_hit(engine):
    res = query(build_index(TOY, engine), "ink", 3)
    assert res.ids == ["d1"] and res[0].rank == 1


def test_empty_query_is_flagged_not_raised():
    res = query(build_index(TOY), "zzz qqq", 3)
    assert len(res) == 0 and res.empty_query
    with pytest.raises(ValueError):
        query(build_index(TOY), "red", 0)
    with pytest.raises(EmptyCorpus):
        build_index([])


def test_ties_broken_by_id():
    recs = [rec("b", "salt"), rec("a", "salt"), rec("c", "salt")]
    assert query(build_index(recs, "BM25"), "salt", 3).ids == ["a", "b", "c"]


def test_index_bytes_deterministic_and_round_trip(tmp_path):
    records, queries = retrieval_corpus(seed=2)
    a, b = build_index(records, "TFIDF"), build_index(records, "TFIDF")
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes()[:5] == INDEX_MAGIC + bytes([1])
    a.save(tmp_path / "kb.idx")
    back = KbIndex.load(tmp_path / "kb.idx")
    for text, _ in queries[:20]:
        assert query(back, text).hits == query(a, text).hits


def test_two_hundred_record_corpus():
    records, queries = retrieval_corpus()
    assert len(records) == 200 and len(queries) == 100
    for engine in ENGINES:
        assert len(build_index(records, engine)) == 200


def test_irrelevant_document_leaves_cosine_scores_alone():
    extra = TOY + [rec("d4", "gravel concrete")]
    # TF-IDF weights depend on N through the idf, so only bag-of-words is exact here
    before = build_index(TOY, "BoW").scores("red tea")
    after = build_index(extra, "BoW").scores("red tea")
    assert after[:3] == pytest.approx(before)
    assert query(build_index(extra, "BM25"), "red tea tea").ids[0] == "d2"


def test_evaluate_retrieval_extremes():
    idx = build_index(TOY)
    assert evaluate_retrieval(idx, [("ink", ["d1"])], top_k=1) == 1.0
    assert evaluate_retrieval(idx, [("ink", ["zz"]), ("tea", ["yy"])]) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["red", "ink", "tea", "water", "nope"]), min_size=1, max_size=4),
       st.lists(st.sampled_from(["d1", "d2", "d3", "other"]), min_size=1, max_size=3),
       st.sampled_from(ENGINES))
def test_evaluate_retrieval_in_unit_interval(words, relevant, engine):
    p = evaluate_retrieval(build_index(TOY, engine), [(" ".join(words), relevant)])
    assert 0.0 <= p <= 1.0


# -- plans ---------------------------------------------------------------------


def test_fixture_ink_row_gives_sg_snv_pca():
    records = load_kb(DATA / "kb.jsonl")
    plans, hits = retrieve_plans(records, "red stamp pad ink")
    assert hits[0].record_id == "ink-01"
    top = plans[0]
    assert [s.kind for s in top.steps] == ["SavitzkyGolay", "SNV"]
    assert top.feature.kind == "PCA"


def test_fixture_waste_water_row_gives_asls_pearson():
    records = load_kb(DATA / "kb.jsonl")
    plans, _ = retrieve_plans(records, "waste water COD")
    assert [s.kind for s in plans[0].steps] == ["AsLS"]
    assert plans[0].feature.kind == "LambertBeerPearson"


def test_duplicate_records_collapse():
    recs = [rec("x1", "ink", ("SG", "SNV")), rec("x2", "ink", ("SG", "SNV"))]
    plans = plan_from_records(query(build_index(recs), "ink"), recs)
    assert len(plans) == 1 and plans[0].provenance == ("x1", "x2")
    assert isinstance(plans[0], MethodPlan)


def test_unresolvable_records():
    recs = [rec("bad", "ink", ("Wobble",))]
    with pytest.raises(NoResolvablePlan):
        plan_from_records(query(build_index(recs), "ink"), recs)
    with pytest.raises(NoResolvablePlan):
        plan_from_records([], recs)
