import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iragent.baselines import BaselineSpec, compare, default_baselines, fit_predict
from iragent.core import FeatureMatrix, TaskType, split_indices
from iragent.errors import DimMismatch, IdMismatch
from iragent.reasoning import NearestNeighborBackend, ReasoningConfig, auc, r_squared, run_multi_turn


def test_one_nn_on_training_points():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4))
    y = [f"c{i % 3}" for i in range(30)]
    res = fit_predict(BaselineSpec("KnnClassifier", {"k": 1}), X, y, X)
    assert res.predictions == y


def test_knn_tie_goes_to_nearest():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = ["a", "b", "b", "a"]
    res = fit_predict(BaselineSpec("KnnClassifier", {"k": 2}), X, y, np.array([[0.4]]))
    assert res.predictions == ["a"]


def test_linear_regression_exact():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(25, 3))
    y = X @ [1.5, -2.0, 0.5] + 4.0
    Xt = rng.normal(size=(10, 3))
    res = fit_predict(BaselineSpec("LinearRegression"), X, y, Xt)
    assert r_squared(res.predictions, Xt @ [1.5, -2.0, 0.5] + 4.0) == pytest.approx(1.0, abs=1e-9)


def test_full_rank_pls_equals_lr():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 4))
    y = X @ rng.normal(size=4) + rng.normal(scale=0.3, size=20)
    Xt = rng.normal(size=(7, 4))
    lr = fit_predict(BaselineSpec("LinearRegression"), X, y, Xt).predictions
    pls = fit_predict(BaselineSpec("PlsRegression", {"n_latent": 4}), X, y, Xt).predictions
    assert np.allclose(pls, lr, atol=1e-6)


def test_mahalanobis_separates_far_outliers():
    rng = np.random.default_rng(3)
    normals = rng.normal(size=(100, 3))
    test = np.vstack([rng.normal(size=(40, 3)), rng.normal(size=(10, 3)) + 8])
    truth_anomalous = [False] * 40 + [True] * 10
    res = fit_predict(BaselineSpec("OneClassMahalanobis"), normals, [True] * 100, test)
    assert auc(list(res.scores), truth_anomalous) >= 0.95
    res = fit_predict(BaselineSpec("OneClassKnnDistance"), normals, [True] * 100, test)
    assert auc(list(res.scores), truth_anomalous) >= 0.95


@settings(max_examples=30, deadline=None)
@given(st.integers(20, 120), st.sampled_from([0.8, 0.9, 0.95]), st.integers(0, 1000))
def test_flag_rate_matches_quantile(n, q, seed):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    res = fit_predict(BaselineSpec("OneClassMahalanobis", {"quantile": q}), X, [True] * n, X)
    anomalous_rate = 1 - np.mean(res.predictions)
    assert abs(anomalous_rate - (1 - q)) <= 2 / n


def test_spec_validation_and_dims():
    with pytest.raises(ValueError):
        BaselineSpec("SVM")
    with pytest.raises(ValueError):
        BaselineSpec("KnnClassifier", {"k": 0})
    with pytest.raises(ValueError):
        BaselineSpec("OneClassMahalanobis", {"quantile": 1.0})
    with pytest.raises(DimMismatch):
        fit_predict(BaselineSpec("LinearRegression"), np.zeros((3, 2)), [1, 2, 3], np.zeros((1, 3)))


def _blob_run(max_rounds):
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(0, 1, (20, 2)), rng.normal(2, 1, (20, 2))])
    ids = [f"s{i:02d}" for i in range(40)]
    truth = {sid: "AB"[i >= 20] for i, sid in enumerate(ids)}
    fm = FeatureMatrix(X, ids)
    cfg = ReasoningConfig(repeats=3, max_rounds=max_rounds)
    return fm, truth, run_multi_turn(TaskType.CLASSIFICATION, fm, None, truth,
                                     NearestNeighborBackend(), cfg)


def test_compare_table_rows_and_csv():
    fm, truth, multi = _blob_run(5)
    _, _, single = _blob_run(1)
    table = compare([single, multi], default_baselines("classification"), fm, truth)
    methods = [r.method for r in table.rows]
    assert methods == ["LLM(single)", "LLM(multi)", "KNN"]
    assert table.to_csv().splitlines()[0] == "method,metric,mean,std"
    knn = table.get("KNN", "accuracy")
    assert knn.n == 3 and 0 <= knn.mean <= 1


def test_deterministic_baseline_has_zero_std_on_fixed_split():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 2))
    ids = [f"r{i:02d}" for i in range(40)]
    truth = {i: float(x[0] + 2 * x[1]) for i, x in zip(ids, X)}
    fm = FeatureMatrix(X, ids)
    split = split_indices("regression", [truth[i] for i in ids], seed=0)
    run = run_multi_turn(TaskType.REGRESSION, fm, split, truth, NearestNeighborBackend(),
                         ReasoningConfig(repeats=3))
    table = compare(run, [BaselineSpec("LinearRegression")], fm, truth)
    assert table.get("LR", "r2").std == 0.0


def test_compare_rejects_other_features():
    fm, truth, run = _blob_run(1)
    other = FeatureMatrix(fm.rows + 1, fm.ids)
    with pytest.raises(IdMismatch):
        compare(run, default_baselines("classification"), other, truth)
