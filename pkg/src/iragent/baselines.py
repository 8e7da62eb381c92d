"""Classical comparison methods on the same feature vectors the LLM sees."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import FeatureMatrix, TaskType
from .errors import DimMismatch, IdMismatch, SingularCovariance
from .features import pls_fit, pls_predict
from .reasoning import RunReport, _mean_std, anomaly_precision, auc, accuracy, r_squared, rmse

KINDS = {
    "KnnClassifier": {"k": 3},
    "LinearRegression": {},
    "PlsRegression": {"n_latent": 2},
    "OneClassMahalanobis": {"quantile": 0.95},
    "OneClassKnnDistance": {"k": 3, "quantile": 0.95},
}
LABELS = {
    "KnnClassifier": "KNN",
    "LinearRegression": "LR",
    "PlsRegression": "PLSR",
    "OneClassMahalanobis": "Mahalanobis",
    "OneClassKnnDistance": "kNN-distance",
}
DEFAULTS = {
    TaskType.CLASSIFICATION: (("KnnClassifier", {}),),
    TaskType.REGRESSION: (("LinearRegression", {}), ("PlsRegression", {})),
    TaskType.ANOMALY_DETECTION: (("OneClassMahalanobis", {}), ("OneClassKnnDistance", {})),
}


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}; choose from {', '.join(KINDS)}")
        unknown = set(self.params) - set(KINDS[self.kind])
        if unknown:
            raise ValueError(f"{self.kind} has no parameter(s) {sorted(unknown)}")
        params = {**KINDS[self.kind], **self.params}
        if "k" in params and (not isinstance(params["k"], int) or params["k"] < 1):
            raise ValueError("k must be an integer >= 1")
        if "quantile" in params and not 0 < params["quantile"] < 1:
            raise ValueError("quantile must lie in (0, 1)")
        if "n_latent" in params and params["n_latent"] < 1:
            raise ValueError("n_latent must be >= 1")
        object.__setattr__(self, "params", params)

    @property
    def label(self) -> str:
        return LABELS[self.kind]


def default_baselines(task) -> list[BaselineSpec]:
    return [BaselineSpec(k, p) for k, p in DEFAULTS[TaskType.parse(task)]]


@dataclass(frozen=True)
class BaselineResult:
    predictions: list
    scores: np.ndarray | None = None   # anomaly score, higher = more anomalous
    threshold: float | None = None


def _pairwise(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2), 0.0))


def _knn_vote(d: np.ndarray, labels: Sequence, k: int) -> list:
    out = []
    k = min(k, len(labels))
    for row in d:
        order = np.argsort(row, kind="stable")[:k]
        votes: dict = {}
        for j in order:
            votes[labels[j]] = votes.get(labels[j], 0) + 1
        top = max(votes.values())
        tied = {c for c, v in votes.items() if v == top}
        # ties go to the class of the nearest neighbour among the tied classes
        out.append(next(labels[j] for j in order if labels[j] in tied))
    return out


def _ols(X: np.ndarray, y: np.ndarray, Xt: np.ndarray) -> np.ndarray:
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return np.hstack([np.ones((Xt.shape[0], 1)), Xt]) @ beta


def _mahalanobis(X: np.ndarray, Xt: np.ndarray):
    mean = X.mean(axis=0)
    d = X.shape[1]
    S = np.cov(X, rowvar=False, ddof=1).reshape(d, d) if X.shape[0] > 1 else np.zeros((d, d))
    ridge = 1e-6 * np.trace(S) / d
    if ridge == 0:
        ridge = 1e-6
    S = S + ridge * np.eye(d)
    try:
        Sinv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is singular after regularisation") from None
    if not np.all(np.isfinite(Sinv)):
        raise SingularCovariance("covariance inverse is not finite")

    def score(Z):
        R = Z - mean
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", R, Sinv, R), 0.0))

    return score(X), score(Xt)


def _knn_distance(X: np.ndarray, Xt: np.ndarray, k: int):
    if X.shape[0] < 2:
        raise ValueError("kNN-distance detector needs at least 2 normal samples")
    d_train = _pairwise(X, X)
    np.fill_diagonal(d_train, np.inf)  # a training sample is not its own neighbour
    kt = min(k, X.shape[0] - 1)
    train = np.sort(d_train, axis=1)[:, :kt].mean(axis=1)
    kk = min(k, X.shape[0])
    test = np.sort(_pairwise(Xt, X), axis=1)[:, :kk].mean(axis=1)
    return train, test


def fit_predict(spec: BaselineSpec, train_X, train_y: Sequence, test_X) -> BaselineResult:
    """Fit on the training rows and predict the test rows.

    One-class kinds train on the normal rows only (``train_y`` flag True) and
    predict ``flag = score <= threshold``, the threshold being the ``quantile``
    of the training scores.
    """
    X = np.asarray(getattr(train_X, "rows", train_X), dtype=float)
    Xt = np.asarray(getattr(test_X, "rows", test_X), dtype=float)
    if X.ndim != 2 or Xt.ndim != 2 or X.shape[0] == 0:
        raise DimMismatch("training and test features must be non-empty 2-D arrays")
    if X.shape[1] != Xt.shape[1]:
        raise DimMismatch(f"train dim {X.shape[1]} != test dim {Xt.shape[1]}")
    y = list(train_y)
    if len(y) != X.shape[0]:
        raise DimMismatch(f"{len(y)} labels for {X.shape[0]} training rows")
    p = spec.params
    if spec.kind == "KnnClassifier":
        return BaselineResult(_knn_vote(_pairwise(Xt, X), y, p["k"]))
    if spec.kind == "LinearRegression":
        return BaselineResult([float(v) for v in _ols(X, np.asarray(y, float), Xt)])
    if spec.kind == "PlsRegression":
        k = min(p["n_latent"], X.shape[0] - 1, X.shape[1])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            f = pls_fit(X, np.asarray(y, float), k)
        return BaselineResult([float(v) for v in pls_predict(f, Xt)])
    normals = X[np.asarray([bool(v) for v in y])]
    if normals.shape[0] == 0:
        raise ValueError("one-class detectors need normal training samples")
    if spec.kind == "OneClassMahalanobis":
        train_s, test_s = _mahalanobis(normals, Xt)
    else:
        train_s, test_s = _knn_distance(normals, Xt, p["k"])
    thr = float(np.quantile(train_s, p["quantile"]))
    return BaselineResult([bool(s <= thr) for s in test_s], test_s, thr)


def _metrics(task: TaskType, res: BaselineResult, truth: list) -> dict:
    if task is TaskType.CLASSIFICATION:
        return {"accuracy": accuracy(res.predictions, truth)}
    if task is TaskType.REGRESSION:
        return {"r2": r_squared(res.predictions, truth), "rmse": rmse(res.predictions, truth)}
    return {
        "auc": auc(list(res.scores), [not t for t in truth]),
        "precision": anomaly_precision(res.predictions, truth),
    }


@dataclass
class ComparisonRow:
    method: str
    metric: str
    mean: float | None
    std: float | None
    n: int


@dataclass
class ComparisonTable:
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "metric", "mean", "std"])
        for r in self.rows:
            w.writerow([r.method, r.metric, repr(r.mean), repr(r.std)])
        return buf.getvalue()

    def to_json(self) -> list[dict]:
        return [{"method": r.method, "metric": r.metric, "mean": r.mean, "std": r.std, "n": r.n}
                for r in self.rows]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def get(self, method: str, metric: str) -> ComparisonRow:
        return next(r for r in self.rows if r.method == method and r.metric == metric)


def compare(runs: RunReport | Sequence[RunReport], baselines: Sequence[BaselineSpec],
            features: FeatureMatrix, truth: Mapping) -> ComparisonTable:
    """One row per method and metric over the repeats of the (first) LLM run.

    Baselines train on train+validation of each repeat's split and are scored on
    its test partition, so every method sees the same rows and the same seeds.
    """
    runs = [runs] if isinstance(runs, RunReport) else list(runs)
    if not runs:
        raise ValueError("compare needs at least one run report")
    digest = features.digest()
    for run in runs:
        if run.features_digest != digest:
            raise IdMismatch(f"run {run.label!r} was computed on different features")
    task = runs[0].task
    rows = []
    for run in runs:
        for m, agg in run.aggregate.items():
            rows.append(ComparisonRow(run.label, m, agg["mean"], agg["std"], agg["n"]))
    pos = {i: k for k, i in enumerate(features.ids)}
    for spec in baselines:
        per_metric: dict = {}
        for rep in runs[0].repeats:
            train = list(rep.split["train"]) + list(rep.split["validation"])
            test = list(rep.split["test"])
            res = fit_predict(spec, features.rows[[pos[i] for i in train]], [truth[i] for i in train],
                              features.rows[[pos[i] for i in test]])
            for m, v in _metrics(task, res, [truth[i] for i in test]).items():
                per_metric.setdefault(m, []).append(v)
        for m, vals in per_metric.items():
            agg = _mean_std(vals)
            rows.append(ComparisonRow(spec.label, m, agg["mean"], agg["std"], agg["n"]))
    return ComparisonTable(rows)
