"""Feature extraction: PCA, PLS, CWT, Lambert-Beer/Pearson, NMF, peaks, summary stats."""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import FeatureMatrix, SpectralDataset, Spectrum
from .errors import (
    ConstantReference,
    ConstantSpectrum,
    DegenerateResponse,
    DimMismatch,
    NegativeInput,
    NonPositiveIntensity,
    RankDeficientWarning,
)

SCHEMA_VERSION = 1

FEATURE_KINDS = ("PCA", "PLS", "CWT", "LambertBeerPearson", "NMF", "Peaks", "Stats")

FEATURE_DEFAULTS = {
    "PCA": {"n_components": 5},
    "PLS": {"n_latent": 2},
    "CWT": {"scales": [5.0, 10.0, 20.0, 40.0], "wavelet": "ricker"},
    "LambertBeerPearson": {"n_top": 3, "n_bins": 3},
    "NMF": {"rank": 3, "iters": 200, "seed": 0},
    "Peaks": {"prominence": 0.05, "max_peaks": 5},
    "Stats": {},
}

FEATURE_ALIASES = {
    "pca": "PCA",
    "pls": "PLS",
    "cwt": "CWT",
    "nmf": "NMF",
    "peaks": "Peaks",
    "stats": "Stats",
    "lambertbeerpearson": "LambertBeerPearson",
    "lbp": "LambertBeerPearson",
    "pearson": "LambertBeerPearson",
    "pearsoncorrelationfeatures": "LambertBeerPearson",
}


@dataclass(frozen=True)
class FeatureSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = FEATURE_ALIASES.get(self.kind.lower().replace(" ", "").replace("-", "").replace("_", ""), self.kind)
        if kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        unknown = set(self.params) - set(FEATURE_DEFAULTS[kind])
        if unknown:
            raise ValueError(f"{kind} does not take parameters {sorted(unknown)}")
        merged = {**FEATURE_DEFAULTS[kind], **self.params}
        for key in ("n_components", "n_latent", "n_top", "rank", "n_bins", "max_peaks"):
            if key in merged and int(merged[key]) < 1:
                raise ValueError(f"{kind} {key} must be >= 1")
        if kind == "CWT":
            merged["scales"] = [float(a) for a in merged["scales"]]
            if not merged["scales"] or min(merged["scales"]) <= 0:
                raise ValueError("CWT scales must be positive")
            if merged["wavelet"] != "ricker":
                raise ValueError("only the 'ricker' wavelet is available")
        if kind == "Peaks" and not merged["prominence"] > 0:
            raise ValueError("peak prominence must be > 0")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", merged)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSpec":
        obj = dict(obj)
        return cls(obj.pop("kind"), obj)

    def describe(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.kind}({args})" if args else self.kind


def _value(text: str):
    if ";" in text:
        return [float(v) for v in text.split(";") if v.strip()]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_feature(text: str) -> FeatureSpec:
    """``"PCA"``, ``"PCA(n_components=3)"`` or ``"CWT(scales=4;8;16)"`` to a spec."""
    m = re.fullmatch(r"\s*([A-Za-z][A-Za-z0-9_\- ]*?)\s*(?:\((.*)\))?\s*", text)
    if not m:
        raise ValueError(f"cannot parse feature extractor {text!r}")
    params = {}
    for part in (m.group(2) or "").split(","):
        if part.strip():
            k, eq, v = part.partition("=")
            if not eq:
                raise ValueError(f"expected key=value, got {part.strip()!r}")
            params[k.strip()] = _value(v.strip())
    return FeatureSpec(m.group(1), params)


@dataclass(eq=False)
class FittedExtractor:
    """Learned state of a feature extractor; arrays are plain numpy arrays."""

    kind: str
    params: dict
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "params": self.params,
            "arrays": {k: np.asarray(v).tolist() for k, v in sorted(self.arrays.items())},
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FittedExtractor":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported extractor schema {obj.get('schema_version')!r}")
        arrays = {k: np.asarray(v, dtype=float) for k, v in obj["arrays"].items()}
        return cls(obj["kind"], dict(obj["params"]), arrays, dict(obj.get("meta", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "FittedExtractor":
        return cls.from_json(json.loads(text))


def _as_matrix(X) -> tuple[np.ndarray, tuple]:
    if isinstance(X, SpectralDataset):
        return X.X, tuple(X.ids)
    if isinstance(X, FeatureMatrix):
        return np.asarray(X.rows), X.ids
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr, ()


# -- PCA ------------------------------------------------------------------------------------


def pca_fit(X, n_components: int = 5) -> FittedExtractor:
    """Principal directions of the column-centred data, by descending variance.

    Computed through the SVD of the centred matrix, so the loadings are the
    eigenvectors of ``Xc'Xc / (n-1)``. Each loading vector is signed so its
    largest-magnitude entry is positive.
    """
    X, _ = _as_matrix(X)
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 samples")
    k = int(n_components)
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"n_components must lie in [1, {min(n - 1, d)}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    variances = s**2 / (n - 1)
    total = float(variances.sum())
    tol = s[0] * max(n, d) * np.finfo(float).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    if k > rank:
        warnings.warn(
            f"requested {k} components but the data has numerical rank {rank}",
            RankDeficientWarning,
            stacklevel=2,
        )
        k = max(rank, 1)
    U = Vt[:k].T.copy()
    for j in range(k):
        if U[np.argmax(np.abs(U[:, j])), j] < 0:
            U[:, j] *= -1
    return FittedExtractor(
        "PCA",
        {"n_components": k},
        {"mean": mean, "loadings": U, "variances": variances[:k]},
        {"total_variance": total},
    )


def explained_variance_ratio(f: FittedExtractor) -> np.ndarray:
    total = f.meta["total_variance"]
    return f.arrays["variances"] / total if total > 0 else np.zeros_like(f.arrays["variances"])


def pca_transform(f: FittedExtractor, X) -> FeatureMatrix:
    X, ids = _as_matrix(X)
    mean, U = f.arrays["mean"], f.arrays["loadings"]
    if X.shape[1] != mean.size:
        raise DimMismatch(f"input dim {X.shape[1]} != fitted dim {mean.size}")
    scores = (X - mean) @ U
    return FeatureMatrix(scores, ids, tuple(f"PC{j + 1}" for j in range(U.shape[1])))


# -- PLS ------------------------------------------------------------------------------------


def pls_fit(X, y, n_latent: int = 2) -> FittedExtractor:
    """Single-response NIPALS partial least squares on centred data.

    Per component: ``w = X'y/|X'y|``, ``t = Xw``, ``p = X't/t't``,
    ``c = y't/t't``, then deflate ``X -= t p'`` and ``y -= t c``.
    """
    X, _ = _as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if y.size != n:
        raise DimMismatch(f"{y.size} responses for {n} samples")
    if n < 2:
        raise ValueError("PLS needs at least 2 samples")
    if np.ptp(y) == 0:
        raise DegenerateResponse("response is constant")
    k = int(n_latent)
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"n_latent must lie in [1, {min(n - 1, d)}], got {k}")
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xr = X - x_mean
    yr = y - y_mean
    scale = np.linalg.norm(Xr) * np.linalg.norm(yr)
    W, P, T, U, C = [], [], [], [], []
    for a in range(k):
        w = Xr.T @ yr
        nw = np.linalg.norm(w)
        if nw <= 1e-12 * scale:
            warnings.warn(
                f"only {a} latent variables carry covariance with the response",
                RankDeficientWarning,
                stacklevel=2,
            )
            break
        w /= nw
        t = Xr @ w
        tt = float(t @ t)
        p = Xr.T @ t / tt
        c = float(yr @ t) / tt
        U.append(yr * c)
        Xr = Xr - np.outer(t, p)
        yr = yr - t * c
        W.append(w), P.append(p), T.append(t), C.append(c)
    if not W:
        raise DegenerateResponse("no covariance between predictors and response")
    W, P, T = np.array(W).T, np.array(P).T, np.array(T).T
    C = np.array(C)
    R = W @ np.linalg.inv(P.T @ W)
    return FittedExtractor(
        "PLS",
        {"n_latent": W.shape[1]},
        {
            "x_mean": x_mean,
            "y_mean": np.array([y_mean]),
            "weights": W,
            "x_loadings": P,
            "y_loadings": C,
            "scores": T,
            "y_scores": np.array(U).T,
            "rotations": R,
            "coef": R @ C,
        },
    )


def pls_transform(f: FittedExtractor, X) -> FeatureMatrix:
    X, ids = _as_matrix(X)
    if X.shape[1] != f.arrays["x_mean"].size:
        raise DimMismatch(f"input dim {X.shape[1]} != fitted dim {f.arrays['x_mean'].size}")
    T = (X - f.arrays["x_mean"]) @ f.arrays["rotations"]
    return FeatureMatrix(T, ids, tuple(f"LV{j + 1}" for j in range(T.shape[1])))


def pls_predict(f: FittedExtractor, X) -> np.ndarray:
    X, _ = _as_matrix(X)
    if X.shape[1] != f.arrays["x_mean"].size:
        raise DimMismatch(f"input dim {X.shape[1]} != fitted dim {f.arrays['x_mean'].size}")
    return f.arrays["y_mean"][0] + (X - f.arrays["x_mean"]) @ f.arrays["coef"]


# -- wavelets ----------------------------------------------------------------------------------


def ricker(t):
    """Mexican-hat mother wavelet with unit L2 norm."""
    t = np.asarray(t, dtype=float)
    return 2.0 / (math.sqrt(3.0) * math.pi**0.25) * (1.0 - t * t) * np.exp(-0.5 * t * t)


def _quadrature_weights(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    dx = np.diff(x)
    w[0] = dx[0] / 2
    w[-1] = dx[-1] / 2
    w[1:-1] = (dx[:-1] + dx[1:]) / 2
    return w


def cwt(s: Spectrum, scales: Sequence[float], wavelet: str = "ricker") -> np.ndarray:
    """Continuous wavelet coefficients, one row per scale and one column per
    grid position. Scales are in wavelength units; the integral is evaluated
    with trapezoid weights on the grid."""
    if wavelet != "ricker":
        raise ValueError("only the 'ricker' wavelet is available")
    scales = np.asarray(scales, dtype=float)
    if scales.ndim != 1 or scales.size == 0 or np.any(scales <= 0):
        raise ValueError("scales must be a non-empty list of positive numbers")
    if len(s) < 8:
        raise ValueError("CWT needs at least 8 points")
    x = s.wavelengths
    wy = _quadrature_weights(x) * s.intensities
    diff = x[None, :] - x[:, None]  # [b, i] = x_i - b
    out = np.empty((scales.size, x.size))
    for k, a in enumerate(scales):
        out[k] = ricker(diff / a) @ wy / math.sqrt(a)
    return out


def cwt_features(s: Spectrum, scales: Sequence[float], wavelet: str = "ricker") -> FeatureMatrix:
    """Per-scale maximum |W| and the wavelength where it occurs."""
    W = cwt(s, scales, wavelet)
    pos = np.argmax(np.abs(W), axis=1)
    mags = np.abs(W[np.arange(W.shape[0]), pos])
    locs = s.wavelengths[pos]
    names = [f"cwt_max_a{a:g}" for a in scales] + [f"cwt_loc_a{a:g}" for a in scales]
    return FeatureMatrix(np.concatenate([mags, locs]), (s.id,), tuple(names))


# -- Lambert-Beer / Pearson ------------------------------------------------------------------


def absorbance(I: Spectrum, I0: Spectrum) -> Spectrum:
    """Decadic absorbance ``log10(I0 / I)``."""
    if not np.array_equal(I.wavelengths, I0.wavelengths):
        raise DimMismatch("transmitted and incident spectra are on different grids")
    if np.any(I.intensities <= 0) or np.any(I0.intensities <= 0):
        raise NonPositiveIntensity("intensities must be strictly positive")
    return I.with_intensities(np.log10(I0.intensities / I.intensities))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimMismatch("correlated curves must have equal length")
    ac, bc = a - a.mean(), b - b.mean()
    na, nb = math.sqrt(float(ac @ ac)), math.sqrt(float(bc @ bc))
    if nb == 0:
        raise ConstantReference("reference curve is constant")
    if na == 0:
        raise ConstantSpectrum("absorbance curve is constant")
    return float(np.clip((ac @ bc) / (na * nb), -1.0, 1.0))


def _reference_items(refs) -> list[tuple[str, np.ndarray]]:
    if isinstance(refs, Mapping):
        return [(str(k), np.asarray(v, float)) for k, v in refs.items()]
    return [(str(k), np.asarray(v, float)) for k, v in refs]


def pearson_features(A, refs, n_top: int = 3) -> tuple[FeatureMatrix, list[str]]:
    """Correlate ``A`` with each reference curve and keep the ``n_top`` largest
    coefficients (descending) along with the ids of the references that produced them."""
    items = _reference_items(refs)
    if len(items) < n_top:
        raise ValueError(f"need at least {n_top} references, got {len(items)}")
    y = A.intensities if isinstance(A, Spectrum) else np.asarray(A, float)
    r = [(pearson(y, curve), k, rid) for k, (rid, curve) in enumerate(items)]
    r.sort(key=lambda item: (-item[0], item[1]))
    top = r[:n_top]
    sid = (A.id,) if isinstance(A, Spectrum) else ()
    row = FeatureMatrix([v for v, _, _ in top], sid, tuple(f"r{j + 1}" for j in range(n_top)))
    return row, [rid for _, _, rid in top]


def build_reference_curves(X, y, n_bins: int = 3) -> list[tuple[str, np.ndarray]]:
    """Mean absorbance curve per response-quantile bin (tertiles by default)."""
    X, _ = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    edges = np.quantile(y, np.linspace(0, 1, n_bins + 1)[1:-1])
    bins = np.searchsorted(edges, y, side="right")
    curves = []
    for b in range(n_bins):
        members = bins == b
        if members.any():
            curves.append((f"ref{b + 1}", X[members].mean(axis=0)))
    return curves


# -- NMF ----------------------------------------------------------------------------------------

_TINY = np.finfo(float).tiny


def _frob(X, W, H) -> float:
    R = X - W @ H
    return float(np.sum(R * R))


def nmf_fit(X, rank: int = 3, iters: int = 200, seed: int = 0) -> FittedExtractor:
    """Multiplicative-update NMF ``X ~ W H`` minimising the Frobenius norm.

    ``W`` (samples x rank) holds the per-sample coefficients, ``H`` the basis.
    """
    X, _ = _as_matrix(X)
    if np.any(X < 0):
        raise NegativeInput("NMF input must be non-negative")
    n, d = X.shape
    rank = int(rank)
    rng = np.random.default_rng(seed)
    scale = math.sqrt(max(float(X.mean()), _TINY) / rank)
    W = rng.uniform(0, 1, (n, rank)) * scale
    H = rng.uniform(0, 1, (rank, d)) * scale
    history = [_frob(X, W, H)]
    for _ in range(int(iters)):
        H *= (W.T @ X) / np.maximum(W.T @ W @ H, _TINY)
        W *= (X @ H.T) / np.maximum(W @ (H @ H.T), _TINY)
        history.append(_frob(X, W, H))
    return FittedExtractor(
        "NMF",
        {"rank": rank, "iters": int(iters), "seed": seed},
        {"basis": H, "coefficients": W, "history": np.array(history)},
    )


def nmf_transform(f: FittedExtractor, X) -> FeatureMatrix:
    X, ids = _as_matrix(X)
    H = f.arrays["basis"]
    if X.shape[1] != H.shape[1]:
        raise DimMismatch(f"input dim {X.shape[1]} != fitted dim {H.shape[1]}")
    if np.any(X < 0):
        raise NegativeInput("NMF input must be non-negative")
    rng = np.random.default_rng(int(f.params.get("seed", 0)))
    W = rng.uniform(0, 1, (X.shape[0], H.shape[0]))
    HHt = H @ H.T
    for _ in range(int(f.params.get("iters", 200))):
        W *= (X @ H.T) / np.maximum(W @ HHt, _TINY)
    return FeatureMatrix(W, ids, tuple(f"NMF{j + 1}" for j in range(H.shape[0])))


# -- peaks and summary statistics ------------------------------------------------------------


@dataclass(frozen=True)
class Peak:
    location: float
    height: float
    prominence: float
    index: int


def _prominences(y: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    out = np.empty(peaks.size)
    for k, i in enumerate(peaks):
        h = y[i]
        j = i
        left_min = h
        while j > 0 and y[j - 1] <= h:
            j -= 1
            left_min = min(left_min, y[j])
        j = i
        right_min = h
        while j < y.size - 1 and y[j + 1] <= h:
            j += 1
            right_min = min(right_min, y[j])
        out[k] = h - max(left_min, right_min)
    return out


def detect_peaks(s: Spectrum, prominence: float, max_peaks: int | None = None) -> list[Peak]:
    """Strict local maxima whose topographic prominence reaches ``prominence``,
    most prominent first."""
    if not prominence > 0:
        raise ValueError("prominence must be > 0")
    y = s.intensities
    idx = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])) + 1
    prom = _prominences(y, idx)
    keep = prom >= prominence
    peaks = [
        Peak(float(s.wavelengths[i]), float(y[i]), float(p), int(i))
        for i, p in zip(idx[keep], prom[keep])
    ]
    peaks.sort(key=lambda pk: (-pk.prominence, pk.index))
    return peaks if max_peaks is None else peaks[: int(max_peaks)]


STATS_NAMES = ("mean", "std", "min", "max", "skewness", "excess_kurtosis", "area", "n_peaks")


def summarize_stats(s: Spectrum) -> np.ndarray:
    """Eight summary numbers; moments of a constant spectrum are defined as 0.

    Skewness and kurtosis are the population moment ratios. Peaks are counted
    at a prominence of 5 % of the intensity range.
    """
    y = s.intensities
    if y.size < 2:
        raise ValueError("summary statistics need at least 2 points")
    mean = float(y.mean())
    dev = y - mean
    m2 = float(np.mean(dev**2))
    rng = float(y.max() - y.min())
    if m2 > 0 and rng > 0:
        skew = float(np.mean(dev**3)) / m2**1.5
        kurt = float(np.mean(dev**4)) / m2**2 - 3.0
        n_peaks = len(detect_peaks(s, 0.05 * rng))
    else:
        skew = kurt = 0.0
        n_peaks = 0
    return np.array([
        mean,
        float(np.std(y, ddof=1)),
        float(y.min()),
        float(y.max()),
        skew,
        kurt,
        float(np.trapezoid(y, s.wavelengths)),
        float(n_peaks),
    ])


# -- generic dispatch used by the pipeline ------------------------------------------------------


def fit_extractor(spec: FeatureSpec, ds: SpectralDataset, y=None) -> FittedExtractor:
    """Fit ``spec`` on a (preprocessed) training dataset."""
    p = spec.params
    X = ds.X
    if spec.kind == "PCA":
        return pca_fit(X, p["n_components"])
    if spec.kind == "PLS":
        if y is None:
            raise ValueError("PLS features need numeric responses")
        return pls_fit(X, y, p["n_latent"])
    if spec.kind == "NMF":
        return nmf_fit(X, p["rank"], p["iters"], p["seed"])
    if spec.kind == "LambertBeerPearson":
        if y is None:
            raise ValueError("Lambert-Beer-Pearson features need numeric responses")
        curves = build_reference_curves(X, y, p["n_bins"])
        if len(curves) < p["n_top"]:
            raise ValueError(f"only {len(curves)} reference curves for n_top={p['n_top']}")
        return FittedExtractor(
            "LambertBeerPearson",
            dict(p),
            {"references": np.array([c for _, c in curves])},
            {"reference_ids": [rid for rid, _ in curves]},
        )
    return FittedExtractor(spec.kind, dict(p), {"wavelengths": np.asarray(ds.wavelengths)})


def transform(f: FittedExtractor, ds: SpectralDataset) -> FeatureMatrix:
    p = f.params
    if f.kind == "PCA":
        return pca_transform(f, ds)
    if f.kind == "PLS":
        return pls_transform(f, ds)
    if f.kind == "NMF":
        return nmf_transform(f, ds)
    ids = tuple(ds.ids)
    if f.kind == "LambertBeerPearson":
        refs = list(zip(f.meta["reference_ids"], f.arrays["references"]))
        rows = [pearson_features(s, refs, p["n_top"])[0].rows[0] for s in ds.spectra]
        return FeatureMatrix(np.array(rows).reshape(len(ids), -1), ids,
                             tuple(f"r{j + 1}" for j in range(p["n_top"])))
    if f.kind == "CWT":
        rows = [cwt_features(s, p["scales"]) for s in ds.spectra]
        names = rows[0].feature_names if rows else ()
        return FeatureMatrix(np.array([r.rows[0] for r in rows]).reshape(len(ids), -1), ids, names)
    if f.kind == "Peaks":
        k = int(p["max_peaks"])
        rows = []
        for s in ds.spectra:
            rng = float(np.ptp(s.intensities))
            found = detect_peaks(s, p["prominence"] * rng, k) if rng > 0 else []
            locs = [pk.location for pk in found] + [0.0] * (k - len(found))
            heights = [pk.height for pk in found] + [0.0] * (k - len(found))
            rows.append(locs + heights)
        names = tuple(f"peak{j + 1}_loc" for j in range(k)) + tuple(f"peak{j + 1}_height" for j in range(k))
        return FeatureMatrix(np.array(rows).reshape(len(ids), -1), ids, names)
    if f.kind == "Stats":
        rows = [summarize_stats(s) for s in ds.spectra]
        return FeatureMatrix(np.array(rows).reshape(len(ids), -1), ids, STATS_NAMES)
    raise ValueError(f"unknown extractor kind {f.kind!r}")
