import json
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iragent.core import (
    FeatureMatrix,
    Label,
    SpectralDataset,
    Spectrum,
    TaskType,
    build_anomaly_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
    split_indices,
)
from iragent.errors import (
    InsufficientReferenceSamples,
    LengthMismatch,
    MissingLabel,
    NonUniformGrid,
    ParseError,
    TooFewSamples,
)

from conftest import make_dataset


def write_csv(path, header, rows, labels):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    path.with_name(path.stem + ".labels.json").write_text(json.dumps(labels))


# -- types ---------------------------------------------------------------------


def test_spectrum_rejects_short_and_unsorted():
    with pytest.raises(LengthMismatch):
        Spectrum(np.arange(4.0), np.zeros(4), "short")
    with pytest.raises(NonUniformGrid):
        Spectrum(np.array([1.0, 2, 3, 3, 5]), np.zeros(5), "dup")
    with pytest.raises(ParseError):
        Spectrum(np.arange(5.0), np.array([0, 1, np.nan, 0, 0]), "nan")


def test_spectrum_step_and_uniformity():
    s = Spectrum(np.arange(400.0, 450.0, 5.0), np.zeros(10))
    assert s.step == 5.0 and s.is_uniform
    t = Spectrum(np.array([0.0, 1, 2, 4, 8]), np.zeros(5))
    assert not t.is_uniform


def test_label_requires_exactly_one_field():
    with pytest.raises(ValueError):
        Label()
    with pytest.raises(ValueError):
        Label(cls="a", flag=True)
    with pytest.raises(ValueError):
        Label(value=float("inf"))
    assert Label(value=3, unit="mg/L").to_json() == {"value": 3.0, "unit": "mg/L"}


def test_dataset_rejects_mixed_grids_and_label_kinds():
    a = Spectrum(np.arange(5.0), np.ones(5), "a")
    b = Spectrum(np.arange(1.0, 6.0), np.ones(5), "b")
    with pytest.raises(NonUniformGrid):
        SpectralDataset([a, b], [Label(cls="x"), Label(cls="y")])
    with pytest.raises(ParseError):
        SpectralDataset([a], [Label(value=1.0)], task=TaskType.CLASSIFICATION)


def test_feature_matrix_invariants():
    fm = FeatureMatrix([[1, 2], [3, 4]], ("a", "b"))
    assert fm.dim == 2 and fm.feature_names == ("f1", "f2")
    assert fm.select(["b"]).rows.tolist() == [[3.0, 4.0]]
    with pytest.raises(ParseError):
        FeatureMatrix([[1.0, np.inf]])
    with pytest.raises(LengthMismatch):
        FeatureMatrix([[1.0, 2.0]], ("a", "b"))
    assert fm.digest() == FeatureMatrix([[1, 2], [3, 4]], ("a", "b")).digest()
    assert fm.digest() != FeatureMatrix([[1, 2], [3, 5]], ("a", "b")).digest()


# -- loading -------------------------------------------------------------------


def test_load_two_sample_csv(tmp_path):
    p = tmp_path / "d.csv"
    rows = [[400 + 5 * i, i, 2 * i] for i in range(6)]
    write_csv(p, ["wavelength", "x1", "x2"], rows, {"x1": {"class": "a"}, "x2": {"class": "b"}})
    ds = load_dataset(p)
    assert len(ds) == 2 and ds.ids == ["x1", "x2"]
    assert ds.spectra[1].intensities.tolist() == [0, 2, 4, 6, 8, 10]
    assert ds.task is TaskType.CLASSIFICATION


def test_load_non_monotone_wavelengths(tmp_path):
    p = tmp_path / "d.csv"
    rows = [[400, 1], [405, 1], [403, 1], [410, 1], [415, 1]]
    write_csv(p, ["wavelength", "x1"], rows, {"x1": {"class": "a"}})
    with pytest.raises(NonUniformGrid, match="row 4"):
        load_dataset(p)


def test_load_missing_label_names_id(tmp_path):
    p = tmp_path / "d.csv"
    rows = [[400 + i, 1, 2] for i in range(5)]
    write_csv(p, ["wavelength", "x1", "x2"], rows, {"x1": {"class": "a"}})
    with pytest.raises(MissingLabel, match="x2"):
        load_dataset(p)


def test_load_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("wavelength,x1\n1,2\n2\n")
    (tmp_path / "d.labels.json").write_text('{"x1": {"class": "a"}}')
    with pytest.raises(LengthMismatch):
        load_dataset(p)


def test_nonuniform_grid_loads(tmp_path):
    p = tmp_path / "d.csv"
    rows = [[w, 1.0] for w in (1, 2, 4, 8, 16)]
    write_csv(p, ["wavelength", "x1"], rows, {"x1": {"class": "a"}})
    ds = load_dataset(p)
    assert not ds.spectra[0].is_uniform


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_save_load_round_trip_bit_exact(tmp_path, fmt):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4, 7)) * 1e3
    wl = np.linspace(900.123, 1700.987, 7)
    labels = [Label(value=float(v), unit="mg/L") for v in rng.uniform(0, 100, 4)]
    ds = SpectralDataset.from_matrix(wl, X, ["a", "b", "c", "d"], labels, "water",
                                     TaskType.REGRESSION)
    path = tmp_path / f"d.{fmt}"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.X, ds.X)
    assert np.array_equal(back.wavelengths, ds.wavelengths)
    assert back.labels == ds.labels and back.material == "water"
    assert back.task is TaskType.REGRESSION


# -- splitting -----------------------------------------------------------------


def test_split_80_samples_seed_7():
    ds = make_dataset(np.zeros((80, 5)), [f"c{i % 4}" for i in range(80)])
    sp = split_dataset(ds, (4, 2, 2), seed=7)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (40, 20, 20)
    assert not set(sp.train) & set(sp.validation)
    assert not set(sp.train) & set(sp.test)
    assert not set(sp.validation) & set(sp.test)


def test_split_8_samples():
    ds = make_dataset(np.zeros((8, 5)), list("aaaabbbb"))
    sp = split_dataset(ds, (4, 2, 2), seed=0)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (4, 2, 2)


def test_split_deterministic():
    targets = [f"c{i % 3}" for i in range(31)]
    assert split_indices("classification", targets, seed=11) == split_indices(
        "classification", targets, seed=11)


def test_split_too_few():
    with pytest.raises(TooFewSamples):
        split_indices("classification", list("aaabbbb"))
    with pytest.raises(TooFewSamples):
        split_indices("classification", list("aaaaaaab"))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(2, 12), min_size=1, max_size=5), st.integers(0, 10_000))
def test_split_partitions_and_stratification(class_sizes, seed):
    targets = [f"c{k}" for k, n in enumerate(class_sizes) for _ in range(n)]
    if len(targets) < 8:
        targets += ["c0"] * (8 - len(targets))
    sp = split_indices("classification", targets, (4, 2, 2), seed)
    parts = [set(sp.train), set(sp.validation), set(sp.test)]
    assert sum(len(p) for p in parts) == len(targets)
    assert set().union(*parts) == set(range(len(targets)))
    counts = Counter(targets)
    for part, share in zip(parts, (0.5, 0.25, 0.25)):
        got = Counter(targets[i] for i in part)
        for c, n in counts.items():
            assert abs(got[c] - n * share) <= 1 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(8, 200), st.integers(0, 1000))
def test_regression_split_sizes(n, seed):
    sp = split_indices("regression", list(range(n)), (4, 2, 2), seed)
    sizes = [len(sp.train), len(sp.validation), len(sp.test)]
    assert sum(sizes) == n
    for size, share in zip(sizes, (0.5, 0.25, 0.25)):
        assert abs(size - n * share) < 1


# -- anomaly sets --------------------------------------------------------------


def _four_class(n_ref=60, n_other=40, d=12, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_ref + n_other, d)) + 5
    classes = ["ref"] * n_ref + [f"o{i % 3}" for i in range(n_other)]
    return make_dataset(X, classes)


def test_anomaly_counts_60_20_20():
    ds = _four_class()
    an = build_anomaly_dataset(ds, "ref", seed=1, n_total=100)
    flags = [lab.flag for lab in an.labels]
    assert flags.count(True) == 60 and flags.count(False) == 40
    intra = [s for s in an.spectra if "~p" in s.id]
    assert len(intra) == 20
    ref_ids = {s.id for s, lab in zip(ds.spectra, ds.labels) if lab.cls == "ref"}
    inter = [s for s, lab in zip(an.spectra, an.labels)
             if not lab.flag and "~p" not in s.id]
    assert len(inter) == 20 and not {s.id for s in inter} & ref_ids


def test_anomaly_zero_noise_warns_and_copies():
    ds = _four_class()
    with pytest.warns(UserWarning, match="noise_scale=0"):
        an = build_anomaly_dataset(ds, "ref", seed=2, noise_scale=0.0, n_total=50)
    by_id = {s.id: s for s in ds.spectra}
    for s in an.spectra:
        if "~p" in s.id:
            assert np.array_equal(s.intensities, by_id[s.id.split("~")[0]].intensities)


def test_anomaly_deterministic():
    ds = _four_class()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = build_anomaly_dataset(ds, "ref", seed=5)
        b = build_anomaly_dataset(ds, "ref", seed=5)
    assert np.array_equal(a.X, b.X) and a.ids == b.ids


def test_anomaly_perturbation_scale():
    ds = _four_class(n_ref=300, n_other=100, d=6, seed=9)
    an = build_anomaly_dataset(ds, "ref", seed=3, noise_scale=0.05)
    by_id = {s.id: s for s in ds.spectra}
    diffs = np.array([s.intensities - by_id[s.id.split("~")[0]].intensities
                      for s in an.spectra if "~p" in s.id])
    sigma = ds.X[:300].std(axis=0, ddof=1) * 0.05
    ratio = diffs.std(axis=0, ddof=1) / sigma
    assert np.all(np.abs(ratio - 1) < 0.25)


def test_anomaly_insufficient_reference():
    ds = _four_class(n_ref=2, n_other=40)
    with pytest.raises(InsufficientReferenceSamples):
        build_anomaly_dataset(ds, "ref")
    with pytest.raises(InsufficientReferenceSamples):
        build_anomaly_dataset(ds, "absent")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12))
def test_anomaly_counts_any_multiple_of_five(k):
    ds = _four_class(n_ref=40, n_other=20, d=6)
    an = build_anomaly_dataset(ds, "ref", seed=k, n_total=5 * k)
    flags = [lab.flag for lab in an.labels]
    assert flags.count(True) == 3 * k
    assert sum("~p" in s.id for s in an.spectra) == k
