"""Domain types, dataset I/O, splitting and anomaly-set construction."""

from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    InsufficientReferenceSamples,
    LengthMismatch,
    MissingLabel,
    NonUniformGrid,
    ParseError,
    TooFewSamples,
)

MIN_SPECTRUM_LENGTH = 5
UNIFORM_RTOL = 1e-6
META_KEY = "_meta"


class TaskType(str, enum.Enum):
    CLASSIFICATION = "classification"
    ANOMALY_DETECTION = "anomaly_detection"
    REGRESSION = "regression"

    @classmethod
    def parse(cls, value: "str | TaskType") -> "TaskType":
        if isinstance(value, TaskType):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        for member in cls:
            if member.value == key or member.name.lower() == key:
                return member
        raise ValueError(f"unknown task type {value!r}")


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise LengthMismatch(f"{name} must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One measured spectrum on a strictly increasing wavelength grid (nm)."""

    wavelengths: np.ndarray
    intensities: np.ndarray
    id: str = ""

    def __post_init__(self):
        wl = _frozen_array(self.wavelengths, "wavelengths")
        y = _frozen_array(self.intensities, "intensities")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "intensities", y)
        if wl.shape != y.shape:
            raise LengthMismatch(
                f"spectrum {self.id!r}: {wl.size} wavelengths vs {y.size} intensities"
            )
        if wl.size < MIN_SPECTRUM_LENGTH:
            raise LengthMismatch(
                f"spectrum {self.id!r}: length {wl.size} < {MIN_SPECTRUM_LENGTH}"
            )
        if not np.all(np.isfinite(wl)):
            raise ParseError(f"spectrum {self.id!r}: non-finite wavelength")
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise ParseError(f"spectrum {self.id!r}: non-finite intensity at index {bad}")
        if np.any(np.diff(wl) <= 0):
            bad = int(np.flatnonzero(np.diff(wl) <= 0)[0]) + 1
            raise NonUniformGrid(
                f"spectrum {self.id!r}: wavelengths not strictly increasing at index {bad}"
            )

    def __len__(self) -> int:
        return self.intensities.size

    @property
    def step(self) -> float:
        """Mean wavelength increment."""
        return float((self.wavelengths[-1] - self.wavelengths[0]) / (len(self) - 1))

    @property
    def is_uniform(self) -> bool:
        return grid_is_uniform(self.wavelengths)

    def with_intensities(self, values) -> "Spectrum":
        return Spectrum(self.wavelengths, values, self.id)

    def equals(self, other: "Spectrum") -> bool:
        return (
            self.id == other.id
            and np.array_equal(self.wavelengths, other.wavelengths)
            and np.array_equal(self.intensities, other.intensities)
        )


def grid_is_uniform(wavelengths: np.ndarray) -> bool:
    steps = np.diff(wavelengths)
    mean = (wavelengths[-1] - wavelengths[0]) / steps.size
    return bool(np.max(np.abs(steps - mean)) < UNIFORM_RTOL * abs(mean))


@dataclass(frozen=True)
class Label:
    """Exactly one of ``cls``, ``flag`` or ``value`` is set."""

    cls: str | None = None
    flag: bool | None = None
    value: float | None = None
    unit: str = ""

    def __post_init__(self):
        n_set = sum(x is not None for x in (self.cls, self.flag, self.value))
        if n_set != 1:
            raise ValueError("a label carries exactly one of class, flag or value")
        if self.value is not None:
            object.__setattr__(self, "value", float(self.value))
            if not math.isfinite(self.value):
                raise ValueError("regression label must be finite")
        if self.cls is not None:
            object.__setattr__(self, "cls", str(self.cls))
        if self.flag is not None:
            object.__setattr__(self, "flag", bool(self.flag))

    @property
    def task(self) -> TaskType:
        if self.cls is not None:
            return TaskType.CLASSIFICATION
        if self.flag is not None:
            return TaskType.ANOMALY_DETECTION
        return TaskType.REGRESSION

    @property
    def target(self):
        if self.cls is not None:
            return self.cls
        if self.flag is not None:
            return self.flag
        return self.value

    def to_json(self) -> dict:
        if self.cls is not None:
            return {"class": self.cls}
        if self.flag is not None:
            return {"flag": self.flag}
        out = {"value": self.value}
        if self.unit:
            out["unit"] = self.unit
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Label":
        if not isinstance(obj, dict):
            raise ParseError(f"label must be an object, got {obj!r}")
        if "class" in obj:
            return cls(cls=obj["class"])
        if "flag" in obj:
            if not isinstance(obj["flag"], bool):
                raise ParseError(f"flag label must be boolean, got {obj['flag']!r}")
            return cls(flag=obj["flag"])
        if "value" in obj:
            try:
                return cls(value=float(obj["value"]), unit=str(obj.get("unit", "")))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad regression label {obj!r}: {exc}") from exc
        raise ParseError(f"label needs one of class/flag/value: {obj!r}")

    @classmethod
    def for_task(cls, task: TaskType, target, unit: str = "") -> "Label":
        task = TaskType.parse(task)
        if task is TaskType.CLASSIFICATION:
            return cls(cls=target)
        if task is TaskType.ANOMALY_DETECTION:
            return cls(flag=target)
        return cls(value=target, unit=unit)


@dataclass(frozen=True, eq=False)
class SpectralDataset:
    spectra: tuple
    labels: tuple
    material: str = ""
    task: TaskType = TaskType.CLASSIFICATION
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        spectra = tuple(self.spectra)
        labels = tuple(self.labels)
        object.__setattr__(self, "spectra", spectra)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "task", TaskType.parse(self.task))
        if len(spectra) != len(labels):
            raise LengthMismatch(f"{len(spectra)} spectra but {len(labels)} labels")
        if spectra:
            grid = spectra[0].wavelengths
            for s in spectra[1:]:
                if not np.array_equal(s.wavelengths, grid):
                    raise NonUniformGrid(f"sample {s.id!r} does not share the dataset grid")
            object.__setattr__(self, "wavelengths", grid)
        elif self.wavelengths is not None:
            object.__setattr__(self, "wavelengths", _frozen_array(self.wavelengths, "wavelengths"))
        ids = [s.id for s in spectra]
        if len(set(ids)) != len(ids):
            raise ParseError("sample ids must be unique")
        for s, lab in zip(spectra, labels):
            if lab.task is not self.task:
                raise ParseError(
                    f"sample {s.id!r}: {lab.task.value} label in a {self.task.value} dataset"
                )

    def __len__(self) -> int:
        return len(self.spectra)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.spectra]

    @property
    def X(self) -> np.ndarray:
        if not self.spectra:
            n = 0 if self.wavelengths is None else self.wavelengths.size
            return np.zeros((0, n))
        return np.vstack([s.intensities for s in self.spectra])

    @property
    def targets(self) -> list:
        return [lab.target for lab in self.labels]

    @property
    def classes(self) -> list[str]:
        return sorted({lab.cls for lab in self.labels if lab.cls is not None})

    def subset(self, indices: Iterable[int]) -> "SpectralDataset":
        idx = list(indices)
        return SpectralDataset(
            [self.spectra[i] for i in idx],
            [self.labels[i] for i in idx],
            self.material,
            self.task,
            self.wavelengths,
        )

    def with_matrix(self, X: np.ndarray) -> "SpectralDataset":
        """Same samples and labels with new intensity rows."""
        X = np.asarray(X, dtype=float)
        spectra = [s.with_intensities(row) for s, row in zip(self.spectra, X)]
        return SpectralDataset(spectra, self.labels, self.material, self.task, self.wavelengths)

    @classmethod
    def from_matrix(cls, wavelengths, X, ids, labels, material="", task=None):
        labels = list(labels)
        if task is None:
            task = labels[0].task if labels else TaskType.CLASSIFICATION
        spectra = [Spectrum(wavelengths, row, str(i)) for i, row in zip(ids, np.asarray(X, float))]
        return cls(spectra, labels, material, task, np.asarray(wavelengths, float))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray
    ids: tuple = ()
    feature_names: tuple = ()

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.ndim != 2:
            raise LengthMismatch("feature rows must form a 2-D array")
        if not np.all(np.isfinite(rows)):
            raise ParseError("feature matrix contains non-finite entries")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        ids = tuple(str(i) for i in self.ids) or tuple(str(i) for i in range(rows.shape[0]))
        names = tuple(self.feature_names) or tuple(f"f{j + 1}" for j in range(rows.shape[1]))
        if len(ids) != rows.shape[0]:
            raise LengthMismatch(f"{len(ids)} ids for {rows.shape[0]} rows")
        if len(names) != rows.shape[1]:
            raise LengthMismatch(f"{len(names)} feature names for dim {rows.shape[1]}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", names)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def row(self, sample_id: str) -> np.ndarray:
        return self.rows[self.ids.index(sample_id)]

    def select(self, ids: Sequence[str]) -> "FeatureMatrix":
        pos = {i: k for k, i in enumerate(self.ids)}
        return FeatureMatrix(self.rows[[pos[i] for i in ids]], tuple(ids), self.feature_names)

    def digest(self) -> str:
        """Stable content hash used to check that two consumers saw the same input."""
        import hashlib

        h = hashlib.sha256()
        h.update(json.dumps([list(self.ids), list(self.feature_names)]).encode())
        h.update(np.ascontiguousarray(self.rows, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Split:
    train: tuple
    validation: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        parts = [set(self.train), set(self.validation), set(self.test)]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise ValueError("split partitions overlap")

    def ids(self, all_ids: Sequence[str]) -> dict[str, list[str]]:
        return {
            "train": [all_ids[i] for i in self.train],
            "validation": [all_ids[i] for i in self.validation],
            "test": [all_ids[i] for i in self.test],
        }

    def to_json(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}


# -- I/O ------------------------------------------------------------------------------


def default_labels_path(path: Path) -> Path:
    return path.with_name(path.stem + ".labels.json")


def load_dataset(path, format: str | None = None, labels_path=None,
                 material: str | None = None, task=None) -> SpectralDataset:
    """Read a dataset from CSV (+ sidecar label JSON) or a single JSON file.

    CSV layout is ``wavelength,<id1>,<id2>,...`` with one row per wavelength.
    The sidecar maps each id to ``{"class"|"flag"|"value": ...}``; an optional
    ``"_meta"`` entry carries ``material`` and ``task``.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    if fmt == "csv":
        wavelengths, ids, columns = _read_csv(path)
        lp = Path(labels_path) if labels_path else default_labels_path(path)
        try:
            sidecar = json.loads(lp.read_text())
        except FileNotFoundError:
            raise ParseError(f"{lp}: label sidecar not found") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"{lp}: invalid JSON ({exc})") from None
        meta = sidecar.get(META_KEY, {})
        label_objs = {}
        for sid in ids:
            if sid not in sidecar:
                raise MissingLabel(f"sample {sid!r} has no entry in {lp.name}")
            label_objs[sid] = sidecar[sid]
    elif fmt == "json":
        try:
            doc = json.loads(path.read_text())
            wavelengths = [float(w) for w in doc["wavelengths"]]
            ids = [str(s["id"]) for s in doc["samples"]]
            columns = [[float(v) for v in s["intensities"]] for s in doc["samples"]]
            meta = {"material": doc.get("material", ""), "task": doc.get("task")}
            label_objs = {}
            for s in doc["samples"]:
                if "label" not in s:
                    raise MissingLabel(f"sample {s['id']!r} has no label")
                label_objs[str(s["id"])] = s["label"]
        except MissingLabel:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed dataset JSON ({exc})") from None
        wl = np.asarray(wavelengths)
        if np.any(np.diff(wl) <= 0):
            raise NonUniformGrid(f"{path}: wavelengths not strictly increasing")
        for sid, col in zip(ids, columns):
            if len(col) != len(wavelengths):
                raise LengthMismatch(f"sample {sid!r}: {len(col)} values for {len(wavelengths)} wavelengths")
    else:
        raise ParseError(f"unsupported dataset format {fmt!r}")

    labels = [Label.from_json(label_objs[sid]) for sid in ids]
    if task is None:
        task = meta.get("task")
    if task is None:
        kinds = {lab.task for lab in labels}
        if len(kinds) > 1:
            raise ParseError(f"{path}: mixed label kinds {sorted(k.value for k in kinds)}")
        task = kinds.pop() if kinds else TaskType.CLASSIFICATION
    spectra = [Spectrum(wavelengths, col, sid) for sid, col in zip(ids, columns)]
    return SpectralDataset(
        spectra, labels, material if material is not None else meta.get("material", ""),
        TaskType.parse(task), np.asarray(wavelengths, float),
    )


def _read_csv(path: Path):
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "wavelength":
            raise ParseError(f"{path}: header must start with 'wavelength'")
        ids = [h.strip() for h in header[1:]]
        if len(set(ids)) != len(ids):
            raise ParseError(f"{path}: duplicate sample ids in header")
        wavelengths: list[float] = []
        columns: list[list[float]] = [[] for _ in ids]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LengthMismatch(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise ParseError(f"{path}: row {lineno}: {exc}") from None
            if wavelengths and values[0] <= wavelengths[-1]:
                raise NonUniformGrid(
                    f"{path}: wavelength column not strictly increasing at row {lineno}"
                )
            wavelengths.append(values[0])
            for col, v in zip(columns, values[1:]):
                col.append(v)
    return wavelengths, ids, columns


def save_dataset(ds: SpectralDataset, path, format: str | None = None, labels_path=None) -> None:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    wl = [] if ds.wavelengths is None else ds.wavelengths.tolist()
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["wavelength", *ds.ids])
            X = ds.X
            for j, w in enumerate(wl):
                writer.writerow([repr(float(w)), *(repr(float(v)) for v in X[:, j])])
        sidecar = {META_KEY: {"material": ds.material, "task": ds.task.value}}
        for sid, lab in zip(ds.ids, ds.labels):
            sidecar[sid] = lab.to_json()
        lp = Path(labels_path) if labels_path else default_labels_path(path)
        lp.write_text(json.dumps(sidecar, indent=1) + "\n")
    elif fmt == "json":
        doc = {
            "material": ds.material,
            "task": ds.task.value,
            "wavelengths": wl,
            "samples": [
                {"id": s.id, "intensities": s.intensities.tolist(), "label": lab.to_json()}
                for s, lab in zip(ds.spectra, ds.labels)
            ],
        }
        path.write_text(json.dumps(doc) + "\n")
    else:
        raise ParseError(f"unsupported dataset format {fmt!r}")


# -- splitting --------------------------------------------------------------------------


def _target_counts(n: int, ratio: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to earlier parts."""
    total = float(sum(ratio))
    exact = [n * r / total for r in ratio]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(ratio)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[: n - sum(counts)]:
        counts[k] += 1
    return counts


def split_dataset(ds: SpectralDataset, ratio=(4, 2, 2), seed: int = 0) -> Split:
    """Seeded train/validation/test split, stratified by class for classification."""
    return split_indices(ds.task, ds.targets, ratio, seed)


def split_indices(task, targets: Sequence, ratio=(4, 2, 2), seed: int = 0) -> Split:
    """Split ``len(targets)`` items in proportion ``ratio``.

    Classification targets are stratified by class, anomaly targets by flag;
    regression targets are split by a seeded permutation. Within each stratum
    items are shuffled with the seed before being dealt to the partitions.
    """
    task = TaskType.parse(task)
    n = len(targets)
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ValueError("ratio must be three positive numbers")
    if n < 8:
        raise TooFewSamples(f"need at least 8 samples to split, got {n}")
    rng = np.random.default_rng(seed)
    overall = _target_counts(n, ratio)

    if task is TaskType.REGRESSION:
        perm = rng.permutation(n)
        a, b = overall[0], overall[0] + overall[1]
        return Split(sorted(perm[:a]), sorted(perm[a:b]), sorted(perm[b:]))

    by_class: dict = {}
    for i, t in enumerate(targets):
        by_class.setdefault(t, []).append(i)
    if task is TaskType.CLASSIFICATION:
        small = [c for c, idx in by_class.items() if len(idx) < 2]
        if small:
            raise TooFewSamples(f"classes with fewer than 2 samples: {sorted(map(str, small))}")
    classes = sorted(by_class, key=str)
    shuffled = {c: list(rng.permutation(by_class[c])) for c in classes}

    total = float(sum(ratio))
    counts = {c: [math.floor(len(by_class[c]) * r / total) for r in ratio] for c in classes}
    deficit = [overall[k] - sum(counts[c][k] for c in classes) for k in range(3)]
    # Leftover items are dealt so the global totals hit their targets while each
    # class gets at most one extra per partition (per-class counts stay within +-1).
    order = [classes[i] for i in rng.permutation(len(classes))]
    order.sort(key=lambda c: -(len(by_class[c]) - sum(counts[c])))
    for c in order:
        left = len(by_class[c]) - sum(counts[c])
        frac = [len(by_class[c]) * r / total - counts[c][k] for k, r in enumerate(ratio)]
        used: set = set()
        for _ in range(left):
            cand = [k for k in range(3) if k not in used and deficit[k] > 0]
            if not cand:
                cand = [k for k in range(3) if deficit[k] > 0] or [0]
            k = max(cand, key=lambda k: (deficit[k], frac[k], -k))
            counts[c][k] += 1
            deficit[k] -= 1
            used.add(k)

    parts: list[list[int]] = [[], [], []]
    for c in classes:
        idx = shuffled[c]
        a, b = counts[c][0], counts[c][0] + counts[c][1]
        parts[0].extend(idx[:a])
        parts[1].extend(idx[a:b])
        parts[2].extend(idx[b:])
    return Split(*(sorted(int(i) for i in p) for p in parts))


# -- anomaly sets -------------------------------------------------------------------------


def build_anomaly_dataset(ds: SpectralDataset, reference_class: str, seed: int = 0,
                          noise_scale: float = 0.05, n_total: int | None = None) -> SpectralDataset:
    """Reference-class normals (60 %), other-class anomalies (20 %) and perturbed
    reference copies (20 %). Normals are labelled ``flag=True``.

    Perturbations add zero-mean Gaussian noise whose per-wavelength standard
    deviation is ``noise_scale`` times the reference class's sample std there.
    ``n_total`` defaults to the largest multiple of 5 the input supports.
    """
    if ds.task is not TaskType.CLASSIFICATION:
        raise ValueError("anomaly sets are built from a classification dataset")
    ref_idx = [i for i, lab in enumerate(ds.labels) if lab.cls == reference_class]
    other_idx = [i for i, lab in enumerate(ds.labels) if lab.cls != reference_class]
    if not ref_idx:
        raise InsufficientReferenceSamples(f"reference class {reference_class!r} not present")
    if n_total is None:
        k = min(len(ref_idx) // 3, len(other_idx))
        n_total = 5 * k
    n_normal = round(0.6 * n_total)
    n_inter = round(0.2 * n_total)
    n_intra = n_total - n_normal - n_inter
    if n_total < 5 or n_normal > len(ref_idx) or len(ref_idx) < 2:
        raise InsufficientReferenceSamples(
            f"{len(ref_idx)} {reference_class!r} samples cannot supply {n_normal} normals"
        )
    if n_inter > len(other_idx):
        raise InsufficientReferenceSamples(
            f"only {len(other_idx)} other-class samples for {n_inter} inter-class anomalies"
        )
    if noise_scale == 0:
        warnings.warn("noise_scale=0: intra-class anomalies equal their sources", stacklevel=2)

    rng = np.random.default_rng(seed)
    X = ds.X
    sigma = X[ref_idx].std(axis=0, ddof=1) * noise_scale
    normals = sorted(rng.choice(ref_idx, n_normal, replace=False).tolist())
    inter = sorted(rng.choice(other_idx, n_inter, replace=False).tolist())
    sources = rng.choice(ref_idx, n_intra, replace=n_intra > len(ref_idx)).tolist()
    noise = rng.standard_normal((n_intra, X.shape[1])) * sigma

    spectra, labels = [], []
    for i in normals:
        spectra.append(ds.spectra[i])
        labels.append(Label(flag=True))
    for i in inter:
        spectra.append(ds.spectra[i])
        labels.append(Label(flag=False))
    for j, (i, eps) in enumerate(zip(sources, noise)):
        src = ds.spectra[i]
        spectra.append(Spectrum(src.wavelengths, src.intensities + eps, f"{src.id}~p{j}"))
        labels.append(Label(flag=False))
    return SpectralDataset(spectra, labels, ds.material, TaskType.ANOMALY_DETECTION, ds.wavelengths)
