"""Seeded generators for the bundled demonstration data.

Nothing here imitates a real instrument closely; the generators only need
spectra with the right qualitative structure (class-specific bands, sloping
baselines, scatter, noise) and corpora with the right lexical structure.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import FeatureMatrix, Label, SpectralDataset, Spectrum, TaskType
from .kb import KbRecord


def _gauss(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def ink_like(n_per_class: int = 20, n_classes: int = 4, seed: int = 0, step: float = 5.0,
             spread: float = 8.0, noise: float = 0.02) -> SpectralDataset:
    """Classification spectra on 400-1700 nm.

    All classes share four absorption bands; each class shifts the band centres
    by about ``spread`` nm and rescales their heights, so classes overlap
    partially. Samples add band jitter, multiplicative scatter, an offset, a
    sloping baseline and white noise.
    """
    rng = np.random.default_rng(seed)
    wl = np.arange(400.0, 1700.0 + step / 2, step)
    base_centres = rng.uniform(450, 1650, size=4)
    widths = rng.uniform(30, 90, size=4)
    base_heights = rng.uniform(0.3, 1.0, size=4)
    centres = base_centres + rng.normal(0, spread, size=(n_classes, 4))
    heights = base_heights * rng.uniform(0.8, 1.2, size=(n_classes, 4))
    ramp = (wl - wl[0]) / (wl[-1] - wl[0])
    spectra, labels = [], []
    for c in range(n_classes):
        for j in range(n_per_class):
            h = heights[c] * rng.uniform(0.85, 1.15, size=4)
            mu = centres[c] + rng.normal(0, 4, size=4)
            y = sum(hk * _gauss(wl, mk, wk) for hk, mk, wk in zip(h, mu, widths))
            y = y * rng.uniform(0.8, 1.2) + rng.uniform(0.05, 0.3) + rng.uniform(-0.2, 0.2) * ramp
            y = y + rng.normal(0, noise, size=wl.size)
            spectra.append(Spectrum(wl, y, f"ink{c + 1}-{j + 1:02d}"))
            labels.append(Label(cls=f"brand{c + 1}"))
    return SpectralDataset(spectra, labels, "stamp pad ink", TaskType.CLASSIFICATION, wl)


def cod_like(n: int = 60, seed: int = 0, step: float = 5.0) -> SpectralDataset:
    """UV-VIS-NIR absorbance spectra (190-1100 nm) whose band shape shifts with
    chemical oxygen demand: an organic band grows with COD while an interferent
    band does not, on top of a drifting baseline."""
    rng = np.random.default_rng(seed)
    wl = np.arange(190.0, 1100.0 + step / 2, step)
    organic = _gauss(wl, 254, 30) + 0.4 * _gauss(wl, 330, 60)
    interferent = _gauss(wl, 220, 15) + 0.3 * _gauss(wl, 700, 120)
    cod = np.sort(rng.uniform(10, 300, size=n))
    rng.shuffle(cod)
    spectra, labels = [], []
    for i, c in enumerate(cod):
        k = rng.uniform(0.5, 1.5)
        a = c / 100 * organic + k * interferent
        a = a + rng.uniform(0.0, 0.2) + rng.uniform(-0.1, 0.1) * (wl - wl[0]) / (wl[-1] - wl[0])
        a = a + rng.normal(0, 0.005, size=wl.size)
        spectra.append(Spectrum(wl, a, f"w{i + 1:03d}"))
        labels.append(Label(value=round(float(c), 2), unit="mg/L"))
    return SpectralDataset(spectra, labels, "waste water COD", TaskType.REGRESSION, wl)


def islands(n_broad: int = 100, n_islands: int = 25, island_size: int = 3, seed: int = 0,
            radius: float = 0.03) -> tuple[FeatureMatrix, dict]:
    """Two-class feature set where one class is easy to under-cover.

    Class ``A`` fills a 10 x 10 square broadly. Class ``B`` is a set of tight
    islands scattered inside A's region. An island with no training member is
    invisible to a nearest-neighbour reader until one of its validation members
    is shown as an exemplar.
    """
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 10, size=(n_broad, 2))
    centres = rng.uniform(0.5, 9.5, size=(n_islands, 2))
    B = np.vstack([c + rng.normal(0, radius, size=(island_size, 2)) for c in centres])
    rows = np.vstack([A, B])
    ids = [f"a{i:03d}" for i in range(n_broad)] + [
        f"b{i:02d}{j}" for i in range(n_islands) for j in range(island_size)
    ]
    truth = {i: ("A" if i.startswith("a") else "B") for i in ids}
    return FeatureMatrix(rows, ids, ("f1", "f2")), truth


# -- retrieval corpus -----------------------------------------------------------------------

TOPICS = {
    "ink": (10, ["stamp pad ink", "red stamp ink", "seal ink", "stamp pad ink brand"],
            ["document", "forensic", "dye", "pigment", "seal", "questioned", "stamp", "brand"]),
    "water": (20, ["waste water", "wastewater COD", "water quality", "river water", "influent water"],
              ["chemical", "oxygen", "demand", "cod", "effluent", "sewage", "turbidity", "nitrate"]),
    "medicine": (10, ["Chinese medicine", "traditional Chinese medicine", "Lonicerae Japonicae Flos",
                      "Chinese herbal medicine"],
                 ["herbal", "adulteration", "honeysuckle", "lonicerae", "flos", "authenticity", "decoction"]),
    "tea": (10, ["Pu'er tea", "Puer tea", "Pu'er tea origin", "dark tea"],
            ["yunnan", "fermentation", "leaf", "catechin", "geographical", "origin", "storage"]),
}

GENERIC = ["near", "infrared", "spectroscopy", "spectral", "analysis", "classification",
           "detection", "rapid", "nondestructive", "quantitative", "model", "method",
           "prediction", "identification", "determination", "nir", "spectra", "chemometrics"]

NOISE_MATERIALS = ["apple", "soil", "wheat", "milk", "honey", "coffee", "olive oil", "cotton",
                   "plastic", "polymer", "wood", "rice", "maize", "meat", "fish", "wine", "beer",
                   "tobacco", "pharmaceutical tablet", "blood plasma", "mineral", "coal", "gasoline",
                   "diesel", "cement", "textile", "paper", "leather", "seed", "fruit", "sugar",
                   "starch", "oil seed", "potato", "tomato", "citrus", "grape", "strawberry",
                   "mango", "banana", "peanut", "soybean", "barley", "oat", "sorghum", "cocoa",
                   "vanilla", "saffron", "ginseng", "mushroom"]

TECHNIQUES = ["near infrared spectroscopy", "NIR spectroscopy", "mid infrared spectroscopy",
              "FTIR spectroscopy", "UV-Vis-NIR spectroscopy", "hyperspectral imaging",
              "Raman spectroscopy"]


def retrieval_corpus(seed: int = 0, n_noise: int = 150, n_queries: int = 100):
    """Synthetic literature corpus and labelled queries.

    Relevant records name their material once and otherwise use topic-specific
    vocabulary; noise records are short, name an unrelated material and repeat
    the generic spectroscopy words that every query also contains. Returns
    ``(records, queries)`` with queries as ``(text, relevant_ids)`` pairs.
    """
    rng = np.random.default_rng(seed)
    records: list[KbRecord] = []
    relevant: dict[str, list[str]] = {}

    def pick(words, k):
        return [words[i] for i in rng.choice(len(words), size=k, replace=False)]

    for topic, (count, labels, vocab) in TOPICS.items():
        relevant[topic] = []
        for j in range(count):
            rid = f"{topic}-{j + 1:02d}"
            focus = f"{labels[j % len(labels)]} {' '.join(pick(vocab, 3))}"
            technique = str(rng.choice(TECHNIQUES))
            bands = f"{int(rng.integers(4, 10)) * 100}-{int(rng.integers(11, 25)) * 100} nm"
            records.append(KbRecord(rid, focus, technique, bands))
            relevant[topic].append(rid)
    for j in range(n_noise):
        mat = NOISE_MATERIALS[j % len(NOISE_MATERIALS)]
        focus = f"{mat} {' '.join(pick(GENERIC, 5))}"
        records.append(KbRecord(f"noise-{j + 1:03d}", focus, str(rng.choice(TECHNIQUES)),
                                f"{int(rng.integers(4, 10)) * 100}-{int(rng.integers(11, 25)) * 100} nm"))

    queries = []
    topics = list(TOPICS)
    for q in range(n_queries):
        topic = topics[q % len(topics)]
        label = TOPICS[topic][1][int(rng.integers(len(TOPICS[topic][1])))]
        text = f"{label} {' '.join(pick(GENERIC, 4))}"
        queries.append((text, list(relevant[topic])))
    return records, queries


def write_queries(queries, path) -> None:
    with open(path, "w") as fh:
        for text, rel in queries:
            fh.write(json.dumps({"query": text, "relevant": rel}) + "\n")


def read_queries(path) -> list[tuple[str, list[str]]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            obj = json.loads(line)
            out.append((obj["query"], obj["relevant"]))
    return out
