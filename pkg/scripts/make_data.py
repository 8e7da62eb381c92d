"""Regenerate the bundled data files in src/iragent/data/.

    python3 scripts/make_data.py [--out DIR]

Every file is a deterministic function of the generators in iragent.synthetic
and the hand-written records below, so rerunning this script is a no-op on a
clean checkout.
"""

import argparse
import json
from pathlib import Path

from iragent.core import build_anomaly_dataset, save_dataset
from iragent.kb import KbRecord, save_kb
from iragent.pipeline import write_features
from iragent.synthetic import cod_like, ink_like, islands, retrieval_corpus, write_queries

DATA = Path(__file__).resolve().parents[1] / "src" / "iragent" / "data"

PCA5 = {"kind": "PCA", "n_components": 5}

# One method record per experimental material, plus unrelated records that a
# query for any of the five materials should rank below its own record.
KB_RECORDS = [
    KbRecord("ink-01", "red stamp pad ink brands", "near infrared spectroscopy", "400-1700 nm",
             ("SG", "SNV"), PCA5, "few-shot LLM classifier", "fixture record: stamp pad ink"),
    KbRecord("tcm-01", "Chinese medicine Lonicerae Japonicae Flos and Lonicerae Flos",
             "near infrared spectroscopy", "900-1700 nm",
             ("SNV", "FD"), PCA5, "few-shot LLM classifier", "fixture record: Chinese medicine"),
    KbRecord("crp-01", "Citri Reticulatae Pericarpium (CRP) storage age",
             "near infrared spectroscopy", "900-1700 nm",
             ("SGFD", "SNV"), PCA5, "few-shot LLM classifier", "fixture record: CRP"),
    KbRecord("tea-01", "Pu'er tea geographical origin", "near infrared spectroscopy", "900-1700 nm",
             ("SNV",), PCA5, "few-shot LLM classifier", "fixture record: Pu'er tea"),
    KbRecord("cod-01", "waste water chemical oxygen demand (COD)", "UV-Vis-NIR absorption spectroscopy",
             "190-1100 nm", ("BC",), {"kind": "LambertBeerPearson", "n_top": 3},
             "few-shot LLM regressor", "fixture record: waste water COD"),
    KbRecord("apple-01", "apple soluble solids content", "visible near infrared spectroscopy",
             "500-1000 nm", ("MSC", "SG"), {"kind": "PLS", "n_latent": 6}, "PLSR",
             "fixture record: apple"),
    KbRecord("soil-01", "soil organic matter", "near infrared spectroscopy", "1000-2500 nm",
             ("SNV", "Detrend"), {"kind": "PLS", "n_latent": 8}, "PLSR", "fixture record: soil"),
    KbRecord("wheat-01", "wheat kernel protein", "near infrared spectroscopy", "850-1050 nm",
             ("SGSD",), PCA5, "SVM", "fixture record: wheat"),
    KbRecord("milk-01", "milk fat adulteration", "mid infrared spectroscopy", "2500-10000 nm",
             ("SNV", "SG"), {"kind": "Stats"}, "random forest", "fixture record: milk"),
    KbRecord("polymer-01", "plastic polymer sorting", "hyperspectral imaging", "900-1700 nm",
             ("MinMax",), {"kind": "CWT", "scales": [4, 8, 16]}, "KNN", "fixture record: polymer"),
]

ENTITY_CASES = [
    ("Classify the brand of red stamp pad ink samples from their NIR spectra.", "stamp pad ink", "classification"),
    ("Which commercial brand produced this stamp pad ink?", "stamp pad ink", "classification"),
    ("Detect counterfeit samples of stamp pad ink using near infrared spectra.", "stamp pad ink", "anomaly_detection"),
    ("Distinguish Lonicerae Japonicae Flos from Lonicerae Flos using NIR spectra.", "Lonicerae Japonicae Flos", "classification"),
    ("Detect adulterated samples of Chinese medicine with infrared spectroscopy.", "Chinese medicine", "anomaly_detection"),
    ("Classify the geographical origin of Pu'er tea samples.", "Pu'er tea", "classification"),
    ("Identify abnormal samples of Pu'er tea from NIR measurements.", "Pu'er tea", "anomaly_detection"),
    ("Classify the storage age of Citri Reticulatae Pericarpium samples.", "Citri Reticulatae Pericarpium", "classification"),
    ("Find outlier spectra of Citri Reticulatae Pericarpium.", "Citri Reticulatae Pericarpium", "anomaly_detection"),
    ("Predict the chemical oxygen demand of waste water samples from UV-Vis-NIR spectra.", "waste water", "regression"),
    ("Estimate the COD concentration of river water samples.", "river water", "regression"),
    ("Predict the soluble solids content of apple samples.", "apple", "regression"),
    ("Quantify the protein content of wheat samples using NIR spectra.", "wheat", "regression"),
    ("Classify the variety of rice samples by NIR spectroscopy.", "rice", "classification"),
    ("Detect adulterated samples of milk powder.", "milk powder", "anomaly_detection"),
    ("Estimate the organic matter level of soil samples.", "soil", "regression"),
]

# Templated questions bring the evaluation set to 100 cases, as in the original
# harness. Each extra material is asked about once per phrasing below.
EXTRA_MATERIALS = (
    "olive oil", "honey", "coffee beans", "cotton fabric", "tobacco leaf", "ginseng", "red wine",
    "peanut oil", "corn", "soybean", "beef", "saffron", "cement", "pharmaceutical tablets",
)
TEMPLATES = (
    ("Classify the origin of {} samples using NIR spectra.", "classification"),
    ("Discriminate between grades of {} from their infrared spectra.", "classification"),
    ("Detect adulterated {} samples with near infrared spectroscopy.", "anomaly_detection"),
    ("Decide whether each {} sample is genuine or counterfeit.", "anomaly_detection"),
    ("Predict the moisture content of {} samples from NIR spectra.", "regression"),
    ("Estimate the concentration of the main active component in {}.", "regression"),
)


def entity_cases():
    cases = list(ENTITY_CASES)
    for material in EXTRA_MATERIALS:
        cases += [(t.format(material), material, task) for t, task in TEMPLATES]
    return cases


RUN_CONFIG = {
    "version": 1,
    "dataset": "ink.csv",
    "task": "classification",
    "plan": {"kb_query": "stamp pad ink", "kb": "kb.jsonl", "engine": "TFIDF"},
    "output_dir": "out",
    "seed": 0,
    "reasoning": {"repeats": 3, "max_rounds": 5},
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args(argv)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    save_kb(KB_RECORDS, out / "kb.jsonl")
    ink = ink_like()
    save_dataset(ink, out / "ink.csv")
    save_dataset(cod_like(), out / "cod.csv")
    save_dataset(build_anomaly_dataset(ink, "brand1", seed=0), out / "ink_anomaly.csv")
    fm, truth = islands()
    write_features(fm, out / "islands.csv")
    (out / "islands.labels.json").write_text(json.dumps(truth, indent=1) + "\n")
    records, queries = retrieval_corpus()
    save_kb(records, out / "retrieval_corpus.jsonl")
    write_queries(queries, out / "retrieval_queries.jsonl")
    with open(out / "entity_cases.jsonl", "w") as fh:
        for q, obj, task in entity_cases():
            fh.write(json.dumps({"question": q, "gold_object": obj, "gold_task": task}) + "\n")
    (out / "run_config.json").write_text(json.dumps(RUN_CONFIG, indent=2) + "\n")
    for p in sorted(out.iterdir()):
        print(p.name)


if __name__ == "__main__":
    main()
