"""Top-k precision of the three retrieval engines on a synthetic corpus.

    python3 scripts/retrieval_eval.py                 # bundled corpus, k = 3
    python3 scripts/retrieval_eval.py --seeds 0 1 2 3 4 --top-k 5

With ``--seeds`` fresh corpora are generated, which shows how stable the
engine ordering is across draws of the noise documents and queries.
"""

import argparse
from pathlib import Path

import numpy as np

from iragent.kb import ENGINES, build_index, evaluate_retrieval, load_kb
from iragent.synthetic import read_queries, retrieval_corpus

DATA = Path(__file__).resolve().parents[1] / "src" / "iragent" / "data"


def precision_table(records, queries, top_k):
    return {e: 100 * evaluate_retrieval(build_index(records, e), queries, top_k) for e in ENGINES}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--top-k", type=int, default=3)
    ap.add_argument("--seeds", type=int, nargs="*", help="generate corpora instead of the bundled one")
    args = ap.parse_args()

    if args.seeds:
        runs = [precision_table(*retrieval_corpus(seed=s), args.top_k) for s in args.seeds]
    else:
        runs = [precision_table(load_kb(DATA / "retrieval_corpus.jsonl"),
                                read_queries(DATA / "retrieval_queries.jsonl"), args.top_k)]
    print(f"{'engine':<8}{'mean P@' + str(args.top_k):>12}{'std':>8}")
    for e in ENGINES:
        vals = np.array([r[e] for r in runs])
        std = vals.std(ddof=1) if len(vals) > 1 else 0.0
        print(f"{e:<8}{vals.mean():>12.2f}{std:>8.2f}")


if __name__ == "__main__":
    main()
