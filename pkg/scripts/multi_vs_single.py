"""Multi-turn versus single-turn test accuracy with the 1-NN mock reader.

    python3 scripts/multi_vs_single.py
    python3 scripts/multi_vs_single.py --repeats 20 --islands 40 --csv out.csv

The island layout puts most of the minority class in tight clusters that the
training partition often misses, which is the situation where hard-sample
exemplars help. Baseline rows (k-NN) are included for reference.
"""

import argparse

from iragent.baselines import compare, default_baselines
from iragent.core import TaskType
from iragent.reasoning import NearestNeighborBackend, ReasoningConfig, run_multi_turn, single_turn
from iragent.synthetic import islands


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0, help="split seed of the first repeat")
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--islands", type=int, default=25)
    ap.add_argument("--max-rounds", type=int, default=5)
    ap.add_argument("--csv", help="also write the comparison table here")
    args = ap.parse_args()

    fm, truth = islands(n_islands=args.islands, seed=args.data_seed)
    cfg = ReasoningConfig(repeats=args.repeats, seed=args.seed, max_rounds=args.max_rounds)
    task = TaskType.CLASSIFICATION
    multi = run_multi_turn(task, fm, None, truth, NearestNeighborBackend(), cfg)
    single = single_turn(task, fm, None, truth, NearestNeighborBackend(), cfg)

    print("repeat  single   multi  rounds")
    for s, m in zip(single.repeats, multi.repeats):
        print(f"{m.repeat:>6}  {s.test_metrics['accuracy']:.4f}  {m.test_metrics['accuracy']:.4f}"
              f"  {m.convergence_round:>6}")
    gains = [m - s for m, s in zip(multi.values("accuracy"), single.values("accuracy"))]
    print(f"improved in {sum(g > 0 for g in gains)}/{len(gains)} repeats, "
          f"mean gain {sum(gains) / len(gains):+.4f}")

    table = compare([single, multi], default_baselines(task), fm, truth)
    print()
    print(table.to_csv(), end="")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(table.to_csv())


if __name__ == "__main__":
    main()
