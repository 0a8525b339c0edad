"""Speaker-count accuracy of the eigengap analysis on synthetic clusters."""

import argparse
from collections import Counter

from dasrfront.bench import counting_trials
from dasrfront.scoring import counting_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--centroid-cos", type=float, default=0.8)
    ap.add_argument("--per-cluster", type=int, default=12)
    args = ap.parse_args()
    res = counting_trials(args.trials, args.seed, args.centroid_cos, args.per_cluster)
    truths, ests = zip(*res)
    for k in sorted(set(truths)):
        got = Counter(e for t, e in res if t == k)
        print(f"k={k}: {got[k]}/{sum(got.values())} exact  {dict(sorted(got.items()))}")
    print(f"accuracy {counting_accuracy(truths, ests):.2f}% over {len(res)} trials")


if __name__ == "__main__":
    main()
