"""Softmax vs power normalizer on one sorted input vector, side by side.

On positive scores the two agree on ordering (rank correlation 1); on the
full real line an even power folds negatives upward and agreement breaks.
"""
import argparse
import json

from polyattn.analysis import compare_normalizers

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--dist", default="normal",
                choices=["normal", "uniform", "evenly-spaced"])
ap.add_argument("--n", type=int, default=64)
ap.add_argument("--p", type=int, default=4)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", help="write the full curves as JSON")
args = ap.parse_args()

cmp = compare_normalizers(dist=args.dist, n=args.n, p=args.p, seed=args.seed)
print(f"rank correlation, all inputs:      {cmp.rank_correlation:+.4f}")
print(f"rank correlation, positive inputs: {cmp.rank_correlation_positive:+.4f}")
if args.out:
    with open(args.out, "w") as fh:
        json.dump(cmp.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"curves written to {args.out}")
