"""Denominator growth with sequence length: sum form vs mean form.

The sum-form denominator eps + sum(s**p) scales linearly with L, which is
what makes its Lipschitz constant length-dependent. The mean form
eps + mean(s**p) concentrates instead: its sample std shrinks as L grows.
"""
import argparse

from polyattn.analysis import SweepSpec, length_growth_contrast

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--lengths", type=int, nargs="+", default=[64, 256, 1024, 4096])
ap.add_argument("--repetitions", type=int, default=32)
ap.add_argument("--p", type=int, default=4)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out")
args = ap.parse_args()

spec = SweepSpec(parameter="length", values=tuple(float(v) for v in args.lengths),
                 repetitions=args.repetitions, seed=args.seed)
result = length_growth_contrast(spec, p=args.p)
print(result.to_csv(), end="")
if args.out:
    with open(args.out, "w") as fh:
        fh.write(result.to_csv())
