"""Sup-error of the polynomial 1/(eps+s) against eps at a fixed degree budget.

Larger eps shrinks the relative spread of the reciprocal's domain, so the
certified error falls as eps grows. Prints the CSV and, with --out, also
writes it.
"""
import argparse

from polyattn.analysis import SweepSpec, epsilon_error_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--values", type=float, nargs="+",
                    default=[1e-4, 1e-3, 1e-2, 1e-1])
    ap.add_argument("--degree", type=int, default=15)
    ap.add_argument("--upper", type=float, default=8.0)
    ap.add_argument("--out")
    args = ap.parse_args()

    spec = SweepSpec(parameter="epsilon", values=tuple(args.values))
    result = epsilon_error_sweep(spec, degree=args.degree, upper=args.upper)
    csv = result.to_csv()
    print(csv, end="")
    for note in result.notes:
        print(f"# {note}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)


if __name__ == "__main__":
    main()
