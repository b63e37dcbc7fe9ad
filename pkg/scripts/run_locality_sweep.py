"""Train the toy stack at several exponents p and report how far attention
reaches, measured as probability-weighted |i - j| in tokens. The expected
direction is larger p -> more local; at toy scale that is a tendency, not
a law, so a reversal only prints a warning.
"""
import argparse

from polyattn.analysis import SweepSpec, locality_direction_note, locality_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=int, nargs="+", default=[2, 4, 8])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=150)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--out")
    args = ap.parse_args()

    spec = SweepSpec(parameter="p", values=tuple(float(v) for v in args.p))
    result = locality_sweep(spec, seeds=tuple(args.seeds), steps=args.steps, lr=args.lr)
    print(result.to_csv(), end="")
    note = locality_direction_note(result)
    if note:
        print(note)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(result.to_csv())


if __name__ == "__main__":
    main()
