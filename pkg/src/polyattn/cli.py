"""Command-line front end over the library: block conversion, sweep
runners, the gradient battery, and toy training, all configured by JSON
files so runs are reproducible and diffable.

Exit codes are part of the contract:
    0  success
    1  unusable input (bad flags, missing file, config that fails validation)
    2  an input escaped a certified approximation domain during conversion
    3  training diverged on every seed

Outputs are byte-stable for a fixed config and seed: floats serialize
via repr, JSON keys are sorted, and nothing time- or path-dependent is
written. --deterministic additionally pins the BLAS thread count so even
reduction order is fixed.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2
EXIT_ALL_DIVERGED = 3

SWEEP_KINDS = ("epsilon", "locality", "length", "compare")


# ---------------------------------------------------------------------------
# config plumbing


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError(f"{path}: top-level JSON value must be an object")
    return obj


def _take(obj: dict, allowed: dict, what: str) -> dict:
    """Pick allowed keys with defaults; reject anything unrecognized."""
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValueError(f"{what}: unknown keys {sorted(unknown)}")
    out = dict(allowed)
    out.update(obj)
    return out


def _attention_config(obj: dict, rows: int | None = None):
    from .attention import AttentionConfig
    from .tensor import Matrix
    import numpy as np

    fields = _take(
        obj,
        {
            "variant": "power_lipschitz",
            "d_k": 16,
            "p": 4,
            "epsilon": 1e-3,
            "epsilon_prime": 1e-6,
            "mask": None,
        },
        "attention config",
    )
    mask = fields.pop("mask")
    cfg = AttentionConfig(
        variant=str(fields["variant"]),
        d_k=int(fields["d_k"]),
        p=int(fields["p"]),
        epsilon=float(fields["epsilon"]),
        epsilon_prime=float(fields["epsilon_prime"]),
    )
    if mask is None:
        return cfg
    if mask != "causal":
        raise ValueError(f"mask must be \"causal\" or null, got {mask!r}")
    if rows is None:
        raise ValueError("a causal mask needs a probe length to size itself")
    return replace(cfg, mask=Matrix(np.tril(np.ones((rows, rows)))))


def _approx_config(obj: dict, probes):
    from .polymodel import ApproxConfig

    fields = _take(
        obj,
        {
            "headroom": 1.5,
            "reciprocal_iterations": None,
            "inv_sqrt_iterations": None,
            "sigmoid_degree": None,
            "reciprocal_domain": None,
            "ln1_domain": None,
            "ln2_domain": None,
            "sigmoid_domain": None,
            "reciprocal_target": 1e-9,
            "inv_sqrt_target": 1e-9,
            "sigmoid_target": 1e-5,
        },
        "approx config",
    )
    for key in ("reciprocal_domain", "ln1_domain", "ln2_domain", "sigmoid_domain"):
        if fields[key] is not None:
            lo, hi = fields[key]
            fields[key] = (float(lo), float(hi))
    return ApproxConfig(probes=probes, **fields)


def _sweep_spec(obj: dict, seed_override: int | None):
    from .analysis import SweepSpec

    if "parameter" not in obj or "values" not in obj:
        raise ValueError("sweep config needs a \"spec\" object with "
                         "\"parameter\" and \"values\"")
    spec = SweepSpec.from_dict(obj)
    if seed_override is not None:
        spec = replace(spec, seed=seed_override)
    return spec


def _write_text(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_convert(args) -> int:
    import numpy as np

    from .polymodel import convert_block, load_block_weights
    from .tensor import Matrix

    w = load_block_weights(args.weights)
    cfg_obj = _load_json(args.config)
    cfg_obj = _take(
        cfg_obj, {"attention": {}, "approx": {}, "probes": {}}, "convert config"
    )
    probe_obj = _take(
        cfg_obj["probes"],
        {"count": 24, "length": 8, "seed": 0, "scale": 1.0},
        "probes config",
    )
    seed = args.seed if args.seed is not None else int(probe_obj["seed"])
    rng = np.random.default_rng(seed)
    probes = tuple(
        Matrix(rng.normal(size=(int(probe_obj["length"]), w.d_model)) * float(probe_obj["scale"]))
        for _ in range(int(probe_obj["count"]))
    )
    attn_cfg = _attention_config(cfg_obj["attention"], rows=int(probe_obj["length"]))
    approx_cfg = _approx_config(cfg_obj["approx"], probes)
    _, report = convert_block(w, attn_cfg, approx_cfg)
    _write_text(args.out, report.to_json() + "\n")
    print(f"depth ledger total {report.ledger.total}")
    print(f"max block error {report.max_block_error!r}")
    return EXIT_OK


def _comparison_csv(cmp) -> str:
    lines = ["input,softmax,power_softmax"]
    for x, s, p in zip(cmp.inputs, cmp.softmax_curve, cmp.power_curve):
        lines.append(f"{float(x)!r},{float(s)!r},{float(p)!r}")
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    from . import analysis

    cfg_obj = _load_json(args.config)
    if args.kind == "compare":
        fields = _take(
            cfg_obj, {"dist": "normal", "n": 64, "p": 4, "seed": 0}, "compare config"
        )
        seed = args.seed if args.seed is not None else int(fields["seed"])
        cmp = analysis.compare_normalizers(
            dist=str(fields["dist"]), n=int(fields["n"]), p=int(fields["p"]), seed=seed
        )
        if args.format == "csv":
            _write_text(args.out, _comparison_csv(cmp))
        else:
            _write_text(args.out, json.dumps(cmp.to_dict(), sort_keys=True, indent=2) + "\n")
        print(f"rank correlation (positive inputs) {cmp.rank_correlation_positive!r}")
        return EXIT_OK

    if args.kind == "epsilon":
        fields = _take(
            cfg_obj,
            {"spec": None, "degree": 15, "upper": 8.0, "grid": 2001},
            "epsilon sweep config",
        )
        spec = _sweep_spec(fields["spec"] or {}, args.seed)
        result = analysis.epsilon_error_sweep(
            spec, degree=int(fields["degree"]), upper=float(fields["upper"]),
            grid=int(fields["grid"]),
        )
    elif args.kind == "length":
        fields = _take(
            cfg_obj, {"spec": None, "dist": "normal", "p": 4}, "length sweep config"
        )
        spec = _sweep_spec(fields["spec"] or {}, args.seed)
        result = analysis.length_growth_contrast(
            spec, dist=str(fields["dist"]), p=int(fields["p"])
        )
    else:
        fields = _take(
            cfg_obj,
            {"spec": None, "seeds": [0, 1, 2], "steps": 150, "lr": 0.1,
             "eval_sequences": 4},
            "locality sweep config",
        )
        spec = _sweep_spec(fields["spec"] or {}, args.seed)
        result = analysis.locality_sweep(
            spec,
            seeds=tuple(int(s) for s in fields["seeds"]),
            steps=int(fields["steps"]),
            lr=float(fields["lr"]),
            eval_sequences=int(fields["eval_sequences"]),
        )
        note = analysis.locality_direction_note(result)
        if note is not None:
            result.notes.append(note)
            print(note)

    _write_text(args.out, result.to_csv() if args.format == "csv" else result.to_json() + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import standard_battery

    cfg_obj = _load_json(args.config) if args.config else {}
    fields = _take(
        cfg_obj,
        {"points": 100, "seed": 0, "tolerance": 1e-5, "block_tolerance": 1e-4,
         "block_points": 10},
        "gradcheck config",
    )
    seed = args.seed if args.seed is not None else int(fields["seed"])
    battery = standard_battery(
        points=int(fields["points"]),
        seed=seed,
        tolerance=float(fields["tolerance"]),
        block_tolerance=float(fields["block_tolerance"]),
        block_points=int(fields["block_points"]),
    )
    width = max(len(name) for name in battery)
    for name, row in battery.items():
        status = "ok" if row["passed"] else "FAIL"
        print(f"{name:<{width}}  max_rel_err {row['max_rel_err']:.3e}"
              f"  tolerance {row['tolerance']:.1e}  {status}")
    if args.out:
        _write_text(args.out, json.dumps(battery, sort_keys=True, indent=2) + "\n")
    return EXIT_OK if all(row["passed"] for row in battery.values()) else EXIT_USAGE


def _loss_csv(losses) -> str:
    lines = ["step,loss"]
    lines.extend(f"{i},{loss!r}" for i, loss in enumerate(losses))
    return "\n".join(lines) + "\n"


def _seed_path(out: str, seed: int, multi: bool) -> str:
    if not multi:
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}_seed{seed}{p.suffix}"))


def cmd_train(args) -> int:
    from .gradcheck import ToyTrainConfig, toy_train

    cfg_obj = _load_json(args.config)
    fields = _take(
        cfg_obj,
        {"attention": {}, "task": "copy", "steps": 300, "lr": 0.05,
         "seeds": [0], "score_scale": 1.0, "precision": "double"},
        "train config",
    )
    attn_cfg = _attention_config(fields["attention"])
    seeds = [int(s) for s in fields["seeds"]]
    if args.seed is not None:
        seeds = [args.seed]
    if not seeds:
        raise ValueError("train config needs at least one seed")
    diverged = []
    for seed in seeds:
        cfg = ToyTrainConfig(
            variant=attn_cfg,
            task=str(fields["task"]),
            steps=int(fields["steps"]),
            lr=float(fields["lr"]),
            seed=seed,
            score_scale=float(fields["score_scale"]),
            precision=str(fields["precision"]),
        )
        run = toy_train(cfg)
        diverged.append(run.diverged)
        path = _seed_path(args.out, seed, multi=len(seeds) > 1)
        _write_text(path, _loss_csv(run.losses))
        tail = " (diverged)" if run.diverged else ""
        final = run.losses[-1] if run.losses else float("nan")
        print(f"seed {seed}: {len(run.losses)} steps, final loss {final!r}{tail}")
    return EXIT_ALL_DIVERGED if all(diverged) else EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required,
                   help="JSON config file" + ("" if config_required else " (optional)"))
    p.add_argument("--out", help="output file path")
    p.add_argument("--format", choices=["csv", "json"], default="csv",
                   help="output format where the command supports both")
    p.add_argument("--deterministic", action="store_true",
                   help="pin BLAS to one thread for byte-stable output")
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed from the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyattn",
        description="Polynomial attention toolkit: convert blocks, run sweeps, "
                    "check gradients, train toy stacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="replace a block with its polynomial form")
    p.add_argument("--weights", required=True, help="BlockWeights file")
    _add_common(p)
    p.set_defaults(func=cmd_convert, needs_out=True)

    p = sub.add_parser("sweep", help="run an experiment sweep")
    p.add_argument("kind", choices=list(SWEEP_KINDS))
    _add_common(p)
    p.set_defaults(func=cmd_sweep, needs_out=True)

    p = sub.add_parser("gradcheck", help="finite-difference battery over all backwards")
    _add_common(p, config_required=False)
    p.set_defaults(func=cmd_gradcheck, needs_out=False)

    p = sub.add_parser("train", help="train the fixed toy stack, write loss curves")
    _add_common(p)
    p.set_defaults(func=cmd_train, needs_out=True)

    return parser


def _pin_threads() -> None:
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=1)
    except ImportError:
        import os

        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; fold the former
        # into the documented usage exit code
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    if args.deterministic:
        _pin_threads()
    if args.needs_out and not args.out:
        print(f"error: {args.command} requires --out", file=sys.stderr)
        return EXIT_USAGE

    from .polyapprox import DomainError

    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
