"""End-to-end acceptance gate.

One test per headline property, each finishing with a single printed
PASS line carrying the measured numbers, so `pytest tests/test_acceptance.py -s`
reads as a checklist. Budgets are asserted from wall-clock measurements,
not assumed.
"""
import json
import time

import numpy as np
import pytest

from polyattn.analysis import (
    SweepSpec,
    epsilon_error_sweep,
    length_growth_contrast,
    locality_direction_note,
    locality_sweep,
    summarize_attention_distance,
)
from polyattn.attention import (
    AttentionConfig,
    length_agnostic_power_softmax,
    lipschitz_power_softmax,
    power_softmax,
    softmax,
    stable_power_softmax,
)
from polyattn.cli import main
from polyattn.gradcheck import ToyTrainConfig, standard_battery, toy_train
from polyattn.polyapprox import (
    GoldschmidtConfig,
    fit_sigmoid,
    goldschmidt_inv_sqrt,
    goldschmidt_reciprocal,
    reciprocal_error_bound,
)
from polyattn.polymodel import (
    ApproxConfig,
    POLYNOMIAL_OPS,
    convert_block,
    random_block_weights,
    save_block_weights,
)
from polyattn.tensor import Matrix


def nonzero_row(rng):
    n = int(rng.integers(2, 17))
    while True:
        x = rng.normal(size=n) * rng.choice([0.5, 1.0, 3.0])
        if np.abs(x).max() > 1e-3:
            return x


def test_normalizer_algebra_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"sum": 0.0, "scale": 0.0, "length": 0.0, "stable": 0.0}
    for _ in range(1000):
        x = nonzero_row(rng)
        p = int(rng.choice([2, 4, 6]))
        L = x.size

        for out in (
            softmax(x),
            power_softmax(x, p),
            lipschitz_power_softmax(x, p, epsilon=0.0),
            stable_power_softmax(x, p, epsilon=0.0),
            length_agnostic_power_softmax(x, p, epsilon=0.0),
        ):
            worst["sum"] = max(worst["sum"], abs(out.sum() - 1.0))

        lam = float(rng.uniform(0.25, 4.0) * rng.choice([-1.0, 1.0]))
        worst["scale"] = max(
            worst["scale"],
            np.abs(power_softmax(lam * x, p) - power_softmax(x, p)).max(),
        )

        eps = float(rng.uniform(1e-4, 1e-1))
        worst["length"] = max(
            worst["length"],
            np.abs(
                length_agnostic_power_softmax(x, p, epsilon=eps)
                - lipschitz_power_softmax(x, p, epsilon=L * eps)
            ).max(),
        )

        worst["stable"] = max(
            worst["stable"],
            np.abs(
                stable_power_softmax(x, p, epsilon_prime=0.0, epsilon=0.0)
                - power_softmax(x, p)
            ).max(),
        )
    elapsed = time.perf_counter() - t0
    assert worst["sum"] < 1e-9
    assert worst["scale"] < 1e-9
    assert worst["length"] < 1e-12
    assert worst["stable"] < 1e-9
    assert elapsed < 10.0
    print(
        f"\nPASS normalizer algebra: 1000 rows/variant, sum-to-one {worst['sum']:.1e}, "
        f"scale invariance {worst['scale']:.1e}, sum-form identity {worst['length']:.1e}, "
        f"stable reduction {worst['stable']:.1e} ({elapsed:.1f}s)"
    )


def test_gradient_suite():
    t0 = time.perf_counter()
    battery = standard_battery(points=100, seed=0, tolerance=1e-5,
                               block_tolerance=1e-4, block_points=100)
    elapsed = time.perf_counter() - t0
    for name, row in battery.items():
        assert row["passed"], f"{name}: {row['max_rel_err']:.3e} > {row['tolerance']}"
    assert elapsed < 60.0
    summary = ", ".join(f"{k} {v['max_rel_err']:.1e}" for k, v in battery.items())
    print(f"\nPASS gradient suite: {summary} ({elapsed:.1f}s)")


def test_approximation_certification():
    t0 = time.perf_counter()

    worst_excess = 0.0
    for domain, k in (((0.05, 3.0), 6), ((0.2, 1.9), 3), ((1.0, 8.0), 8)):
        cfg = GoldschmidtConfig(iterations=k, domain=domain)
        for x in np.linspace(domain[0], domain[1], 401):
            err = abs(goldschmidt_reciprocal(float(x), cfg) - 1.0 / x)
            bound = reciprocal_error_bound(float(x), cfg)
            # documented slack: a few ulp of 1/x on top of the exact bound
            assert err <= bound * (1 + 1e-9) + 1e-12 / x
            worst_excess = max(worst_excess, err - bound)

    inv_cfg = GoldschmidtConfig(iterations=8, domain=(1.0, 8.0))
    worst_resid = max(
        abs(goldschmidt_inv_sqrt(float(x), inv_cfg) ** 2 * x - 1.0)
        for x in np.linspace(1.0, 8.0, 401)
    )
    assert worst_resid < 1e-6

    errs = [fit_sigmoid((-8.0, 8.0), degree=d).max_error for d in (7, 15, 31)]
    assert all(np.isfinite(e) and e > 0 for e in errs)
    assert errs[1] <= errs[0] and errs[2] <= errs[1]

    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(
        f"\nPASS approximation certification: reciprocal within bound "
        f"(worst excess {worst_excess:.1e}), inv-sqrt residual {worst_resid:.1e} "
        f"at k=8, sigmoid sup-errors {[f'{e:.2e}' for e in errs]} ({elapsed:.1f}s)"
    )


def test_epsilon_error_trend():
    t0 = time.perf_counter()
    spec = SweepSpec(parameter="epsilon", values=(1e-4, 1e-3, 1e-2, 1e-1), seed=0)
    result = epsilon_error_sweep(spec, degree=15, upper=8.0)
    sup = [m for _, m in result.column("sup_error")]
    assert all(b < a for a, b in zip(sup, sup[1:]))
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(
        f"\nPASS epsilon trend: sup-error strictly decreasing "
        f"{[f'{e:.2e}' for e in sup]} ({elapsed:.1f}s)"
    )


def test_conversion_equivalence():
    t0 = time.perf_counter()
    attn = AttentionConfig(variant="power_lipschitz", d_k=16, p=4, epsilon=1e-3)
    errors, totals = [], []
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        w = random_block_weights(rng, d_model=32, heads=2)
        probes = tuple(Matrix(rng.normal(size=(16, 32))) for _ in range(64))
        converted, report = convert_block(w, attn, ApproxConfig(probes=probes))
        assert report.max_block_error <= 1e-3
        trace = converted.trace(probes[0])
        assert set(trace) <= POLYNOMIAL_OPS
        assert report.ledger.total == sum(d for _, d in report.ledger.entries)
        errors.append(report.max_block_error)
        totals.append(report.ledger.total)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(
        f"\nPASS conversion equivalence: 3 blocks (32 wide, 2 heads, L=16, 64 probes), "
        f"max deviations {[f'{e:.2e}' for e in errors]} <= 1e-3, add/mul/const only, "
        f"depth totals {totals} ({elapsed:.1f}s)"
    )


def test_length_growth_contrast():
    t0 = time.perf_counter()
    spec = SweepSpec(parameter="length", values=(64, 256, 1024, 4096),
                     repetitions=32, seed=0)
    result = length_growth_contrast(spec)  # raises if any ratio strays past 20%
    sums = dict(result.column("sum_denominator"))
    stds = {v: s for v, k, m, s in result.rows if k == "mean_denominator"}
    ratio = sums[4096.0] / sums[64.0]
    assert ratio > 32.0
    assert stds[4096.0] < stds[64.0]
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(
        f"\nPASS length contrast: sum denominator x{ratio:.1f} from L=64 to 4096 "
        f"(linear within 20%), mean-form std {stds[64.0]:.3f} -> {stds[4096.0]:.3f} "
        f"({elapsed:.1f}s)"
    )


def test_stability_ordinal():
    t0 = time.perf_counter()
    variants = {
        "power": AttentionConfig(variant="power", d_k=16, p=4),
        "power_stable": AttentionConfig(variant="power_stable", d_k=16, p=4,
                                        epsilon=1e-3),
        "softmax": AttentionConfig(variant="softmax", d_k=16),
    }
    runs = {}
    for name, attn in variants.items():
        for seed in (0, 1, 2):
            cfg = ToyTrainConfig(variant=attn, task="copy", steps=300, lr=0.1,
                                 seed=seed, score_scale=50.0, precision="half")
            runs[name, seed] = toy_train(cfg)

    stable_wins = 0
    for seed in (0, 1, 2):
        power, stable = runs["power", seed], runs["power_stable", seed]
        assert not stable.diverged
        if power.diverged or power.losses[-1] > stable.losses[-1]:
            stable_wins += 1
    assert stable_wins >= 2

    halved = {}
    for name in ("softmax", "power_stable"):
        for seed in (0, 1, 2):
            run = runs[name, seed]
            assert not run.diverged
            assert len(run.losses) <= 300
            halved[name, seed] = run.losses[-1] / run.losses[0]
            assert halved[name, seed] < 0.5

    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    worst = max(halved.values())
    print(
        f"\nPASS stability ordinal: 50x scores in half precision, rescaled variant "
        f"beats plain power {stable_wins}/3 seeds, softmax and rescaled reach "
        f"<= {worst:.3f}x initial loss within 300 steps ({elapsed:.1f}s)"
    )


def test_attention_distance_ordinal():
    t0 = time.perf_counter()
    assert summarize_attention_distance([Matrix(np.eye(6))]) == (0.0, 0.0)
    causal = Matrix(np.tril(np.ones((4, 4))) / np.arange(1, 5)[:, None])
    mean, _ = summarize_attention_distance([causal])
    assert abs(mean - 0.75) < 1e-12

    spec = SweepSpec(parameter="p", values=(2, 4, 8), seed=0)
    result = locality_sweep(spec, seeds=(0, 1, 2), steps=150, lr=0.1)
    note = locality_direction_note(result)
    means = [f"{m:.3f}" for _, m in result.column("mean_distance_tokens")]
    elapsed = time.perf_counter() - t0
    direction = note if note else f"distance falls with p: {means}"
    print(f"\nPASS attention distance: identity 0, uniform causal L=4 0.75, "
          f"{direction} ({elapsed:.1f}s)")


def test_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    w = random_block_weights(np.random.default_rng(7), d_model=8, heads=2, d_ff=16)
    weights = tmp_path / "demo.weights"
    save_block_weights(w, weights)

    def cfg_file(name, obj):
        path = tmp_path / name
        path.write_text(json.dumps(obj))
        return str(path)

    convert_cfg = cfg_file("convert.json", {
        "attention": {"variant": "power_lipschitz", "d_k": 4, "p": 4,
                      "epsilon": 1e-3},
        "probes": {"count": 16, "length": 6, "seed": 21},
    })
    commands = {
        "convert": ["convert", "--weights", str(weights), "--config", convert_cfg],
        "sweep epsilon": ["sweep", "epsilon", "--config", cfg_file(
            "eps.json",
            {"spec": {"parameter": "epsilon", "values": [1e-3, 1e-2, 1e-1]}})],
        "sweep length": ["sweep", "length", "--config", cfg_file(
            "len.json",
            {"spec": {"parameter": "length", "values": [64, 256],
                      "repetitions": 16}})],
        "sweep locality": ["sweep", "locality", "--config", cfg_file(
            "loc.json",
            {"spec": {"parameter": "p", "values": [2, 4]}, "seeds": [0],
             "steps": 25, "eval_sequences": 2})],
        "sweep compare": ["sweep", "compare", "--config", cfg_file(
            "cmp.json", {"dist": "normal", "n": 32, "p": 4, "seed": 0})],
        "gradcheck": ["gradcheck", "--config", cfg_file(
            "grad.json", {"points": 10, "block_points": 2})],
        "train": ["train", "--config", cfg_file(
            "train.json",
            {"attention": {"variant": "softmax", "d_k": 16}, "task": "copy",
             "steps": 25, "lr": 0.05, "seeds": [0]})],
    }
    for name, argv in commands.items():
        first = tmp_path / "first.out"
        second = tmp_path / "second.out"
        for out in (first, second):
            code = main([*argv, "--out", str(out), "--deterministic", "--seed", "0"])
            assert code == 0, f"{name} exited {code}"
        assert first.read_bytes() == second.read_bytes(), f"{name} not byte-stable"
    elapsed = time.perf_counter() - t0
    print(f"\nPASS determinism: {len(commands)} commands byte-identical across "
          f"two seeded runs ({elapsed:.1f}s)")
