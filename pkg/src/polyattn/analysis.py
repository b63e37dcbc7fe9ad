"""Desk-scale experiment runners: normalizer shape comparison, the
epsilon/error trade-off of the reciprocal approximation, attention
locality of toy-trained stacks, and denominator growth with length.

Every runner returns a SweepResult that serializes identically across
runs for a fixed seed, so CSV output can be byte-compared.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .attention import AttentionConfig, mean_attention_distance, power_softmax, softmax
from .gradcheck import ToyTrainConfig, toy_train
from .polyapprox import GoldschmidtConfig, goldschmidt_reciprocal, reciprocal_error_bound
from .polymodel import stack_internals
from .tensor import Matrix

SWEEP_PARAMETERS = ("epsilon", "p", "length", "degree", "iterations")
DISTRIBUTIONS = ("normal", "uniform", "evenly-spaced")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    repetitions: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("values must be nonempty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("values must be strictly increasing")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        object.__setattr__(self, "values", vals)

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "values": list(self.values),
            "repetitions": self.repetitions,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepSpec":
        return cls(
            parameter=obj["parameter"],
            values=tuple(obj["values"]),
            repetitions=int(obj.get("repetitions", 32)),
            seed=int(obj.get("seed", 0)),
        )


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[tuple[float, str, float, float]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, value: float, metric: str, mean: float, std: float) -> None:
        if std < 0:
            raise ValueError("std must be nonnegative")
        self.rows.append((float(value), metric, float(mean), float(std)))

    def column(self, metric: str) -> list[tuple[float, float]]:
        return [(v, m) for v, name, m, _ in self.rows if name == metric]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("parameter,metric,mean,std\n")
        for value, metric, mean, std in self.rows:
            buf.write(f"{value!r},{metric},{mean!r},{std!r}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "rows": [
                {"value": v, "metric": metric, "mean": mean, "std": std}
                for v, metric, mean, std in self.rows
            ],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# normalizer shape comparison


@dataclass
class NormalizerComparison:
    inputs: np.ndarray
    softmax_curve: np.ndarray
    power_curve: np.ndarray
    rank_correlation: float
    rank_correlation_positive: float

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "softmax": self.softmax_curve.tolist(),
            "power_softmax": self.power_curve.tolist(),
            "rank_correlation": self.rank_correlation,
            "rank_correlation_positive": self.rank_correlation_positive,
        }


def _sample(dist: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if dist == "normal":
        return rng.normal(size=n)
    if dist == "uniform":
        return rng.uniform(-2.0, 2.0, size=n)
    if dist == "evenly-spaced":
        return np.linspace(0.05, 3.0, n)
    raise ValueError(f"unknown distribution {dist!r}; choose from {DISTRIBUTIONS}")


def _rank_corr(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float(spearmanr(a, b)[0])


def compare_normalizers(
    dist: str = "normal", n: int = 64, p: int = 4, seed: int = 0,
    values: np.ndarray | None = None,
) -> NormalizerComparison:
    """Sorted input vector with the softmax and power curves side by side.

    The two maps order positives identically (both are increasing there),
    so the rank correlation restricted to positive inputs is the headline
    agreement metric; the full-range correlation drops when negatives are
    present because an even power folds them upward.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    if values is None:
        rng = np.random.default_rng(seed)
        x = np.sort(_sample(dist, n, rng))
    else:
        x = np.sort(np.asarray(values, dtype=np.float64))
    sm = softmax(x)
    pw = power_softmax(x, p)
    pos = x > 0
    return NormalizerComparison(
        inputs=x,
        softmax_curve=sm,
        power_curve=pw,
        rank_correlation=_rank_corr(sm, pw),
        rank_correlation_positive=_rank_corr(sm[pos], pw[pos]),
    )


# ---------------------------------------------------------------------------
# epsilon / approximation error trade-off


def iterations_for_degree(degree: int) -> int:
    """Largest Goldschmidt iteration count whose polynomial degree in the
    scaled input, 2**k - 1, stays within the given degree budget."""
    if degree < 1:
        raise ValueError("degree budget must be >= 1")
    return max(1, int(math.floor(math.log2(degree + 1))))


def epsilon_error_sweep(
    spec: SweepSpec, degree: int = 15, upper: float = 8.0, grid: int = 2001
) -> SweepResult:
    """Certified sup-error of approximating s -> 1/(epsilon+s) on [0, upper].

    Larger epsilon both shrinks the relative spread of the shifted domain
    [epsilon, upper+epsilon] and lowers the magnitude of the target, so the
    error column is strictly decreasing; the function checks that before
    returning.
    """
    if spec.parameter != "epsilon":
        raise ValueError("epsilon_error_sweep needs parameter == 'epsilon'")
    if any(v <= 0 for v in spec.values):
        raise ValueError("epsilon values must be positive")
    iterations = iterations_for_degree(degree)
    result = SweepResult(spec=spec)
    errors = []
    s = np.linspace(0.0, upper, grid)
    for eps in spec.values:
        cfg = GoldschmidtConfig(iterations=iterations, domain=(eps, upper + eps))
        approx = np.array([goldschmidt_reciprocal(v + eps, cfg) for v in s])
        sup = float(np.abs(1.0 / (s + eps) - approx).max())
        errors.append(sup)
        result.add(eps, "sup_error", sup, 0.0)
        result.add(eps, "analytic_bound", reciprocal_error_bound(eps, cfg), 0.0)
    if any(b >= a for a, b in zip(errors, errors[1:])):
        raise ValueError("sup-error failed to decrease with epsilon")
    result.notes.append(f"goldschmidt iterations {iterations} (degree budget {degree})")
    return result


# ---------------------------------------------------------------------------
# attention locality of toy-trained stacks


def summarize_attention_distance(mats: list[Matrix]) -> tuple[float, float]:
    """Mean and std of mean_attention_distance over a bag of matrices."""
    if not mats:
        raise ValueError("no attention matrices given")
    vals = np.array([mean_attention_distance(m) for m in mats])
    return float(vals.mean()), float(vals.std())


def locality_sweep(
    spec: SweepSpec,
    seeds: tuple[int, ...] = (0, 1, 2),
    steps: int = 150,
    lr: float = 0.1,
    eval_sequences: int = 4,
) -> SweepResult:
    """Attention distance of trained stacks for each exponent p.

    Trains the toy stack with the rescaled variant on the synthetic
    next-token task, then measures mean_attention_distance over all
    layers, heads, and evaluation sequences. Distances are reported as
    measured; callers decide what to make of the trend.
    """
    if spec.parameter != "p":
        raise ValueError("locality_sweep needs parameter == 'p'")
    result = SweepResult(spec=spec)
    for value in spec.values:
        p = int(value)
        if p != value or p < 2 or p % 2:
            raise ValueError("p values must be even integers >= 2")
        distances = []
        for seed in seeds:
            attn = AttentionConfig(variant="power_stable", d_k=16, p=p, epsilon=1e-3)
            cfg = ToyTrainConfig(
                variant=attn, task="next-token-synthetic",
                steps=steps, lr=lr, seed=seed,
            )
            run = toy_train(cfg)
            if run.diverged:
                result.notes.append(f"p={p} seed={seed} diverged; skipped")
                continue
            mats = _trained_attention_matrices(run, eval_sequences)
            distances.extend(mean_attention_distance(m) for m in mats)
        if not distances:
            raise ValueError(f"all seeds diverged for p={p}")
        arr = np.array(distances)
        result.add(value, "mean_distance_tokens", float(arr.mean()), float(arr.std()))
    return result


def _trained_attention_matrices(run, eval_sequences: int) -> list[Matrix]:
    from .gradcheck import _make_task

    rng = np.random.default_rng(run.cfg.seed + 10_000)
    xs, _, mask = _make_task(run.cfg, rng)
    attn_cfg = run.cfg.variant
    if mask is not None:
        from dataclasses import replace

        attn_cfg = replace(attn_cfg, mask=mask)
    mats = []
    for b in range(min(eval_sequences, xs.shape[0])):
        _, layers = stack_internals(Matrix(xs[b]), list(run.weights), attn_cfg)
        for layer in layers:
            mats.extend(layer.head_weights)
    return mats


def locality_direction_note(result: SweepResult) -> str | None:
    """WARN string when larger p fails to localize attention, else None."""
    means = [row[2] for row in result.rows if row[1] == "mean_distance_tokens"]
    if all(b <= a for a, b in zip(means, means[1:])):
        return None
    return (
        "WARN: mean attention distance did not decrease monotonically with p "
        f"(measured {['%.4f' % m for m in means]}); toy scale may not reproduce the trend"
    )


# ---------------------------------------------------------------------------
# denominator growth with sequence length


def length_growth_contrast(
    spec: SweepSpec, dist: str = "normal", p: int = 4
) -> SweepResult:
    """Sum-form vs mean-form denominator statistics across lengths.

    The sum form grows linearly in L while the mean form concentrates;
    with at least two lengths the linear-growth ratio is checked within
    20% and the concentration of the mean form is checked end to end.
    """
    if spec.parameter != "length":
        raise ValueError("length_growth_contrast needs parameter == 'length'")
    rng = np.random.default_rng(spec.seed)
    result = SweepResult(spec=spec)
    sum_means, mean_stds = [], []
    for value in spec.values:
        length = int(value)
        if length != value or length < 1:
            raise ValueError("lengths must be positive integers")
        sums = np.empty(spec.repetitions)
        means = np.empty(spec.repetitions)
        for i in range(spec.repetitions):
            x = _sample(dist, length, rng)
            powered = x ** p
            sums[i] = powered.sum()
            means[i] = powered.mean()
        result.add(value, "sum_denominator", float(sums.mean()), float(sums.std()))
        result.add(value, "mean_denominator", float(means.mean()), float(means.std()))
        sum_means.append(float(sums.mean()))
        mean_stds.append(float(means.std()))
    for (la, sa), (lb, sb) in zip(
        zip(spec.values, sum_means), zip(spec.values[1:], sum_means[1:])
    ):
        expected = lb / la
        got = sb / sa
        if not 0.8 * expected <= got <= 1.2 * expected:
            raise ValueError(
                f"sum denominator ratio {got:.3f} strayed from linear growth {expected:.3f}"
            )
    if len(mean_stds) >= 2 and mean_stds[-1] >= mean_stds[0]:
        raise ValueError("mean-form denominator std failed to shrink with length")
    return result


__all__ = [
    "DISTRIBUTIONS",
    "NormalizerComparison",
    "SweepResult",
    "SweepSpec",
    "compare_normalizers",
    "epsilon_error_sweep",
    "iterations_for_degree",
    "length_growth_contrast",
    "locality_direction_note",
    "locality_sweep",
    "summarize_attention_distance",
]
