"""Pre-norm transformer block: exact float reference and its conversion to an
add/multiply-only form suitable for encrypted evaluation.

The exact block is

    h   = x + Attn(LN1(x))          Attn = multi-head, configurable normalizer
    out = h + W2 @ gelu(W1 @ LN2(h))

Conversion replaces every non-polynomial primitive with a certified
approximation: the attention division and the two LayerNorm inverse square
roots become Goldschmidt iterations, the GELU sigmoid becomes a fitted
polynomial. Attention is rewritten in the length-agnostic form so a single
reciprocal domain covers all sequence lengths, and the stable variant's
max-based rescale is dropped (it has no polynomial form; the range penalty
exists to make that safe).
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import AttentionConfig, masked_scores, normalize_row
from .polyapprox import (
    DepthLedger,
    DomainError,
    GoldschmidtConfig,
    PolyApprox,
    depth_of,
    fit_sigmoid,
    gelu_exact,
    GELU_SIGMOID_SLOPE,
    inv_sqrt_core,
    inv_sqrt_iterations_for,
    reciprocal_core,
    reciprocal_iterations_for,
)
from .tensor import Matrix, ShapeError

LN_DELTA = 1e-5

WEIGHT_FIELDS = (
    "wq", "wk", "wv", "wo", "w1", "w2",
    "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
)


class UnsupportedConversionError(ValueError):
    """Requested a polynomial form that does not exist (e.g. softmax)."""


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class BlockWeights:
    """Parameters of one pre-norm block; projections carry no biases."""

    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    w1: Matrix
    w2: Matrix
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    heads: int

    def __post_init__(self):
        d = self.wq.rows
        for name in ("wq", "wk", "wv", "wo"):
            m = getattr(self, name)
            if (m.rows, m.cols) != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {m.rows}x{m.cols}")
        if self.w1.rows != d:
            raise ShapeError("w1 must have d_model rows")
        if self.w2.cols != d or self.w2.rows != self.w1.cols:
            raise ShapeError("w2 must map the FFN width back to d_model")
        for name in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (d,):
                raise ShapeError(f"{name} must be a vector of length {d}")
            if not np.isfinite(v).all():
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.heads < 1 or d % self.heads != 0:
            raise ShapeError(f"heads={self.heads} must divide d_model={d}")

    @property
    def d_model(self) -> int:
        return self.wq.rows

    @property
    def d_ff(self) -> int:
        return self.w1.cols

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


def random_block_weights(
    rng: np.random.Generator,
    d_model: int,
    heads: int,
    d_ff: int | None = None,
    qk_scale: float = 1.0,
) -> BlockWeights:
    """Gaussian init with 1/sqrt(fan_in) columns; qk_scale multiplies the
    query/key projections, which scales the attention scores by its square."""
    d_ff = 4 * d_model if d_ff is None else d_ff
    s = 1.0 / math.sqrt(d_model)
    return BlockWeights(
        wq=Matrix(rng.normal(0.0, s, size=(d_model, d_model)) * qk_scale),
        wk=Matrix(rng.normal(0.0, s, size=(d_model, d_model)) * qk_scale),
        wv=Matrix(rng.normal(0.0, s, size=(d_model, d_model))),
        wo=Matrix(rng.normal(0.0, s, size=(d_model, d_model))),
        w1=Matrix(rng.normal(0.0, s, size=(d_model, d_ff))),
        w2=Matrix(rng.normal(0.0, 1.0 / math.sqrt(d_ff), size=(d_ff, d_model))),
        ln1_gain=np.ones(d_model),
        ln1_bias=np.zeros(d_model),
        ln2_gain=np.ones(d_model),
        ln2_bias=np.zeros(d_model),
        heads=heads,
    )


def save_block_weights(w: BlockWeights, path: str | Path) -> None:
    """Single file: one JSON header line, then little-endian float64 payload,
    row-major, fields in declaration order."""
    shapes = {}
    chunks = []
    for name in WEIGHT_FIELDS:
        v = getattr(w, name)
        arr = v.array if isinstance(v, Matrix) else v
        shapes[name] = list(arr.shape)
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {"d_model": w.d_model, "heads": w.heads, "shapes": shapes}
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(chunks)
    Path(path).write_bytes(blob)


def load_block_weights(path: str | Path) -> BlockWeights:
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ValueError("weights file has no header line")
    header = json.loads(blob[:nl].decode("utf-8"))
    payload = blob[nl + 1:]
    offset = 0
    fields = {}
    for name in WEIGHT_FIELDS:
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        arr = arr.reshape(shape).astype(np.float64)
        fields[name] = Matrix(arr) if arr.ndim == 2 else arr
    if offset != len(payload):
        raise ValueError("weights payload length does not match the header shapes")
    return BlockWeights(heads=int(header["heads"]), **fields)


# ---------------------------------------------------------------------------
# exact reference block


def layernorm_exact(x_row, gain, bias) -> np.ndarray:
    """(x - mean) / sqrt(var + 1e-5) * gain + bias for one row."""
    a = np.asarray(x_row, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if a.ndim != 1 or a.shape != gain.shape or a.shape != bias.shape:
        raise ShapeError("layernorm_exact expects matching 1-D row, gain, bias")
    mu = a.mean()
    var = ((a - mu) ** 2).mean()
    return (a - mu) / np.sqrt(var + LN_DELTA) * gain + bias


def _layernorm_2d(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_DELTA) * gain + bias


def _head_slices(d_model: int, heads: int):
    d_k = d_model // heads
    return [slice(h * d_k, (h + 1) * d_k) for h in range(heads)]


@dataclass
class BlockInternals:
    """Forward output plus the per-head quantities analyses want."""

    out: Matrix
    head_scores: list[Matrix]   # the normalizer inputs, after mask and scaling
    head_weights: list[Matrix]  # normalized attention matrices


def _check_block_inputs(x: Matrix, w: BlockWeights, cfg: AttentionConfig) -> None:
    if x.cols != w.d_model:
        raise ShapeError(f"input width {x.cols} != d_model {w.d_model}")
    if cfg.d_k != w.d_k:
        raise ShapeError(f"cfg.d_k={cfg.d_k} but weights imply d_k={w.d_k}")


def block_internals(x: Matrix, w: BlockWeights, cfg: AttentionConfig) -> BlockInternals:
    _check_block_inputs(x, w, cfg)
    xa = x.array
    xn = _layernorm_2d(xa, w.ln1_gain, w.ln1_bias)
    q, k, v = xn @ w.wq.array, xn @ w.wk.array, xn @ w.wv.array
    heads_out = []
    head_scores = []
    head_weights = []
    for sl in _head_slices(w.d_model, w.heads):
        s = masked_scores(q[:, sl], k[:, sl], cfg)
        weights = np.vstack([normalize_row(row, cfg) for row in s])
        head_scores.append(Matrix(s))
        head_weights.append(Matrix(weights))
        heads_out.append(weights @ v[:, sl])
    attn = np.concatenate(heads_out, axis=1) @ w.wo.array
    h = xa + attn
    hn = _layernorm_2d(h, w.ln2_gain, w.ln2_bias)
    z = hn @ w.w1.array
    out = h + gelu_exact(z) @ w.w2.array
    return BlockInternals(out=Matrix(out), head_scores=head_scores, head_weights=head_weights)


def exact_block(x: Matrix, w: BlockWeights, cfg: AttentionConfig) -> Matrix:
    """Float-exact pre-norm block with the configured attention normalizer."""
    return block_internals(x, w, cfg).out


def stack_forward(x: Matrix, weights: list[BlockWeights], cfg: AttentionConfig) -> Matrix:
    for w in weights:
        x = exact_block(x, w, cfg)
    return x


def stack_internals(
    x: Matrix, weights: list[BlockWeights], cfg: AttentionConfig
) -> tuple[Matrix, list[BlockInternals]]:
    layers = []
    for w in weights:
        info = block_internals(x, w, cfg)
        layers.append(info)
        x = info.out
    return x, layers


def range_penalty(score_inputs) -> float:
    """Sum over layers of the largest |score| fed to any head's normalizer.

    score_inputs is a list over layers, each a list of per-head Matrix of
    normalizer inputs. Keeping this quantity small is what licenses dropping
    the stable variant's rescale at conversion time.
    """
    layers = list(score_inputs)
    if not layers:
        raise ValueError("range_penalty needs at least one layer")
    total = 0.0
    for i, layer in enumerate(layers):
        heads = list(layer)
        if not heads:
            raise ValueError(f"layer {i} has no heads")
        total += max(float(np.abs(m.array).max()) for m in heads)
    return total


# ---------------------------------------------------------------------------
# tracing evaluator


_UFUNC_KINDS = {
    "add": "add", "subtract": "add", "multiply": "mul", "matmul": "mul",
    "negative": "mul", "square": "mul",
    "divide": "div", "true_divide": "div", "reciprocal": "div",
    "exp": "exp", "exp2": "exp", "expm1": "exp", "log": "log",
    "sqrt": "sqrt", "cbrt": "sqrt", "power": "pow", "float_power": "pow",
    "maximum": "comparison", "minimum": "comparison",
    "greater": "comparison", "greater_equal": "comparison",
    "less": "comparison", "less_equal": "comparison",
    "sign": "comparison", "absolute": "comparison", "fabs": "comparison",
}

POLYNOMIAL_OPS = frozenset({"add", "mul", "const"})


class TracedArray:
    """Array stand-in that records the kind of every primitive applied to it.

    Arithmetic routes through __array_ufunc__, so exp/div/sqrt/comparisons
    are recorded (and therefore detectable) even when reached via numpy
    functions rather than operators. Used to prove a converted block touches
    nothing beyond {add, mul, const}.
    """

    __array_priority__ = 1000
    __slots__ = ("value", "counts")

    def __init__(self, value, counts: Counter) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.counts = counts

    def _wrap(self, v) -> "TracedArray":
        return TracedArray(v, self.counts)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        self.counts[_UFUNC_KINDS.get(ufunc.__name__, ufunc.__name__)] += 1
        vals = [i.value if isinstance(i, TracedArray) else i for i in inputs]
        kwargs.pop("out", None)
        return self._wrap(getattr(ufunc, method)(*vals, **kwargs))

    # operator plumbing; every path funnels into __array_ufunc__
    def __add__(self, o): return np.add(self, o)
    def __radd__(self, o): return np.add(o, self)
    def __sub__(self, o): return np.subtract(self, o)
    def __rsub__(self, o): return np.subtract(o, self)
    def __mul__(self, o): return np.multiply(self, o)
    def __rmul__(self, o): return np.multiply(o, self)
    def __matmul__(self, o): return np.matmul(self, o)
    def __rmatmul__(self, o): return np.matmul(o, self)
    def __truediv__(self, o): return np.divide(self, o)
    def __rtruediv__(self, o): return np.divide(o, self)
    def __pow__(self, o): return np.power(self, o)
    def __neg__(self): return np.negative(self)
    def __lt__(self, o): return np.less(self, o)
    def __le__(self, o): return np.less_equal(self, o)
    def __gt__(self, o): return np.greater(self, o)
    def __ge__(self, o): return np.greater_equal(self, o)

    def sum(self, axis=None, dtype=None, out=None, keepdims=False, initial=None, where=True):
        self.counts["add"] += 1
        return self._wrap(self.value.sum(axis=axis, keepdims=keepdims))

    def __getitem__(self, key):
        return self._wrap(self.value[key])

    @property
    def T(self):
        return self._wrap(self.value.T)

    @property
    def shape(self):
        return self.value.shape


def _raw(v):
    return v.value if isinstance(v, TracedArray) else v


def _concat_cols(parts):
    vals = [_raw(p) for p in parts]
    joined = np.concatenate(vals, axis=1)
    if isinstance(parts[0], TracedArray):
        return parts[0]._wrap(joined)
    return joined


def _int_power(v, p: int):
    """v**p by binary exponentiation; multiplications only."""
    result = None
    base = v
    n = p
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    return result


# ---------------------------------------------------------------------------
# conversion


@dataclass(frozen=True)
class ApproxConfig:
    """Budgets and (optionally) explicit domains for the four replacement
    sites. Domains left as None are calibrated from the probe set with the
    given multiplicative headroom; iteration counts and the sigmoid degree
    left as None are chosen from the analytic error targets."""

    probes: tuple[Matrix, ...] | None = None
    headroom: float = 1.5
    reciprocal_iterations: int | None = None
    inv_sqrt_iterations: int | None = None
    sigmoid_degree: int | None = None
    reciprocal_domain: tuple[float, float] | None = None
    ln1_domain: tuple[float, float] | None = None
    ln2_domain: tuple[float, float] | None = None
    sigmoid_domain: tuple[float, float] | None = None
    reciprocal_target: float = 1e-9
    inv_sqrt_target: float = 1e-9
    sigmoid_target: float = 1e-5

    def __post_init__(self):
        if self.headroom < 1.0:
            raise ValueError("headroom must be >= 1")
        for t in (self.reciprocal_target, self.inv_sqrt_target, self.sigmoid_target):
            if t <= 0:
                raise ValueError("error targets must be positive")
        if self.probes is not None:
            object.__setattr__(self, "probes", tuple(self.probes))


@dataclass
class ConversionReport:
    """What was replaced, what it costs, and how far the result drifts."""

    replaced_ops: list[dict]
    ledger: DepthLedger
    max_block_error: float
    variant: str
    stabilizer_omitted: bool
    epsilon_handling: str

    def to_dict(self) -> dict:
        return {
            "replaced_ops": self.replaced_ops,
            "ledger": self.ledger.to_dict(),
            "max_block_error": self.max_block_error,
            "variant": self.variant,
            "stabilizer_omitted": self.stabilizer_omitted,
            "epsilon_handling": self.epsilon_handling,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "ConversionReport":
        return cls(
            replaced_ops=list(obj["replaced_ops"]),
            ledger=DepthLedger.from_dict(obj["ledger"]),
            max_block_error=float(obj["max_block_error"]),
            variant=str(obj["variant"]),
            stabilizer_omitted=bool(obj["stabilizer_omitted"]),
            epsilon_handling=str(obj["epsilon_handling"]),
        )


def _calibrated_domain(values: np.ndarray, headroom: float, what: str) -> tuple[float, float]:
    lo = float(values.min()) / headroom
    hi = float(values.max()) * headroom
    if lo <= 0.0:
        raise DomainError(
            f"{what}: probe values reach {values.min():.3g}; cannot build a "
            "positive reciprocal domain (increase epsilon or supply a domain)"
        )
    return (lo, hi)


def _sum_eps_per_length(cfg: AttentionConfig) -> tuple[float, bool, str]:
    """Map the configured variant onto the mean-form denominator constant.

    Returns (epsilon in sum form, stabilizer_omitted, description). In the
    mean form the per-row denominator is eps_sum/L + mean(s**p), which equals
    the sum-form eps_sum + sum(s**p) after the 1/L numerator factor.
    """
    v = cfg.variant
    if v == "softmax":
        raise UnsupportedConversionError(
            "softmax has no polynomial form; train with a power variant"
        )
    if v == "power":
        return 0.0, False, "none (pure power; denominator must stay positive)"
    if v == "power_lipschitz":
        return cfg.epsilon, False, "sum-form epsilon carried as epsilon/L in the mean form"
    if v == "power_stable":
        return cfg.epsilon, True, (
            "max-rescale dropped; sum-form epsilon carried as epsilon/L in the mean form"
        )
    # length_agnostic: epsilon already lives in the mean form
    return cfg.epsilon, False, "mean-form epsilon used directly"


def _mean_eps(eps_sum: float, L: int, variant: str) -> float:
    if variant == "length_agnostic":
        return eps_sum
    return eps_sum / L


class ConvertedBlock:
    """Callable add/multiply-only form of one block.

    __call__ evaluates on floats with domain guards at every approximation
    site; trace() runs the identical computation over TracedArray and returns
    the primitive-op counts it recorded.
    """

    def __init__(self, w, cfg, report, sites) -> None:
        self._w = w
        self._cfg = cfg
        self.report = report
        self._sites = sites  # dict: site name -> config objects/constants

    def __call__(self, x: Matrix) -> Matrix:
        _check_block_inputs(x, self._w, self._cfg)
        return Matrix(self._core(x.array, guard=True))

    def trace(self, x: Matrix) -> Counter:
        _check_block_inputs(x, self._w, self._cfg)
        counts: Counter = Counter()
        self._core(TracedArray(x.array, counts), guard=True)
        return counts

    # -- internals ---------------------------------------------------------

    def _guard(self, values, dom: tuple[float, float], site: str) -> None:
        v = _raw(values)
        lo, hi = dom
        vmin, vmax = float(np.min(v)), float(np.max(v))
        if vmin < lo or vmax > hi:
            bad = vmin if vmin < lo else vmax
            raise DomainError(f"{site}: value {bad:.6g} outside [{lo:.6g}, {hi:.6g}]")

    def _ln(self, xa, gain, bias, site: str, guard: bool):
        gcfg: GoldschmidtConfig = self._sites[site]
        d = gain.size
        mean = np.sum(xa, axis=1, keepdims=True) * (1.0 / d)
        centered = xa - mean
        var = np.sum(centered * centered, axis=1, keepdims=True) * (1.0 / d)
        b = var + LN_DELTA
        if guard:
            self._guard(b, gcfg.domain, site)
        lo, hi = gcfg.domain
        m = 2.0 / (lo + hi)
        inv = inv_sqrt_core(b * m, gcfg.iterations) * math.sqrt(m)
        return centered * inv * gain + bias

    def _core(self, xa, guard: bool):
        w, cfg = self._w, self._cfg
        rcfg: GoldschmidtConfig = self._sites["attn.reciprocal"]
        sig: PolyApprox = self._sites["ffn.gelu"]
        eps_sum = self._sites["eps_sum"]

        xn = self._ln(xa, w.ln1_gain, w.ln1_bias, "ln1.inv_sqrt", guard)
        q, k, v = xn @ w.wq.array, xn @ w.wk.array, xn @ w.wv.array
        L = _raw(xa).shape[0]
        eps_term = _mean_eps(eps_sum, L, cfg.variant)
        heads_out = []
        for sl in _head_slices(w.d_model, w.heads):
            s = q[:, sl] @ k[:, sl].T
            if cfg.mask is not None:
                s = s * cfg.mask.array
            s = s * (1.0 / math.sqrt(cfg.d_k))
            powered = _int_power(s, cfg.p)
            denom = np.sum(powered, axis=1, keepdims=True) * (1.0 / L)
            if eps_term != 0.0:
                denom = denom + eps_term
            if guard:
                self._guard(denom, rcfg.domain, "attn.reciprocal")
            rlo, rhi = rcfg.domain
            rs = 2.0 / (rlo + rhi)
            recip = reciprocal_core(denom * rs, rcfg.iterations) * rs
            weights = (powered * (1.0 / L)) * recip
            heads_out.append(weights @ v[:, sl])
        attn = _concat_cols(heads_out) @ w.wo.array
        h = xa + attn
        hn = self._ln(h, w.ln2_gain, w.ln2_bias, "ln2.inv_sqrt", guard)
        z = hn @ w.w1.array
        t = z * GELU_SIGMOID_SLOPE
        if guard:
            self._guard(t, sig.domain, "ffn.gelu")
        # power-basis evaluation of the fitted sigmoid, then the x * sig(t) gate
        pows = [1.0, t]
        for i in range(2, sig.degree + 1):
            pows.append(pows[i // 2] * pows[i - i // 2])
        acc = sig.coefficients[0]
        for c, pw in zip(sig.coefficients[1:], pows[1:]):
            acc = acc + c * pw
        gated = z * acc
        return h + gated @ w.w2.array


def convert_block(
    w: BlockWeights, cfg: AttentionConfig, approx_cfg: ApproxConfig
) -> tuple[ConvertedBlock, ConversionReport]:
    """Build the polynomial form of a block plus its conversion report.

    Every domain not given explicitly is calibrated by running the exact
    block over approx_cfg.probes and widening the observed ranges by the
    configured headroom. max_block_error is the worst entrywise deviation
    between the exact and converted blocks over those probes.
    """
    eps_sum, omit_stabilizer, eps_note = _sum_eps_per_length(cfg)
    probes = approx_cfg.probes or ()
    needs_probes = (
        approx_cfg.reciprocal_domain is None
        or approx_cfg.ln1_domain is None
        or approx_cfg.ln2_domain is None
        or approx_cfg.sigmoid_domain is None
    )
    if needs_probes and not probes:
        raise ValueError("convert_block needs probes unless every domain is explicit")

    ln1_vals, ln2_vals, denom_vals, gelu_vals = [], [], [], []
    for x in probes:
        _check_block_inputs(x, w, cfg)
        xa = x.array
        L = xa.shape[0]
        mu = xa.mean(axis=1, keepdims=True)
        var = ((xa - mu) ** 2).mean(axis=1, keepdims=True)
        ln1_vals.append(var + LN_DELTA)
        xn = _layernorm_2d(xa, w.ln1_gain, w.ln1_bias)
        q, k = xn @ w.wq.array, xn @ w.wk.array
        v = xn @ w.wv.array
        heads_out = []
        eps_term = _mean_eps(eps_sum, L, cfg.variant)
        for sl in _head_slices(w.d_model, w.heads):
            s = masked_scores(q[:, sl], k[:, sl], cfg)
            powered = s ** cfg.p
            denom = powered.mean(axis=1, keepdims=True) + eps_term
            denom_vals.append(denom)
            # exact weights here so downstream statistics match the exact block
            weights = np.vstack([normalize_row(row, cfg) for row in s])
            heads_out.append(weights @ v[:, sl])
        h = xa + np.concatenate(heads_out, axis=1) @ w.wo.array
        mu2 = h.mean(axis=1, keepdims=True)
        var2 = ((h - mu2) ** 2).mean(axis=1, keepdims=True)
        ln2_vals.append(var2 + LN_DELTA)
        hn = _layernorm_2d(h, w.ln2_gain, w.ln2_bias)
        gelu_vals.append(GELU_SIGMOID_SLOPE * (hn @ w.w1.array))

    hr = approx_cfg.headroom
    if approx_cfg.reciprocal_domain is not None:
        recip_dom = tuple(approx_cfg.reciprocal_domain)
    else:
        recip_dom = _calibrated_domain(np.concatenate(denom_vals, axis=None), hr, "attn.reciprocal")
    if approx_cfg.ln1_domain is not None:
        ln1_dom = tuple(approx_cfg.ln1_domain)
    else:
        ln1_dom = _calibrated_domain(np.concatenate(ln1_vals, axis=None), hr, "ln1.inv_sqrt")
    if approx_cfg.ln2_domain is not None:
        ln2_dom = tuple(approx_cfg.ln2_domain)
    else:
        ln2_dom = _calibrated_domain(np.concatenate(ln2_vals, axis=None), hr, "ln2.inv_sqrt")
    if approx_cfg.sigmoid_domain is not None:
        sig_dom = tuple(approx_cfg.sigmoid_domain)
    else:
        m = float(np.max(np.abs(np.concatenate(gelu_vals, axis=None)))) * hr
        m = max(m, 1.0)
        sig_dom = (-m, m)

    k_recip = approx_cfg.reciprocal_iterations or reciprocal_iterations_for(
        recip_dom, approx_cfg.reciprocal_target
    )
    k1 = approx_cfg.inv_sqrt_iterations or inv_sqrt_iterations_for(
        ln1_dom, approx_cfg.inv_sqrt_target
    )
    k2 = approx_cfg.inv_sqrt_iterations or inv_sqrt_iterations_for(
        ln2_dom, approx_cfg.inv_sqrt_target
    )

    if approx_cfg.sigmoid_degree is not None:
        sig = fit_sigmoid(sig_dom, approx_cfg.sigmoid_degree)
    else:
        sig = None
        for degree in (15, 23, 31, 39):
            candidate = fit_sigmoid(sig_dom, degree)
            sig = candidate
            if candidate.max_error <= approx_cfg.sigmoid_target:
                break

    sites = {
        "ln1.inv_sqrt": GoldschmidtConfig(iterations=k1, domain=ln1_dom),
        "attn.reciprocal": GoldschmidtConfig(iterations=k_recip, domain=recip_dom),
        "ln2.inv_sqrt": GoldschmidtConfig(iterations=k2, domain=ln2_dom),
        "ffn.gelu": sig,
        "eps_sum": eps_sum,
    }

    replaced = [
        {"site": "ln1.inv_sqrt", "kind": "goldschmidt_inv_sqrt",
         **sites["ln1.inv_sqrt"].to_dict()},
        {"site": "attn.reciprocal", "kind": "goldschmidt_reciprocal",
         **sites["attn.reciprocal"].to_dict()},
        {"site": "ln2.inv_sqrt", "kind": "goldschmidt_inv_sqrt",
         **sites["ln2.inv_sqrt"].to_dict()},
        {"site": "ffn.gelu", "kind": "sigmoid_poly", **sig.to_dict()},
    ]

    ledger = DepthLedger()
    ledger.record("ln1.variance", 1)
    ledger.record("ln1.inv_sqrt", depth_of("goldschmidt", k1))
    ledger.record("ln1.apply", 1)
    ledger.record("ln1.gain", 1)
    ledger.record("attn.qkv_proj", depth_of("matmul"))
    ledger.record("attn.scores", 1)
    if cfg.mask is not None:
        ledger.record("attn.mask", 1)
    ledger.record("attn.power", depth_of("power", cfg.p))
    ledger.record("attn.reciprocal", depth_of("goldschmidt", k_recip))
    ledger.record("attn.normalize", 1)
    ledger.record("attn.mix", 1)
    ledger.record("attn.out_proj", depth_of("matmul"))
    ledger.record("ln2.variance", 1)
    ledger.record("ln2.inv_sqrt", depth_of("goldschmidt", k2))
    ledger.record("ln2.apply", 1)
    ledger.record("ln2.gain", 1)
    ledger.record("ffn.up_proj", depth_of("matmul"))
    ledger.record("ffn.sigmoid", depth_of("poly", sig.degree))
    ledger.record("ffn.gate", 1)
    ledger.record("ffn.down_proj", depth_of("matmul"))

    report = ConversionReport(
        replaced_ops=replaced,
        ledger=ledger,
        max_block_error=0.0,
        variant=cfg.variant,
        stabilizer_omitted=omit_stabilizer,
        epsilon_handling=eps_note,
    )
    block = ConvertedBlock(w, cfg, report, sites)

    max_err = 0.0
    for x in probes:
        exact = exact_block(x, w, cfg).array
        poly = block(x).array
        max_err = max(max_err, float(np.max(np.abs(exact - poly))))
    report.max_block_error = max_err
    return block, report
