"""Hand-derived backward passes, finite-difference checking, and a toy
gradient-descent trainer for two-block stacks.

For y = x**p / (e + sum(x**p)) the Jacobian is

    dy_j/dx_k = p x_k**(p-1) (delta_jk - y_j) / (e + sum(x**p))

so the vector-Jacobian product against an upstream u collapses to
p x**(p-1) (u - u.y) / (e + sum). The stable variant chains through the
max-rescale with a subgradient at the (first) argmax coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .attention import AttentionConfig
from .polyapprox import GELU_SIGMOID_SLOPE, sigmoid_exact
from .polymodel import LN_DELTA, WEIGHT_FIELDS, BlockWeights, random_block_weights
from .tensor import Matrix

# ---------------------------------------------------------------------------
# row-level analytic backwards


def _as_rows(x, u):
    a = np.asarray(x, dtype=np.float64)
    g = np.asarray(u, dtype=np.float64)
    if a.shape != g.shape:
        raise ValueError("upstream must match the input shape")
    return a, g


def backward_power_softmax(x, p: int, upstream) -> np.ndarray:
    """VJP of power_softmax at x against upstream."""
    a, u = _as_rows(x, upstream)
    powered = a ** p
    denom = powered.sum()
    if denom == 0.0:
        raise ZeroDivisionError("power_softmax backward: zero denominator")
    y = powered / denom
    return p * a ** (p - 1) * (u - u @ y) / denom


def backward_lipschitz_power_softmax(x, p: int, epsilon: float, upstream) -> np.ndarray:
    a, u = _as_rows(x, upstream)
    powered = a ** p
    denom = epsilon + powered.sum()
    if denom == 0.0:
        raise ZeroDivisionError("lipschitz backward: zero denominator")
    y = powered / denom
    return p * a ** (p - 1) * (u - u @ y) / denom


def backward_length_agnostic_power_softmax(
    x, p: int, epsilon: float, upstream
) -> np.ndarray:
    a, u = _as_rows(x, upstream)
    # denominator in sum form: L*eps + sum(x**p)
    return backward_lipschitz_power_softmax(a, p, a.size * epsilon, u)


def backward_stable_power_softmax(
    x, p: int, epsilon_prime: float, epsilon: float, upstream
) -> np.ndarray:
    """Chains the lipschitz VJP through z = x / (max|x| + eps').

    d c / d x_k is sign(x_m) at the first argmax coordinate m, zero
    elsewhere; callers should keep test points away from argmax ties.
    """
    a, u = _as_rows(x, upstream)
    m = int(np.argmax(np.abs(a)))
    c = abs(a[m]) + epsilon_prime
    if c == 0.0:
        raise ZeroDivisionError("stable backward: zero rescale")
    z = a / c
    gz = backward_lipschitz_power_softmax(z, p, epsilon, u)
    grad = gz / c
    grad[m] -= (gz @ z) / c * np.sign(a[m])
    return grad


def backward_softmax_from_output(y, upstream) -> np.ndarray:
    """Softmax VJP expressed from the forward output y."""
    yy, u = _as_rows(y, upstream)
    return yy * (u - u @ yy)


def backward_layernorm(x, gain, upstream):
    """Returns (dx, dgain, dbias) for layernorm_exact on one row."""
    a = np.asarray(x, dtype=np.float64)
    g = np.asarray(gain, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    mu = a.mean()
    var = ((a - mu) ** 2).mean()
    inv = 1.0 / math.sqrt(var + LN_DELTA)
    xhat = (a - mu) * inv
    dxhat = u * g
    dx = inv * (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean())
    return dx, u * xhat, u.copy()


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradResult:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def grad_check(f, x, tolerance: float = 1e-5, h: float = 1e-5) -> GradResult:
    """Central-difference check of a scalar-valued differentiable op.

    f maps an array to (value, analytic_gradient). The numeric gradient
    perturbs one coordinate at a time by +-h. The reported error is
    max |a - n| / (|a| + |n| + 1e-12) over coordinates.
    """
    x0 = np.array(x, dtype=np.float64)
    _, analytic = f(x0)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x0.shape:
        raise ValueError("analytic gradient shape must match the input")
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up, _ = f(x0)
        flat[i] = keep - h
        dn, _ = f(x0)
        flat[i] = keep
        nflat[i] = (up - dn) / (2.0 * h)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return GradResult(
        analytic=analytic, numeric=numeric,
        max_rel_err=float(rel.max()), tolerance=tolerance,
    )


# ---------------------------------------------------------------------------
# full block backward (inputs and weights)


def _normalizer_rows(s: np.ndarray, cfg: AttentionConfig, half: bool = False) -> np.ndarray:
    """Vectorized forward of the configured normalizer over score rows.

    With half=True the arithmetic runs in float16, the precision regime
    where x**p overflows once scores leave [-1, 1] by a couple of orders
    of magnitude. The rescaled variant keeps its intermediates inside
    [-1, 1] and softmax subtracts the row max, so only the raw power form
    is exposed.
    """
    if half:
        s = s.astype(np.float16)
    if cfg.variant == "softmax":
        e = np.exp(s - s.max(axis=1, keepdims=True))
        y = e / e.sum(axis=1, keepdims=True)
    elif cfg.variant == "power_stable":
        c = np.abs(s).max(axis=1, keepdims=True) + cfg.epsilon_prime
        z = s / c
        powered = z ** cfg.p
        y = powered / (cfg.epsilon + powered.sum(axis=1, keepdims=True))
    else:
        powered = s ** cfg.p
        total = powered.sum(axis=1, keepdims=True)
        if cfg.variant == "power":
            denom = total
        elif cfg.variant == "power_lipschitz":
            denom = cfg.epsilon + total
        else:  # length_agnostic, sum form
            denom = s.shape[1] * cfg.epsilon + total
        if (denom == 0.0).any():
            raise ZeroDivisionError("zero attention denominator; use an epsilon variant")
        y = powered / denom
    return y.astype(np.float64) if half else y


def _normalizer_vjp_rows(
    s: np.ndarray, u: np.ndarray, cfg: AttentionConfig, half: bool = False
) -> np.ndarray:
    """Vectorized VJP matching _normalizer_rows."""
    p = cfg.p
    if half:
        s = s.astype(np.float16)
        u = u.astype(np.float16)
    if cfg.variant == "softmax":
        y = _normalizer_rows(s, cfg)
        grad = y * (u - (u * y).sum(axis=1, keepdims=True))
    elif cfg.variant == "power_stable":
        c = np.abs(s).max(axis=1, keepdims=True) + cfg.epsilon_prime
        z = s / c
        powered = z ** p
        denom = cfg.epsilon + powered.sum(axis=1, keepdims=True)
        y = powered / denom
        gz = p * z ** (p - 1) * (u - (u * y).sum(axis=1, keepdims=True)) / denom
        grad = gz / c
        rows = np.arange(s.shape[0])
        mi = np.argmax(np.abs(s), axis=1)
        grad[rows, mi] -= (gz * z).sum(axis=1) / c[:, 0] * np.sign(s[rows, mi])
    else:
        powered = s ** p
        total = powered.sum(axis=1, keepdims=True)
        if cfg.variant == "power":
            denom = total
        elif cfg.variant == "power_lipschitz":
            denom = cfg.epsilon + total
        else:
            denom = s.shape[1] * cfg.epsilon + total
        if (denom == 0.0).any():
            raise ZeroDivisionError("zero attention denominator in backward")
        y = powered / denom
        grad = p * s ** (p - 1) * (u - (u * y).sum(axis=1, keepdims=True)) / denom
    return grad.astype(np.float64) if half else grad


def _ln_fwd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_DELTA)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def _ln_bwd(u: np.ndarray, gain: np.ndarray, cache):
    xhat, inv = cache
    dxhat = u * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, (u * xhat).sum(axis=0), u.sum(axis=0)


def _gelu_fwd(z: np.ndarray):
    sig = sigmoid_exact(GELU_SIGMOID_SLOPE * z)
    return z * sig, sig


def _gelu_bwd(u: np.ndarray, z: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return u * (sig + GELU_SIGMOID_SLOPE * z * sig * (1.0 - sig))


def _head_slices(d_model: int, heads: int):
    d_k = d_model // heads
    return [slice(h * d_k, (h + 1) * d_k) for h in range(heads)]


def _block_fwd(xa: np.ndarray, w: BlockWeights, cfg: AttentionConfig, half: bool = False):
    xn, ln1_cache = _ln_fwd(xa, w.ln1_gain, w.ln1_bias)
    q, k, v = xn @ w.wq.array, xn @ w.wk.array, xn @ w.wv.array
    scale = 1.0 / math.sqrt(cfg.d_k)
    mask = None if cfg.mask is None else cfg.mask.array
    head_s, head_y = [], []
    heads_out = []
    for sl in _head_slices(w.d_model, w.heads):
        s = q[:, sl] @ k[:, sl].T
        if mask is not None:
            s = s * mask
        s = s * scale
        y = _normalizer_rows(s, cfg, half)
        head_s.append(s)
        head_y.append(y)
        heads_out.append(y @ v[:, sl])
    o = np.concatenate(heads_out, axis=1)
    attn = o @ w.wo.array
    h = xa + attn
    hn, ln2_cache = _ln_fwd(h, w.ln2_gain, w.ln2_bias)
    z = hn @ w.w1.array
    g, sig = _gelu_fwd(z)
    out = h + g @ w.w2.array
    cache = {
        "xa": xa, "xn": xn, "ln1": ln1_cache, "q": q, "k": k, "v": v,
        "head_s": head_s, "head_y": head_y, "o": o, "hn": hn, "ln2": ln2_cache,
        "z": z, "g": g, "sig": sig, "mask": mask, "scale": scale, "half": half,
    }
    return out, cache


def _block_bwd(dout: np.ndarray, w: BlockWeights, cfg: AttentionConfig, cache):
    xa, xn = cache["xa"], cache["xn"]
    grads = {}
    dh = dout.copy()
    dg = dout @ w.w2.array.T
    grads["w2"] = cache["g"].T @ dout
    dz = _gelu_bwd(dg, cache["z"], cache["sig"])
    dhn = dz @ w.w1.array.T
    grads["w1"] = cache["hn"].T @ dz
    dh2, grads["ln2_gain"], grads["ln2_bias"] = _ln_bwd(dhn, w.ln2_gain, cache["ln2"])
    dh += dh2
    do = dh @ w.wo.array.T
    grads["wo"] = cache["o"].T @ dh
    q, k, v = cache["q"], cache["k"], cache["v"]
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for i, sl in enumerate(_head_slices(w.d_model, w.heads)):
        y, s = cache["head_y"][i], cache["head_s"][i]
        do_h = do[:, sl]
        dy = do_h @ v[:, sl].T
        dv[:, sl] = y.T @ do_h
        ds = _normalizer_vjp_rows(s, dy, cfg, cache["half"])
        ds = ds * cache["scale"]
        if cache["mask"] is not None:
            ds = ds * cache["mask"]
        dq[:, sl] = ds @ k[:, sl]
        dk[:, sl] = ds.T @ q[:, sl]
    dxn = dq @ w.wq.array.T + dk @ w.wk.array.T + dv @ w.wv.array.T
    grads["wq"] = xn.T @ dq
    grads["wk"] = xn.T @ dk
    grads["wv"] = xn.T @ dv
    dx1, grads["ln1_gain"], grads["ln1_bias"] = _ln_bwd(dxn, w.ln1_gain, cache["ln1"])
    dx = dh + dx1
    return dx, grads


def block_value_and_grad(x: Matrix, w: BlockWeights, cfg: AttentionConfig, upstream: Matrix):
    """Scalar sum(block(x) * upstream) with its gradient w.r.t. x."""
    out, cache = _block_fwd(x.array, w, cfg)
    value = float((out * upstream.array).sum())
    dx, _ = _block_bwd(upstream.array, w, cfg, cache)
    return value, dx


# ---------------------------------------------------------------------------
# standard check battery


def _smooth_point(rng: np.random.Generator, n: int = 8) -> np.ndarray:
    """Random row with entries kept away from zero and from |.|max ties."""
    while True:
        x = rng.uniform(0.2, 2.0, size=n) * rng.choice([-1.0, 1.0], size=n)
        a = np.sort(np.abs(x))
        if a[-1] - a[-2] > 0.05:
            return x


def standard_battery(
    points: int = 100,
    seed: int = 0,
    tolerance: float = 1e-5,
    block_tolerance: float = 1e-4,
    block_points: int = 10,
) -> dict[str, dict]:
    """Runs grad_check over every analytic backward in the package.

    Returns op name -> {max_rel_err, tolerance, passed} where max_rel_err
    is the worst case over the sampled points.
    """
    rng = np.random.default_rng(seed)
    p, eps, eps_prime = 4, 1e-3, 1e-6

    def power_f(u):
        def f(a):
            pw = a ** p
            return float(u @ (pw / pw.sum())), backward_power_softmax(a, p, u)
        return f

    def lipschitz_f(u):
        def f(a):
            pw = a ** p
            return float(u @ (pw / (eps + pw.sum()))), backward_lipschitz_power_softmax(a, p, eps, u)
        return f

    def agnostic_f(u):
        def f(a):
            pw = a ** p
            return (float(u @ (pw / (a.size * eps + pw.sum()))),
                    backward_length_agnostic_power_softmax(a, p, eps, u))
        return f

    def stable_f(u):
        def f(a):
            c = np.abs(a).max() + eps_prime
            z = a / c
            pw = z ** p
            return (float(u @ (pw / (eps + pw.sum()))),
                    backward_stable_power_softmax(a, p, eps_prime, eps, u))
        return f

    def layernorm_f(u, gain):
        def f(a):
            mu = a.mean()
            var = ((a - mu) ** 2).mean()
            xh = (a - mu) / math.sqrt(var + LN_DELTA)
            dx, _, _ = backward_layernorm(a, gain, u)
            return float(u @ (xh * gain)), dx
        return f

    ops = {
        "power_softmax": power_f,
        "lipschitz_power_softmax": lipschitz_f,
        "length_agnostic_power_softmax": agnostic_f,
        "stable_power_softmax": stable_f,
    }
    results = {}
    for name, build in ops.items():
        worst = 0.0
        for _ in range(points):
            x = _smooth_point(rng)
            u = rng.normal(size=x.size)
            worst = max(worst, grad_check(build(u), x, tolerance).max_rel_err)
        results[name] = {"max_rel_err": worst, "tolerance": tolerance, "passed": worst <= tolerance}

    worst = 0.0
    for _ in range(points):
        x = rng.normal(size=8)
        u = rng.normal(size=8)
        gain = rng.normal(size=8)
        worst = max(worst, grad_check(layernorm_f(u, gain), x, tolerance).max_rel_err)
    results["layernorm_exact"] = {
        "max_rel_err": worst, "tolerance": tolerance, "passed": worst <= tolerance,
    }

    cfg = AttentionConfig(variant="power_lipschitz", d_k=2, p=p, epsilon=eps)
    worst = 0.0
    for _ in range(block_points):
        w = random_block_weights(rng, 4, 2, d_ff=8)
        x = rng.normal(size=(3, 4))
        upstream = Matrix(rng.normal(size=(3, 4)))
        r = grad_check(
            lambda a: block_value_and_grad(Matrix(a), w, cfg, upstream),
            x, block_tolerance,
        )
        worst = max(worst, r.max_rel_err)
    results["exact_block"] = {
        "max_rel_err": worst, "tolerance": block_tolerance, "passed": worst <= block_tolerance,
    }
    return results


# ---------------------------------------------------------------------------
# toy trainer

TOY_D_MODEL = 32
TOY_HEADS = 2
TOY_LAYERS = 2
TOY_LEN = 8
TOY_BATCH = 4

TASKS = ("copy", "next-token-synthetic")
PRECISIONS = ("double", "half")


@dataclass(frozen=True)
class ToyTrainConfig:
    """Plain gradient descent on a fixed 2-layer, d_model=32, 2-head stack.

    score_scale sets the initial magnitude of the attention scores by
    scaling the query/key init. precision="half" evaluates the score
    normalizer (forward and backward) in float16 while the rest of the
    stack stays in float64; with scores pushed well outside [-1, 1] the
    raw power form overflows there, while the rescaled variant and the
    max-subtracted softmax keep their intermediates representable.
    """

    variant: AttentionConfig
    task: str = "copy"
    steps: int = 300
    lr: float = 0.05
    seed: int = 0
    score_scale: float = 1.0
    precision: str = "double"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}; choose from {PRECISIONS}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr <= 0 or self.score_scale <= 0:
            raise ValueError("lr and score_scale must be positive")
        if self.variant.d_k != TOY_D_MODEL // TOY_HEADS:
            raise ValueError(f"toy stack needs d_k={TOY_D_MODEL // TOY_HEADS}")


@dataclass
class ToyTrainResult:
    losses: list[float]
    diverged: bool
    weights: list[BlockWeights]
    cfg: ToyTrainConfig


def _causal_mask(n: int) -> Matrix:
    return Matrix(np.tril(np.ones((n, n))))


def _make_task(cfg: ToyTrainConfig, rng: np.random.Generator):
    if cfg.task == "copy":
        xs = rng.normal(size=(TOY_BATCH, TOY_LEN, TOY_D_MODEL))
        return xs, xs.copy(), None
    # next-token-synthetic: one-hot tokens following t -> (t + 7) mod d_model
    xs = np.zeros((TOY_BATCH, TOY_LEN, TOY_D_MODEL))
    ys = np.zeros_like(xs)
    starts = rng.integers(0, TOY_D_MODEL, size=TOY_BATCH)
    for b, t0 in enumerate(starts):
        toks = (t0 + 7 * np.arange(TOY_LEN + 1)) % TOY_D_MODEL
        xs[b, np.arange(TOY_LEN), toks[:-1]] = 1.0
        ys[b, np.arange(TOY_LEN), toks[1:]] = 1.0
    return xs, ys, _causal_mask(TOY_LEN)


def _apply_update(w: BlockWeights, grads: dict, lr: float) -> BlockWeights | None:
    """One descent step; returns None when the update overflows."""
    arrs = {}
    for name in WEIGHT_FIELDS:
        cur = getattr(w, name)
        arr = cur.array if isinstance(cur, Matrix) else cur
        new = arr - lr * grads[name]
        if not np.isfinite(new).all():
            return None
        arrs[name] = Matrix(new) if isinstance(cur, Matrix) else new
    return BlockWeights(heads=w.heads, **arrs)


def toy_train(cfg: ToyTrainConfig) -> ToyTrainResult:
    """Train the fixed toy stack; deterministic for a fixed seed.

    The per-step mean-squared-error curve is returned; a non-finite loss or
    gradient stops training and flags divergence, leaving the curve
    truncated at the last finite value.
    """
    rng = np.random.default_rng(cfg.seed)
    xs, ys, mask = _make_task(cfg, rng)
    attn_cfg = cfg.variant if mask is None else replace(cfg.variant, mask=mask)
    qk = math.sqrt(cfg.score_scale)
    weights = [
        random_block_weights(rng, TOY_D_MODEL, TOY_HEADS, d_ff=2 * TOY_D_MODEL, qk_scale=qk)
        for _ in range(TOY_LAYERS)
    ]
    losses: list[float] = []
    denom = float(np.prod(xs.shape))
    half = cfg.precision == "half"
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        for _ in range(cfg.steps):
            total_loss = 0.0
            acc = [dict() for _ in range(TOY_LAYERS)]
            ok = True
            for b in range(TOY_BATCH):
                x = xs[b]
                caches = []
                cur = x
                try:
                    for w in weights:
                        cur, cache = _block_fwd(cur, w, attn_cfg, half)
                        caches.append(cache)
                except (ZeroDivisionError, FloatingPointError):
                    ok = False
                    break
                diff = cur - ys[b]
                total_loss += float((diff * diff).sum())
                dout = 2.0 * diff / denom
                for li in range(TOY_LAYERS - 1, -1, -1):
                    dout, grads = _block_bwd(dout, weights[li], attn_cfg, caches[li])
                    for name, g in grads.items():
                        if name in acc[li]:
                            acc[li][name] += g
                        else:
                            acc[li][name] = g.copy()
            loss = total_loss / denom
            if not ok or not math.isfinite(loss):
                return ToyTrainResult(losses, True, weights, cfg)
            if any(not np.isfinite(g).all() for la in acc for g in la.values()):
                losses.append(loss)
                return ToyTrainResult(losses, True, weights, cfg)
            losses.append(loss)
            stepped = [_apply_update(w, acc[i], cfg.lr) for i, w in enumerate(weights)]
            if any(w is None for w in stepped):
                return ToyTrainResult(losses, True, weights, cfg)
            weights = stepped
    return ToyTrainResult(losses, False, weights, cfg)
