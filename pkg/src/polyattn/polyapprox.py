"""Division-free building blocks: Goldschmidt iterations, fitted polynomials,
and the multiplicative-depth accounting they are charged under.

Everything here is expressed with additions and multiplications only, because
the target runtime is an encrypted evaluation where exp/div/sqrt/comparisons
do not exist. Certified sup-errors are measured on a dense uniform grid of the
stated domain; evaluating outside that domain raises DomainError instead of
silently extrapolating.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.chebyshev import Chebyshev
from numpy.polynomial.polynomial import Polynomial
from scipy.special import expit

CERT_GRID_POINTS = 10001


class DomainError(ValueError):
    """An input left the domain an approximation was certified on."""


# ---------------------------------------------------------------------------
# depth accounting


def depth_of(kind: str, n: int | None = None) -> int:
    """Multiplicative depth charged to one primitive.

    power(p)       -> ceil(log2 p)   (repeated squaring)
    goldschmidt(k) -> 2k             (two sequential products per iteration)
    poly(d)        -> ceil(log2 d)+1 (power basis by squaring, then combine)
    matmul         -> 1              (plain weights times live values)
    add            -> 0
    """
    if kind == "add":
        return 0
    if kind == "matmul":
        return 1
    if n is None:
        raise ValueError(f"depth_of({kind!r}) requires an argument")
    if kind == "power":
        if n < 1:
            raise ValueError("power argument must be >= 1")
        return math.ceil(math.log2(n)) if n > 1 else 0
    if kind == "goldschmidt":
        if n < 1:
            raise ValueError("goldschmidt iteration count must be >= 1")
        return 2 * n
    if kind == "poly":
        if n < 0:
            raise ValueError("polynomial degree must be >= 0")
        return 0 if n == 0 else math.ceil(math.log2(n)) + 1
    raise ValueError(f"unknown op kind {kind!r}")


class DepthLedger:
    """Append-only list of (stage, depth) along one sequential pipeline.

    The total is the plain sum of entries: sequential composition adds
    depths, and callers record parallel branches as a single max entry.
    """

    def __init__(self) -> None:
        self._entries: list[tuple[str, int]] = []

    def record(self, name: str, depth: int) -> None:
        if depth < 0:
            raise ValueError("depth must be nonnegative")
        self._entries.append((name, int(depth)))

    def extend(self, other: "DepthLedger", prefix: str = "") -> None:
        for name, depth in other.entries:
            self.record(prefix + name, depth)

    @property
    def entries(self) -> tuple[tuple[str, int], ...]:
        return tuple(self._entries)

    @property
    def total(self) -> int:
        return sum(d for _, d in self._entries)

    def to_dict(self) -> dict:
        return {"entries": [[n, d] for n, d in self._entries], "total": self.total}

    @classmethod
    def from_dict(cls, obj: dict) -> "DepthLedger":
        ledger = cls()
        for name, depth in obj["entries"]:
            ledger.record(name, depth)
        if ledger.total != obj.get("total", ledger.total):
            raise ValueError("ledger total does not match its entries")
        return ledger


# ---------------------------------------------------------------------------
# polynomial evaluation


def _power_basis(x, degree: int):
    """Monomials x**0 .. x**degree built multiplicatively.

    x**k reuses x**(k//2) * x**(k - k//2), the squaring tree whose depth is
    ceil(log2 k); works on scalars and numpy arrays alike.
    """
    one = np.ones_like(x) if isinstance(x, np.ndarray) else 1.0
    pows = [one, x]
    for k in range(2, degree + 1):
        pows.append(pows[k // 2] * pows[k - k // 2])
    return pows[: degree + 1]


@dataclass(frozen=True)
class PolyApprox:
    """Monomial-basis polynomial with a certified sup-error on its domain.

    coefficients are ascending in degree. max_error is the measured sup
    deviation from the target function on the certification grid (zero for
    polynomials that are not approximating anything).
    """

    coefficients: tuple[float, ...]
    domain: tuple[float, float]
    max_error: float = 0.0

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if len(coeffs) == 0:
            raise ValueError("PolyApprox needs at least one coefficient")
        lo, hi = (float(self.domain[0]), float(self.domain[1]))
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise ValueError(f"invalid domain [{lo}, {hi}]")
        if not all(math.isfinite(c) for c in coeffs):
            raise ValueError("coefficients must be finite")
        if self.max_error < 0:
            raise ValueError("max_error must be nonnegative")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "domain", (lo, hi))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def depth(self) -> int:
        return depth_of("poly", self.degree)

    def to_dict(self) -> dict:
        return {
            "coefficients": list(self.coefficients),
            "domain": list(self.domain),
            "depth": self.depth,
            "max_error": self.max_error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "PolyApprox":
        poly = cls(
            coefficients=tuple(obj["coefficients"]),
            domain=tuple(obj["domain"]),
            max_error=float(obj["max_error"]),
        )
        if "depth" in obj and int(obj["depth"]) != poly.depth:
            raise ValueError("serialized depth does not match the degree rule")
        return poly

    @classmethod
    def from_json(cls, text: str) -> "PolyApprox":
        return cls.from_dict(json.loads(text))


def _eval_coeffs(coefficients, x):
    pows = _power_basis(x, len(coefficients) - 1)
    acc = coefficients[0] * pows[0]
    for c, pw in zip(coefficients[1:], pows[1:]):
        acc = acc + c * pw
    return acc


def eval_poly(p: PolyApprox, x: float) -> float:
    """Evaluate p at a scalar x inside p.domain."""
    lo, hi = p.domain
    if not (lo <= x <= hi):
        raise DomainError(f"eval_poly: x={x} outside certified domain [{lo}, {hi}]")
    return float(_eval_coeffs(p.coefficients, float(x)))


def eval_poly_grid(p: PolyApprox, xs: np.ndarray) -> np.ndarray:
    """Vectorized twin of eval_poly (same arithmetic, same domain check)."""
    lo, hi = p.domain
    if xs.min() < lo or xs.max() > hi:
        raise DomainError("eval_poly_grid: grid leaves the certified domain")
    return _eval_coeffs(p.coefficients, np.asarray(xs, dtype=np.float64))


# ---------------------------------------------------------------------------
# sigmoid / GELU fits


def sigmoid_exact(x):
    """Reference logistic used for fitting and certification."""
    return expit(x)


def fit_sigmoid(domain: tuple[float, float], degree: int = 15) -> PolyApprox:
    """Chebyshev-interpolated logistic, returned in the monomial basis.

    The sup-error is measured against the exact logistic on a uniform
    10001-point grid of the domain, using the same power-basis evaluation
    eval_poly performs, so the certificate covers evaluation error too.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if lo >= hi:
        raise ValueError(f"invalid domain [{lo}, {hi}]")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    cheb = Chebyshev.interpolate(sigmoid_exact, degree, domain=[lo, hi])
    mono = cheb.convert(kind=Polynomial)
    coeffs = tuple(float(c) for c in mono.coef)
    probe = PolyApprox(coefficients=coeffs, domain=(lo, hi), max_error=0.0)
    xs = np.linspace(lo, hi, CERT_GRID_POINTS)
    err = float(np.max(np.abs(eval_poly_grid(probe, xs) - sigmoid_exact(xs))))
    return PolyApprox(coefficients=coeffs, domain=(lo, hi), max_error=err)


GELU_SIGMOID_SLOPE = 1.702


def gelu_exact(x):
    """x * sigmoid(1.702 x), the sigmoid-gated form this artifact targets."""
    return x * sigmoid_exact(GELU_SIGMOID_SLOPE * x)


def gelu_poly(x: float, sig: PolyApprox) -> float:
    """x * sig(1.702 x); requires 1.702 x to lie in sig.domain."""
    t = GELU_SIGMOID_SLOPE * x
    lo, hi = sig.domain
    if not (lo <= t <= hi):
        raise DomainError(
            f"gelu_poly: 1.702*x={t} outside sigmoid domain [{lo}, {hi}]"
        )
    return float(x) * eval_poly(sig, t)


# ---------------------------------------------------------------------------
# Goldschmidt iterations


@dataclass(frozen=True)
class GoldschmidtConfig:
    """Iteration count and the input domain the iteration is tuned for."""

    iterations: int
    domain: tuple[float, float]

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        lo, hi = float(self.domain[0]), float(self.domain[1])
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("domain bounds must be finite")
        if lo < 0 or lo >= hi:
            raise ValueError(f"domain must satisfy 0 <= lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "domain", (lo, hi))

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, obj: dict) -> "GoldschmidtConfig":
        return cls(iterations=int(obj["iterations"]), domain=tuple(obj["domain"]))


def reciprocal_core(x_scaled, iterations: int):
    """r <- r * (2 - x*r) from r = 1; converges to 1/x for x in (0, 2).

    After k iterations the exact-arithmetic residual is
    1 - x*r = (1 - x)**(2**k). Written with * and - only so it also runs
    on traced values.
    """
    r = 1.0
    for _ in range(iterations):
        r = r * (2.0 - x_scaled * r)
    return r


def inv_sqrt_core(b, iterations: int):
    """Coupled iteration converging to (sqrt(b), 1/(2 sqrt(b))) for b in (0, 2).

    Seeds g = b, h = 1/2 and rescales both by (1 + r) with r = 1/2 - g*h.
    The residual E = 1 - 2 g h obeys E' = (3 E^2 + E^3) / 4, so convergence
    is quadratic; two sequential products per iteration.
    """
    g = b
    h = 0.5
    for _ in range(iterations):
        r = 0.5 - g * h
        g = g + g * r
        h = h + h * r
    return 2.0 * h


def _check_in_domain(x: float, cfg: GoldschmidtConfig, what: str) -> None:
    lo, hi = cfg.domain
    if not (lo <= x <= hi):
        raise DomainError(f"{what}: x={x} outside domain [{lo}, {hi}]")


def goldschmidt_reciprocal(x: float, cfg: GoldschmidtConfig) -> float:
    """Approximate 1/x on cfg.domain with cfg.iterations Goldschmidt steps.

    The input is rescaled by s = 2/(lo+hi), which needs lo > 0 so the scaled
    value stays inside (0, 2). The exact-arithmetic error of the result is
    (1/x) * |1 - s*x| ** (2**iterations); see reciprocal_error_bound.
    """
    lo, hi = cfg.domain
    if lo <= 0:
        raise ValueError("reciprocal domain needs lo > 0")
    _check_in_domain(x, cfg, "goldschmidt_reciprocal")
    s = 2.0 / (lo + hi)
    return s * reciprocal_core(x * s, cfg.iterations)


def reciprocal_error_bound(x: float, cfg: GoldschmidtConfig) -> float:
    """Exact-arithmetic error of goldschmidt_reciprocal at x.

    Equals (1/x) * |1 - x_scaled| ** (2**k); float rounding adds at most a
    few ulp of 1/x on top of this.
    """
    lo, hi = cfg.domain
    s = 2.0 / (lo + hi)
    q = abs(1.0 - x * s)
    # q**(2**k) via k sequential squarings to avoid pow under/overflow surprises
    for _ in range(cfg.iterations):
        q = q * q
    return q / x


def goldschmidt_inv_sqrt(x: float, cfg: GoldschmidtConfig) -> float:
    """Approximate 1/sqrt(x) on cfg.domain (lo > 0 required).

    Rescales by m = 2/(lo+hi) so the iteration sees a value in (0, 2), then
    multiplies the result by sqrt(m), a plaintext constant of the config.
    """
    lo, hi = cfg.domain
    if lo <= 0:
        raise ValueError("inv_sqrt domain needs lo > 0")
    _check_in_domain(x, cfg, "goldschmidt_inv_sqrt")
    m = 2.0 / (lo + hi)
    return inv_sqrt_core(x * m, cfg.iterations) * math.sqrt(m)


def reciprocal_iterations_for(domain: tuple[float, float], target: float = 1e-9) -> int:
    """Smallest k whose worst-case relative error on the domain is <= target."""
    lo, hi = float(domain[0]), float(domain[1])
    if lo <= 0 or lo >= hi:
        raise ValueError("domain must satisfy 0 < lo < hi")
    q = max(abs(1.0 - 2.0 * lo / (lo + hi)), abs(1.0 - 2.0 * hi / (lo + hi)))
    k = 1
    q = q * q
    while q > target and k < 40:
        q = q * q
        k += 1
    return k


def inv_sqrt_iterations_for(domain: tuple[float, float], target: float = 1e-9) -> int:
    """Smallest k with worst-case |result**2 * x - 1| <= target on the domain."""
    lo, hi = float(domain[0]), float(domain[1])
    if lo <= 0 or lo >= hi:
        raise ValueError("domain must satisfy 0 < lo < hi")
    e = (hi - lo) / (hi + lo)
    k = 0
    while e > target and k < 60:
        e = (3.0 * e * e + e ** 3) / 4.0
        k += 1
    return max(k, 1)
