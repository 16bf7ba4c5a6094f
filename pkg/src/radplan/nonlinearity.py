"""Nonlinearities h, g and the integral transform H(s) = int_{u0}^s dt / (h(t) + g(t)).

A :class:`NonlinearityPair` holds two vectorised callables together with the
declared zero ``s0`` of ``g``.  :func:`validate_pair` checks the structural
conditions on sampled points, and :class:`HTransform` evaluates ``H`` and its
inverse by adaptive quadrature.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import DomainError, EnvelopeRangeError, NumericError, ValidationError

ScalarFn = Callable[[np.ndarray], np.ndarray]

#: Upper cutoff used to decide whether H(inf) is finite.
H_CUTOFF = 1e12
#: Per-decade increment below which the tail of H is declared convergent.
H_TAIL_INCREMENT = 1e-14
#: Largest argument the inverse search will consider.
S_SEARCH_MAX = 1e300

QUAD_EPSREL = 1e-12
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _model_h(u):
    return np.asarray(u, dtype=float)


def _model_g(u):
    # u ln u, extended by its limit 0 at u = 0
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(u == 0.0, 0.0, u * np.log(u))


@dataclass(frozen=True)
class NonlinearityPair:
    """The pair (h, g) with the declared zero ``s0`` of g.

    Both callables must accept numpy arrays.  ``kind`` is one of
    ``"model-log"``, ``"power"`` or ``"custom"``.
    """

    h: ScalarFn
    g: ScalarFn
    s0: float
    kind: str = "custom"
    label: str = "custom"

    @classmethod
    def model_log(cls) -> "NonlinearityPair":
        """h(u) = u, g(u) = u ln u, s0 = 1."""
        return cls(_model_h, _model_g, 1.0, kind="model-log", label="model-log")

    @classmethod
    def power(cls, p: float, q: float, s0: float = 1.0) -> "NonlinearityPair":
        """h(u) = u**p, g(u) = u**q - s0**q.

        For p > 1 the integral H converges at infinity, so this family is the
        built-in example where global existence is not guaranteed.
        """
        shift = s0**q

        def h(u):
            return np.asarray(u, dtype=float) ** p

        def g(u):
            return np.asarray(u, dtype=float) ** q - shift

        label = f"power:{p:g},{q:g},{s0:g}"
        return cls(h, g, float(s0), kind="power", label=label)

    @classmethod
    def custom(cls, h: ScalarFn, g: ScalarFn, s0: float, label: str = "custom") -> "NonlinearityPair":
        return cls(h, g, float(s0), kind="custom", label=label)

    @classmethod
    def from_name(cls, name: str) -> "NonlinearityPair":
        """Resolve ``"model-log"`` or ``"power:p,q,s0"``."""
        name = name.strip()
        if name == "model-log":
            return cls.model_log()
        if name.startswith("power:"):
            try:
                parts = [float(x) for x in name[len("power:"):].split(",")]
            except ValueError:
                raise ValidationError(f"power pair needs numeric 'power:p,q[,s0]', got {name!r}") from None
            if len(parts) == 2:
                parts.append(1.0)
            if len(parts) != 3:
                raise ValidationError(f"power pair needs 'power:p,q[,s0]', got {name!r}")
            return cls.power(*parts)
        raise ValidationError(f"unknown nonlinearity {name!r}")

    def total(self, s):
        """h(s) + g(s)."""
        return np.asarray(self.h(s), dtype=float) + np.asarray(self.g(s), dtype=float)


# --------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    first_violation: float | None = None
    detail: str = ""
    required: bool = True


@dataclass(frozen=True)
class ValidationReport:
    pair_label: str
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.required and not c.passed]

    def as_dict(self) -> dict:
        return {
            "pair": self.pair_label,
            "ok": self.ok,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "required": c.required,
                    "first_violation": c.first_violation,
                    "detail": c.detail,
                }
                for c in self.checks
            ],
        }


def _first(mask, points):
    idx = np.flatnonzero(mask)
    return None if idx.size == 0 else float(points[idx[0]])


def _safe_eval(fn, x):
    with np.errstate(all="ignore"):
        return np.broadcast_to(np.asarray(fn(x), dtype=float), np.shape(x)).copy()


def validate_pair(
    pair: NonlinearityPair,
    sample_count: int = 64,
    s_max: float | None = None,
    atol: float = 1e-10,
) -> ValidationReport:
    """Check h1) and g1) on sampled points.

    The limit of g at the origin is reported but not required: the solver
    only ever evaluates g on [u0, inf) with u0 >= s0.
    """
    if sample_count < 8:
        raise ValueError("sample_count must be at least 8")
    s0 = pair.s0
    if s_max is None:
        s_max = 10.0 * s0 + 10.0
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    if s_max <= s0:
        raise ValueError("s_max must exceed s0")

    checks: list[Check] = []
    h_pts = np.concatenate([[0.0], np.linspace(0.0, s_max, sample_count + 1)[1:]])
    below = np.linspace(0.0, s0, sample_count + 2)[1:-1]
    above = np.linspace(s0, s_max, sample_count + 1)[1:]

    h_vals = _safe_eval(pair.h, h_pts)
    g_below = _safe_eval(pair.g, below)
    g_above = _safe_eval(pair.g, above)
    g_s0 = float(_safe_eval(pair.g, np.array([s0]))[0])

    finite_pts = np.concatenate([h_pts, below, above, [s0]])
    finite_vals = np.concatenate([h_vals, g_below, g_above, [g_s0]])
    bad = ~np.isfinite(finite_vals)
    # h(0) and the g samples are reported separately so the first offender is named
    checks.append(Check("finite", not bad.any(), _first(bad, finite_pts),
                        "h and g finite at every sample"))

    checks.append(Check("h(0)=0", bool(abs(h_vals[0]) <= atol), 0.0 if abs(h_vals[0]) > atol else None,
                        f"h(0)={h_vals[0]!r}"))
    pos = h_vals[1:] > 0
    checks.append(Check("h>0 on (0,s_max]", bool(pos.all()), _first(~pos, h_pts[1:])))
    dec = np.diff(h_vals) < -atol * np.maximum(1.0, np.abs(h_vals[1:]))
    checks.append(Check("h nondecreasing", not dec.any(), _first(dec, h_pts[1:])))

    checks.append(Check("g(s0)=0", bool(abs(g_s0) <= atol), s0 if abs(g_s0) > atol else None,
                        f"g(s0)={g_s0!r}"))
    neg = g_below < 0
    checks.append(Check("g<0 on (0,s0)", bool(neg.all()), _first(~neg, below)))
    gpos = g_above > 0
    checks.append(Check("g>0 on (s0,s_max]", bool(gpos.all()), _first(~gpos, above)))
    gvals = np.concatenate([[g_s0], g_above])
    gdec = np.diff(gvals) < -atol * np.maximum(1.0, np.abs(gvals[1:]))
    checks.append(Check("g nondecreasing on (s0,s_max]", not gdec.any(), _first(gdec, above)))

    tiny = s0 * np.logspace(-12, -6, 7)
    g_tiny = _safe_eval(pair.g, tiny)
    scale = max(1.0, float(np.max(np.abs(g_below))) if g_below.size else 1.0)
    near_zero = bool(np.all(np.isfinite(g_tiny)) and abs(g_tiny[0]) <= 1e-3 * scale)
    checks.append(Check("g(0+)=0", near_zero, None if near_zero else float(tiny[0]),
                        f"g({tiny[0]:.1e})={g_tiny[0]!r}", required=False))
    return ValidationReport(pair.label, tuple(checks))


# --------------------------------------------------------------------------
# H transform

def _segments(lo: float, hi: float):
    """Split [lo, hi] at the powers of ten it contains, so that quadrature sees
    at most one decade of t at a time."""
    edges = [lo]
    k = math.floor(math.log10(lo)) + 1 if lo > 0 else 0
    while 10.0**k < hi:
        if 10.0**k > lo:
            edges.append(10.0**k)
        k += 1
    edges.append(hi)
    return edges


@dataclass(frozen=True)
class HTransform:
    """H(s) = int_{u0}^s dt / (h(t) + g(t)) for a fixed pair and lower limit u0."""

    pair: NonlinearityPair
    u0: float
    h_infinity: float = field(init=False)

    def __post_init__(self):
        if self.u0 < self.pair.s0:
            raise DomainError(f"u0={self.u0} below s0={self.pair.s0}")
        object.__setattr__(self, "_cum", [])
        object.__setattr__(self, "h_infinity", self._estimate_h_infinity())

    def integrand(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            den = self.pair.total(t)
        if np.any(~np.isfinite(den)):
            raise NumericError(f"h+g not finite near t={float(np.ravel(t)[0])!r}")
        if np.any(den <= 0):
            raise DomainError(
                f"h(t)+g(t) <= 0 at t={float(np.ravel(t)[np.argmax(np.ravel(den) <= 0)])!r}; "
                "u0 below the admissible range"
            )
        return 1.0 / den

    def integral(self, lo: float, hi: float) -> float:
        """int_lo^hi dt/(h+g) for u0 <= lo <= hi.

        Short intervals use a fixed 10-point Gauss-Legendre rule; longer ones
        go to QUADPACK one decade at a time.
        """
        if hi == lo:
            return 0.0
        if hi - lo <= 0.05 * max(1.0, lo):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            return float(half * np.dot(_GL_WEIGHTS, self.integrand(mid + half * _GL_NODES)))
        total = 0.0
        edges = _segments(lo, hi)
        f = lambda t: float(self.integrand(t))  # noqa: E731
        for a, b in zip(edges[:-1], edges[1:]):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=QUAD_EPSREL, limit=200)
            if not math.isfinite(val) or err > 1e-10 * abs(val):
                raise NumericError(f"quadrature of 1/(h+g) on [{a}, {b}] did not converge (err={err:.3g})")
            total += val
        return total

    def __call__(self, s: float) -> float:
        return eval_H(self, s)

    def inverse(self, y: float) -> float:
        return eval_H_inv(self, y)

    # Cumulative values of H at the decade edges u0 + 10**k, k = 0, 1, ...
    # are computed lazily; any H(s) is then one table entry plus a quadrature
    # over at most one decade.

    def edge(self, k: int) -> float:
        return self.u0 + 10.0**k

    def _table(self, k: int) -> float:
        cum = self._cum
        while len(cum) <= k:
            j = len(cum)
            lo = self.u0 if j == 0 else self.edge(j - 1)
            cum.append((cum[-1] if cum else 0.0) + self.integral(lo, self.edge(j)))
        return cum[k]

    def value(self, s: float) -> float:
        """H(s) through the decade table."""
        d = s - self.u0
        if d <= 1.0:
            return self.integral(self.u0, s)
        k = int(math.floor(math.log10(d)))
        while k > 0 and self.edge(k) > s:
            k -= 1
        return self._table(k) + self.integral(self.edge(k), s)

    def bracket(self, y: float):
        """Return (lo, H(lo), hi, H(hi)) with H(lo) <= y <= H(hi) inside one decade.

        Returns ``None`` when y exceeds H at the search ceiling.
        """
        if y <= 0.0:
            return self.u0, 0.0, self.u0, 0.0
        kmax = int(math.floor(math.log10(S_SEARCH_MAX)))
        k = 0
        while self._table(k) < y:
            k += 1
            if k > kmax:
                return None
        lo = self.u0 if k == 0 else self.edge(k - 1)
        h_lo = 0.0 if k == 0 else self._table(k - 1)
        return lo, h_lo, self.edge(k), self._table(k)

    def _estimate_h_infinity(self) -> float:
        n = int(round(math.log10(H_CUTOFF)))
        self._table(n)
        cum = self._cum
        incs = [cum[0]] + [cum[j] - cum[j - 1] for j in range(1, n + 1)]
        last = incs[-1]
        if last >= H_TAIL_INCREMENT:
            return math.inf
        total = cum[n]
        prev = incs[-2]
        if prev > 0 and last < prev:
            q = last / prev
            total += last * q / (1.0 - q)
        return total

    def newton_inverse(self, y: float, s: float, hs: float, max_iter: int = 200) -> float:
        """Solve H(s) = y starting from a known pair (s, H(s)).

        H is concave on [u0, inf) because h + g is nondecreasing there, so
        Newton iterates approach the root monotonically from the left after
        at most one step.  Returns ``inf`` when the root lies beyond
        :data:`S_SEARCH_MAX` or ``y`` reaches ``h_infinity``.
        """
        if y >= self.h_infinity:
            return math.inf
        br = self.bracket(y)
        if br is None:
            return math.inf
        lo, h_lo, hi, h_hi = br
        if not lo <= s <= hi:
            s, hs = lo, h_lo
        tol = 1e-13 * max(1.0, abs(y))
        for _ in range(max_iter):
            r = y - hs
            if abs(r) <= tol:
                return s
            s_new = min(hi, max(lo, s + r * float(self.pair.total(s))))
            if s_new == s:
                return s
            if abs(s_new - s) <= 0.05 * max(1.0, s):
                hs = hs + (self.integral(s, s_new) if s_new > s else -self.integral(s_new, s))
            else:
                hs = self.value(s_new)
            s = s_new
        return s


def eval_H(ht: HTransform, s: float) -> float:
    """Adaptive-quadrature value of H(s); exactly 0 at s = u0."""
    s = float(s)
    if s < ht.u0:
        raise DomainError(f"s={s} below u0={ht.u0}")
    if s == ht.u0:
        return 0.0
    return ht.value(s)


def eval_H_inv(ht: HTransform, y: float, rtol: float = 1e-12) -> float:
    """Inverse of H by bracket expansion followed by bisection.

    Raises :class:`EnvelopeRangeError` when ``y >= h_infinity`` (or the bracket
    cannot be closed below :data:`S_SEARCH_MAX`).
    """
    y = float(y)
    if y < 0:
        raise DomainError(f"y={y} must be nonnegative")
    if y == 0:
        return ht.u0
    if y >= ht.h_infinity:
        raise EnvelopeRangeError(
            f"y={y} >= H(inf)={ht.h_infinity}: beyond guaranteed existence envelope"
        )
    tol = rtol * max(1.0, y)
    br = ht.bracket(y)
    if br is None:
        raise EnvelopeRangeError(f"y={y}: H^-1 exceeds {S_SEARCH_MAX:g}")
    lo, h_lo, hi, h_hi = br
    if abs(h_hi - y) <= tol:
        return hi
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        h_mid = h_lo + ht.integral(lo, mid)
        if abs(h_mid - y) <= tol:
            return mid
        if h_mid < y:
            lo, h_lo = mid, h_mid
        else:
            hi = mid
