"""Envelope functions, large/bounded classification and a-posteriori checks.

``P_bar(r) = T[a + b](r)`` and ``P_under(r) = T[m](r)`` bound a radial
solution through ``u0 + P_under(r) <= u(r) <= H^{-1}(P_bar(r))``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import UnsupportedDimensionError
from .nonlinearity import HTransform
from .radial_solver import RadialProblem, RadialSolution, evaluate, nested_parts

#: g(u0) is treated as zero below this magnitude when selecting the branch of m.
M_BRANCH_ATOL = 1e-12
#: Finest spacing used by the probe-based routines.
PROBE_SPACING = 0.01
#: Cap on grid size for a single nested integral.
MAX_POINTS = 2**21 + 1


def m_function(problem: RadialProblem, s):
    """Lower source term: a(s) h(u0) if g(u0) = 0, else (a+b)(s) min{h(u0), g(u0)}."""
    u0 = np.array([problem.u0])
    h0 = float(problem.pair.h(u0)[0])
    g0 = float(np.asarray(problem.pair.g(u0), dtype=float)[0])
    a = evaluate(problem.a, s)
    if abs(g0) <= M_BRANCH_ATOL:
        out = a * h0
    else:
        out = (a + evaluate(problem.b, s)) * min(h0, g0)
    return float(out) if np.ndim(s) == 0 else out


def _source(problem, which):
    if which == "bar":
        return lambda r: evaluate(problem.a, r) + evaluate(problem.b, r)
    if which == "under":
        return lambda r: np.asarray(m_function(problem, np.asarray(r, dtype=float)), dtype=float)
    raise ValueError(which)


def envelope_profiles(problem: RadialProblem, grid):
    """(P_under, P_bar) on a uniform grid starting at 0."""
    grid = np.asarray(grid, dtype=float)
    p_under = nested_parts(_source(problem, "under")(grid), problem.N, grid)[0]
    p_bar = nested_parts(_source(problem, "bar")(grid), problem.N, grid)[0]
    return p_under, p_bar


def _closed_tail(fn, N, R, spacing=PROBE_SPACING):
    """(P(R), P(R) + I(R) R^{2-N}/(N-2)) with I(R) = int_0^R s^{N-1} f ds.

    The second value is the limit at infinity of the envelope built from the
    coefficient truncated to [0, R]; it is +inf for N <= 2 unless I(R) = 0.
    Both values are Richardson-refined over three nested grids.
    """
    cells = max(512, int(math.ceil(R / spacing)))
    cells = min(cells, (MAX_POINTS - 1) // 4)
    plain, closed = [], []
    for k in (1, 2, 4):
        grid = np.linspace(0.0, R, k * cells + 1)
        total, outer = nested_parts(fn(grid), N, grid)
        inner = float(outer[-1]) * R ** (N - 1)
        if N >= 3:
            tail = inner * R ** (2 - N) / (N - 2)
        else:
            tail = 0.0 if inner == 0.0 else math.inf
        plain.append(float(total[-1]))
        closed.append(float(total[-1]) + tail)

    def combine(t):
        if not all(map(math.isfinite, t)):
            return math.inf
        r1 = (4 * t[1] - t[0]) / 3
        r2 = (4 * t[2] - t[1]) / 3
        return (16 * r2 - r1) / 15

    return combine(plain), combine(closed)


def p_bar(problem: RadialProblem, r: float) -> float:
    """int_0^r t^{1-N} int_0^t s^{N-1} (a + b)(s) ds dt."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r == 0:
        return 0.0
    return _closed_tail(_source(problem, "bar"), problem.N, float(r))[0]


def p_under(problem: RadialProblem, r: float) -> float:
    """int_0^r t^{1-N} int_0^t s^{N-1} m(s) ds dt."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r == 0:
        return 0.0
    return _closed_tail(_source(problem, "under"), problem.N, float(r))[0]


# --------------------------------------------------------------------------
# asymptotics

@dataclass(frozen=True)
class AsymptoticReport:
    p_under_estimate: float
    p_bar_estimate: float
    classification: str  # "Large" | "Bounded" | "Inconclusive"
    probe_radii: tuple
    p_under_values: tuple = ()
    p_bar_values: tuple = ()
    p_bar_limits: tuple = ()

    def as_dict(self):
        return {
            "classification": self.classification,
            "p_under_estimate": self.p_under_estimate,
            "p_bar_estimate": self.p_bar_estimate,
            "probe_radii": list(self.probe_radii),
            "p_under_values": list(self.p_under_values),
            "p_bar_values": list(self.p_bar_values),
            "p_bar_limits": list(self.p_bar_limits),
        }


DEFAULT_PROBES = (10.0, 100.0, 1000.0, 10000.0)


def classify(problem: RadialProblem, probe_schedule=DEFAULT_PROBES) -> AsymptoticReport:
    """Decide whether the envelopes force a large or a bounded solution.

    Bounded: the tail-closed P_bar values at the last three probes differ by
    at most 1e-10 relative.  Large: P_under grows at least tenfold over the
    last decade of probes.  Anything else is Inconclusive, since the two
    sufficient conditions do not cover every case.
    """
    probes = np.asarray(probe_schedule, dtype=float)
    if probes.size < 4 or np.any(np.diff(probes) <= 0) or probes[0] <= 0:
        raise ValueError("probe_schedule needs at least 4 increasing positive radii")
    if probes[-1] / probes[0] < 1e3 * (1 - 1e-12):
        raise ValueError("probe_schedule must span at least 3 decades")

    under_fn, bar_fn = _source(problem, "under"), _source(problem, "bar")
    under, bar, bar_lim = [], [], []
    for R in probes:
        pu, _ = _closed_tail(under_fn, problem.N, R)
        pb, pb_inf = _closed_tail(bar_fn, problem.N, R)
        under.append(pu)
        bar.append(pb)
        bar_lim.append(pb_inf)

    last = bar_lim[-1]
    bounded = math.isfinite(last) and all(
        abs(bar_lim[k] - bar_lim[k - 1]) <= 1e-10 * abs(last) for k in (-1, -2)
    )
    decade = np.flatnonzero(probes <= probes[-1] / 10 * (1 + 1e-12))
    large = False
    if decade.size:
        prev = under[int(decade[-1])]
        large = under[-1] > 0 and under[-1] >= 10 * prev

    if bounded:
        cls, pu_est, pb_est = "Bounded", under[-1], last
    elif large:
        cls, pu_est, pb_est = "Large", math.inf, math.inf
    else:
        cls, pu_est, pb_est = "Inconclusive", under[-1], last
    return AsymptoticReport(pu_est, pb_est, cls, tuple(probes.tolist()),
                            tuple(under), tuple(bar), tuple(bar_lim))


# --------------------------------------------------------------------------
# bounds

@dataclass(frozen=True)
class BoundsReport:
    a1_holds: bool
    c1: float
    a2_holds: bool
    c2: float
    lower_envelope_holds: bool
    upper_envelope_holds: bool
    worst_margin: float
    margins: dict = field(default_factory=dict)
    upper_envelope: np.ndarray | None = None
    lower_envelope: np.ndarray | None = None

    @property
    def all_hold(self) -> bool:
        return self.a1_holds and self.a2_holds and self.lower_envelope_holds and self.upper_envelope_holds

    def as_dict(self):
        return {
            "a1_holds": self.a1_holds,
            "all_hold": self.all_hold,
            "C1": self.c1,
            "a2_holds": self.a2_holds,
            "C2": self.c2,
            "lower_envelope_holds": self.lower_envelope_holds,
            "upper_envelope_holds": self.upper_envelope_holds,
            "worst_margin": self.worst_margin,
            "margins": dict(self.margins),
        }


def upper_envelope(ht: HTransform, u, p_bar_values):
    """H^{-1}(P_bar) at every node, warm-started along the grid.

    P_bar is nondecreasing in r, so the previous root (whose H value is the
    previous target) is a left starting point for the next Newton solve.
    The solution value is used instead when it lies further right.  H(u_i)
    is accumulated along the solution so that each quadrature covers one
    short interval.  Nodes whose target exceeds H(inf) get +inf.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    h_prev, s_prev = 0.0, ht.u0
    root, h_root = ht.u0, 0.0
    for i, (ui, yi) in enumerate(zip(u, p_bar_values)):
        ui = max(ui, ht.u0)
        if ui >= s_prev:
            h_i = h_prev + ht.integral(s_prev, ui)
        else:
            h_i = h_prev - ht.integral(ui, s_prev)
        h_prev, s_prev = h_i, ui
        yi = float(yi)
        if yi <= 0:
            out[i] = ht.u0
            continue
        if math.isinf(root):
            out[i] = math.inf
            continue
        start, h_start = (root, h_root) if (root > ui and h_root <= yi) else (ui, h_i)
        out[i] = ht.newton_inverse(yi, start, h_start)
        root, h_root = out[i], yi
    return out


def check_bounds(problem: RadialProblem, sol: RadialSolution, ht: HTransform | None = None,
                 tol: float = 1e-5) -> BoundsReport:
    """Check A1, A2 and both envelopes at every grid node of ``sol``.

    C1 = H^{-1}(P_bar(r_max)); C2 = max(a + b) * (h(u(r_max)) + g(u(r_max))).
    Violations are reported, never raised.
    """
    if ht is None:
        ht = HTransform(problem.pair, problem.u0)
    r = np.asarray(sol.grid, dtype=float)
    u, du = np.asarray(sol.u), np.asarray(sol.du)
    u0 = problem.u0
    p_lo, p_hi = envelope_profiles(problem, r)
    upper = upper_envelope(ht, u, p_hi)
    lower = u0 + p_lo

    c1 = float(upper[-1])
    ab = evaluate(problem.a, r) + evaluate(problem.b, r)
    c2 = float(ab.max()) * float(problem.pair.total(np.array([u[-1]]))[0])

    with np.errstate(invalid="ignore"):
        m_upper = np.where(np.isinf(upper), math.inf, upper - u)
    margins = {
        "a1_lower": float(np.min(u - u0)),
        "a1_upper": float(c1 - u.max()) if math.isfinite(c1) else math.inf,
        "a2_lower": float(np.min(du)),
        "a2_upper": float(np.min(c2 * (r + 1) - du)),
        "lower_envelope": float(np.min(u - lower)),
        "upper_envelope": float(np.min(m_upper)),
    }
    report = BoundsReport(
        a1_holds=margins["a1_lower"] >= -tol and margins["a1_upper"] >= -tol,
        c1=c1,
        a2_holds=margins["a2_lower"] >= -tol and margins["a2_upper"] >= -tol,
        c2=c2,
        lower_envelope_holds=margins["lower_envelope"] >= -tol,
        upper_envelope_holds=margins["upper_envelope"] >= -tol,
        worst_margin=min(margins.values()),
        margins=margins,
        upper_envelope=upper,
        lower_envelope=lower,
    )
    return report


# --------------------------------------------------------------------------
# convexity

@dataclass(frozen=True)
class ConvexityReport:
    applicable: bool
    convex: bool
    min_second_difference: float
    tolerance: float
    origin_curvature: float
    expected_origin_curvature: float
    origin_error: float

    def as_dict(self):
        return dict(self.__dict__)


def check_convexity(problem: RadialProblem, sol: RadialSolution, rel_tol: float = 1e-8) -> ConvexityReport:
    """Second differences of u (divided by spacing squared) must be >= -rel_tol * max|u|.

    ``applicable`` records whether a and b are nondecreasing on the grid,
    which is the hypothesis under which convexity is expected.  u''(0) is
    estimated with the one-sided difference (u0 - 2 u1 + u2) / d^2.
    """
    r = np.asarray(sol.grid, dtype=float)
    u = np.asarray(sol.u, dtype=float)
    d = r[1] - r[0]
    a = evaluate(problem.a, r)
    b = evaluate(problem.b, r)
    slack = 1e-12 * np.maximum(1.0, np.abs(a[1:]))
    applicable = bool(np.all(np.diff(a) >= -slack) and np.all(np.diff(b) >= -1e-12 * np.maximum(1.0, np.abs(b[1:]))))
    second = (u[:-2] - 2 * u[1:-1] + u[2:]) / d**2
    tol = rel_tol * float(np.max(np.abs(u)))
    min_second = float(second.min()) if second.size else 0.0
    origin = float((u[0] - 2 * u[1] + u[2]) / d**2) if u.size >= 3 else math.nan
    expected = problem.origin_curvature()
    return ConvexityReport(
        applicable=applicable,
        convex=min_second >= -tol,
        min_second_difference=min_second,
        tolerance=tol,
        origin_curvature=origin,
        expected_origin_curvature=expected,
        origin_error=abs(origin - expected),
    )


# --------------------------------------------------------------------------
# limit identity

@dataclass(frozen=True)
class LimitIdentity:
    lhs: float
    rhs: float
    tail_converged: bool
    inconclusive: bool
    schedule: tuple
    lhs_sequence: tuple

    @property
    def relative_gap(self) -> float:
        if math.isinf(self.lhs) and math.isinf(self.rhs):
            return 0.0
        return abs(self.lhs - self.rhs) / max(abs(self.rhs), 1e-300) if self.rhs else abs(self.lhs)

    def as_dict(self):
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "tail_converged": self.tail_converged,
            "inconclusive": self.inconclusive,
            "schedule": list(self.schedule),
            "lhs_sequence": list(self.lhs_sequence),
        }


def _moment_rhs(problem: RadialProblem, r_cut: float = 1e8):
    """(1/(N-2)) int_0^inf r (a+b) dr and whether its tail has settled.

    The integral is summed decade by decade up to ``r_cut``; the tail is
    accepted when the last decade contributes less than 1e-12.
    """
    f = lambda r: r * float(evaluate(problem.a, np.array([r]))[0] + evaluate(problem.b, np.array([r]))[0])  # noqa: E731
    edges = [0.0, 1.0]
    while edges[-1] < r_cut:
        edges.append(edges[-1] * 10.0)
    incs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(f, lo, hi, epsabs=1e-15, epsrel=1e-12, limit=400)
            incs.append(val)
    converged = abs(incs[-1]) < 1e-12
    total = math.fsum(incs) / (problem.N - 2)
    return total, converged


def limit_identity(problem: RadialProblem, r_max_schedule=DEFAULT_PROBES) -> LimitIdentity:
    """Compare lim P_bar(r) with (1/(N-2)) int_0^inf r (a + b) dr.

    The left side is the tail-closed envelope evaluated along the schedule
    (Richardson-refined nested integrals on [0, R] plus the exact tail of
    the coefficient truncated at R); the right side comes from adaptive
    quadrature.  Both are +inf when the moment and the envelope diverge.
    """
    N = problem.N
    if N < 3:
        raise UnsupportedDimensionError(f"limit identity needs N >= 3, got N={N}")
    schedule = tuple(float(R) for R in r_max_schedule)
    bar_fn = _source(problem, "bar")
    seq = [_closed_tail(bar_fn, N, R)[1] for R in schedule]

    rhs, converged = _moment_rhs(problem)
    if converged:
        return LimitIdentity(seq[-1], rhs, True, False, schedule, tuple(seq))
    growing = len(seq) >= 2 and seq[-1] > 10 * max(seq[-2], 1e-300)
    if growing:
        return LimitIdentity(math.inf, math.inf, False, False, schedule, tuple(seq))
    return LimitIdentity(seq[-1], rhs, False, True, schedule, tuple(seq))
