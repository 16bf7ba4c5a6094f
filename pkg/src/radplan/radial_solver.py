"""Radial solutions of  u'' + (N-1)/r u' = a(r) h(u) + b(r) g(u),  u(0)=u0, u'(0)=0.

Two independent routes are provided on a shared uniform grid:

* :func:`picard_solve` iterates the integral form
  ``u_n = u0 + T[a h(u_{n-1}) + b g(u_{n-1})]`` where
  ``T[phi](r) = int_0^r t^{1-N} int_0^t s^{N-1} phi(s) ds dt``;
* :func:`ode_oracle` integrates the second-order ODE with classical RK4
  on a refined grid, starting from the regular-singular series at r = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import BlowUpError, NumericError, ValidationError
from .nonlinearity import NonlinearityPair

CoefFn = Callable[[np.ndarray], np.ndarray]


def evaluate(fn, x) -> np.ndarray:
    """Evaluate ``fn`` on ``x`` and broadcast the result to ``x``'s shape.

    Lets callers pass constant coefficients such as ``lambda r: 1.0``.
    """
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape).copy()


@dataclass(frozen=True)
class RadialProblem:
    """Data of the radial problem: dimension, coefficients, nonlinearity and u(0)."""

    N: int
    a: CoefFn
    b: CoefFn
    pair: NonlinearityPair
    u0: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"N must be a positive integer, got {self.N!r}")
        if self.u0 < self.pair.s0:
            raise ValidationError(f"u0={self.u0} must be >= s0={self.pair.s0}")

    def rhs(self, r, u):
        """a(r) h(u) + b(r) g(u)."""
        return evaluate(self.a, r) * np.asarray(self.pair.h(u), dtype=float) + evaluate(
            self.b, r
        ) * np.asarray(self.pair.g(u), dtype=float)

    def origin_curvature(self) -> float:
        """u''(0) = (a(0) h(u0) + b(0) g(u0)) / N."""
        return float(self.rhs(np.array([0.0]), np.array([self.u0]))[0]) / self.N

    def check_coefficients(self, grid) -> None:
        a = evaluate(self.a, grid)
        b = evaluate(self.b, grid)
        for name, vals in (("a", a), ("b", b)):
            bad = ~np.isfinite(vals) | (vals < 0)
            if bad.any():
                i = int(np.argmax(bad))
                raise ValidationError(f"{name}(r) must be finite and >= 0; {name}({grid[i]!r})={vals[i]!r}")


@dataclass(frozen=True)
class GridConfig:
    r_max: float
    n_points: int = 4001
    tol_abs: float = 1e-12
    tol_rel: float = 1e-12
    max_iter: int = 10_000
    blowup_cap: float = 1e12
    oracle_refine: int = 10

    def __post_init__(self):
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")
        if not (self.tol_abs > 0 and self.tol_rel > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.oracle_refine < 1:
            raise ValueError("max_iter and oracle_refine must be >= 1")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.n_points)

    @property
    def spacing(self) -> float:
        return self.r_max / (self.n_points - 1)


@dataclass(frozen=True)
class RadialSolution:
    grid: np.ndarray
    u: np.ndarray
    du: np.ndarray
    iterations: int
    converged: bool
    method: str
    blowup_radius: float | None = None
    # smallest pointwise change u_n - u_{n-1} over all Picard sweeps
    min_increment: float = field(default=math.nan)

    @property
    def u0(self) -> float:
        return float(self.u[0])

    def __len__(self):
        return len(self.grid)


# --------------------------------------------------------------------------
# nested integral

@lru_cache(maxsize=8)
def _cell_weights(n: int, spacing: float, N: int):
    """Weights of int_{s_j}^{s_j+1} s^{N-1} phi(s) ds for piecewise-linear phi.

    Returns (left, right) with left[j] multiplying phi_j and right[j]
    multiplying phi_{j+1}.  The binomial expansion around s_j keeps every
    term positive, so there is no cancellation for large j.
    """
    s = np.arange(n - 1, dtype=float) * spacing
    left = np.zeros(n - 1)
    right = np.zeros(n - 1)
    for k in range(N):
        c = math.comb(N - 1, k) * s ** (N - 1 - k) * spacing ** (k + 1)
        left += c / ((k + 1) * (k + 2))
        right += c / (k + 2)
    left.flags.writeable = False
    right.flags.writeable = False
    return left, right


def _check_uniform(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0:
        raise ValueError("grid must be a 1-D array starting at 0")
    d = grid[1] - grid[0]
    if d <= 0 or not np.allclose(np.diff(grid), d, rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform and increasing")
    return grid, d


def nested_parts(phi, N: int, grid):
    """Return (T[phi], t^{1-N} I(t)) on the grid.

    The second array is u' for u = u0 + T[phi]; it is 0 at t = 0, the limit
    of phi(0) t / N.
    """
    grid, d = _check_uniform(grid)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != grid.shape:
        raise ValueError("phi and grid must have the same shape")
    bad = ~np.isfinite(phi)
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericError(f"non-finite integrand at index {i} (r={grid[i]!r})", index=i)
    n = grid.size
    left, right = _cell_weights(n, float(d), int(N))
    inner = np.empty(n)
    inner[0] = 0.0
    np.cumsum(left * phi[:-1] + right * phi[1:], out=inner[1:])
    outer = np.zeros(n)
    outer[1:] = grid[1:] ** (1 - N) * inner[1:]
    total = np.empty(n)
    total[0] = 0.0
    np.cumsum(0.5 * d * (outer[1:] + outer[:-1]), out=total[1:])
    bad = ~np.isfinite(total) | ~np.isfinite(outer)
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericError(f"non-finite nested integral at index {i} (r={grid[i]!r})", index=i)
    return total, outer


def nested_integral(phi, N: int, grid) -> np.ndarray:
    """T[phi](r_i) = int_0^{r_i} t^{1-N} int_0^t s^{N-1} phi(s) ds dt.

    The inner integral treats phi as piecewise linear and integrates the
    weight s^{N-1} exactly on each cell; the outer one is the composite
    trapezoid rule.  Both are cumulative, so every grid point is produced
    in one pass.
    """
    return nested_parts(phi, N, grid)[0]


# --------------------------------------------------------------------------
# Picard iteration

def picard_solve(problem: RadialProblem, cfg: GridConfig) -> RadialSolution:
    """Successive approximations u_n = u0 + T[a h(u_{n-1}) + b g(u_{n-1})].

    Stops when ``max|u_n - u_{n-1}| <= tol_abs + tol_rel * max|u_n|``.
    Exhausting ``max_iter`` returns a solution with ``converged=False``.

    When an iterate exceeds ``cfg.blowup_cap`` the grid is cut just before
    the offending node and the iteration continues there; values on [0, r]
    never depend on points beyond r, so this localises the cap crossing of
    the limit function.  A :class:`BlowUpError` is then raised with that
    radius and the converged profile on the truncated grid.
    """
    full = cfg.grid
    problem.check_coefficients(full)
    a_full = evaluate(problem.a, full)
    b_full = evaluate(problem.b, full)
    h, g = problem.pair.h, problem.pair.g
    u0 = float(problem.u0)

    n = full.size
    u = np.full(n, u0)
    du = np.zeros(n)
    min_inc = math.inf
    blowup_index = None
    for it in range(1, cfg.max_iter + 1):
        grid, a, b = full[:n], a_full[:n], b_full[:n]
        with np.errstate(all="ignore"):
            phi = a * np.asarray(h(u), dtype=float) + b * np.asarray(g(u), dtype=float)
            try:
                total, du_new = nested_parts(phi, problem.N, grid)
                u_new = u0 + total
            except NumericError as exc:
                u_new = np.full(n, math.inf)
                u_new[:exc.index] = u0  # placeholder; only the first bad index matters
                du_new = du
        over = ~np.isfinite(u_new) | (u_new > cfg.blowup_cap)
        if over.any():
            i = int(np.argmax(over))
            blowup_index = i if blowup_index is None else min(blowup_index, i)
            if i < 2:
                break
            n = i
            u, du = u[:n], du[:n]
            continue
        change = u_new - u
        min_inc = min(min_inc, float(change.min()))
        u, du = u_new, du_new
        if float(np.max(np.abs(change))) <= cfg.tol_abs + cfg.tol_rel * float(np.max(np.abs(u))):
            if blowup_index is None:
                return RadialSolution(full, u, du, it, True, "picard", min_increment=min_inc)
            break
    else:
        if blowup_index is None:
            return RadialSolution(full, u, du, cfg.max_iter, False, "picard", min_increment=min_inc)

    radius = float(full[blowup_index])
    partial = RadialSolution(full[:n].copy(), u, du, it, False, "picard",
                             blowup_radius=radius, min_increment=min_inc)
    raise BlowUpError(f"Picard solution exceeds {cfg.blowup_cap:g} at r={radius:.6g}",
                      radius=radius, solution=partial)


# --------------------------------------------------------------------------
# Runge-Kutta oracle

def ode_oracle(problem: RadialProblem, cfg: GridConfig) -> RadialSolution:
    """Classical RK4 for (u, u') on a grid refined ``cfg.oracle_refine`` times.

    The first step uses the series u(d) = u0 + f0 d^2 / (2N), u'(d) = f0 d / N
    with f0 = a(0) h(u0) + b(0) g(u0), which sidesteps the (N-1)/r term at
    the origin.  Values are reported on the coarse grid of ``cfg``.
    """
    grid = cfg.grid
    problem.check_coefficients(grid)
    N = problem.N
    refine = cfg.oracle_refine
    steps = (cfg.n_points - 1) * refine
    d = cfg.r_max / steps
    a, b, h, g = problem.a, problem.b, problem.pair.h, problem.pair.g

    def f(r, u, w):
        acc = float(a(r)) * float(h(u)) + float(b(r)) * float(g(u))
        return acc - (N - 1) * w / r

    u_out = np.empty(cfg.n_points)
    du_out = np.empty(cfg.n_points)
    u_out[0] = problem.u0
    du_out[0] = 0.0

    f0 = problem.origin_curvature() * N
    u = problem.u0 + f0 * d * d / (2 * N)
    w = f0 * d / N
    with np.errstate(all="ignore"):
        for i in range(1, steps + 1):
            if i > 1:
                r = (i - 1) * d
                k1u, k1w = w, f(r, u, w)
                k2u, k2w = w + 0.5 * d * k1w, f(r + 0.5 * d, u + 0.5 * d * k1u, w + 0.5 * d * k1w)
                k3u, k3w = w + 0.5 * d * k2w, f(r + 0.5 * d, u + 0.5 * d * k2u, w + 0.5 * d * k2w)
                k4u, k4w = w + d * k3w, f(r + d, u + d * k3u, w + d * k3w)
                u += d / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
                w += d / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
            if not (math.isfinite(u) and math.isfinite(w)) or u > cfg.blowup_cap:
                radius = i * d
                j = i // refine
                partial = RadialSolution(grid[:j + 1].copy(), u_out[:j + 1].copy(), du_out[:j + 1].copy(),
                                         i - 1, False, "runge-kutta", blowup_radius=radius)
                raise BlowUpError(f"RK4 solution exceeds {cfg.blowup_cap:g} at r={radius:.6g}",
                                  radius=radius, solution=partial)
            if i % refine == 0:
                u_out[i // refine] = u
                du_out[i // refine] = w
    return RadialSolution(grid, u_out, du_out, steps, True, "runge-kutta")


def residual(problem: RadialProblem, sol: RadialSolution) -> float:
    """Scaled defect of (r^{N-1} u')' = r^{N-1}(a h(u) + b g(u)) at interior nodes.

    Uses centred differences of r^{N-1} u' and divides each defect by
    max(1, |r^{N-1}(a h + b g)|).
    """
    r = np.asarray(sol.grid, dtype=float)
    d = r[1] - r[0]
    flux = r ** (problem.N - 1) * sol.du
    source = r ** (problem.N - 1) * problem.rhs(r, sol.u)
    lhs = (flux[2:] - flux[:-2]) / (2 * d)
    defect = np.abs(lhs - source[1:-1]) / np.maximum(1.0, np.abs(source[1:-1]))
    return float(defect.max()) if defect.size else 0.0
