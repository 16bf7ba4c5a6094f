"""Stochastic production planning with quadratic losses.

Inventories follow ``dy_i = p_i dt + sigma_i dw_i`` and the running cost is
``|p|^2 + |y|^2`` discounted at rate ``alpha``.  Writing the value function
as ``z = -2|sigma|^2 ln u`` turns its HJB equation

    -2|sigma|^2 Lap z + |grad z|^2 + 4 alpha z = 4|x|^2

into the radial problem

    Lap u = (|x|^2/|sigma|^4) u + (2 alpha/|sigma|^2) u ln u,

which is solved with :mod:`radplan.radial_solver`.  This module builds that
problem, evaluates its closed forms, and turns a radial solution into the
value function and the clamped feedback ``p*_i = max(0, -z_{x_i}/2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ExtrapolationError, InvalidModelError
from .nonlinearity import NonlinearityPair
from .radial_solver import GridConfig, RadialProblem, RadialSolution, ode_oracle, picard_solve

# relative slack when deciding whether |x| lies beyond the last grid node
GRID_REACH_RTOL = 1e-12


@dataclass(frozen=True)
class PlanningModel:
    N: int
    sigma: tuple
    alpha: float
    u0: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidModelError(f"N must be a positive integer, got {self.N!r}")
        sig = tuple(float(s) for s in np.atleast_1d(np.asarray(self.sigma, dtype=float)))
        if len(sig) != self.N:
            raise InvalidModelError(f"sigma has {len(sig)} components, expected N={self.N}")
        if any(s == 0.0 or not math.isfinite(s) for s in sig):
            raise InvalidModelError(f"every diffusion coefficient must be finite and nonzero, got {sig}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidModelError(f"alpha must be positive, got {self.alpha!r}")
        if not (math.isfinite(self.u0) and self.u0 >= 1.0):
            raise InvalidModelError(f"u0 must be >= 1, got {self.u0!r}")
        object.__setattr__(self, "sigma", sig)

    @property
    def sigma_sq(self) -> float:
        return float(sum(s * s for s in self.sigma))

    @property
    def sigma_4(self) -> float:
        return self.sigma_sq**2

    def a(self, r):
        return np.asarray(r, dtype=float) ** 2 / self.sigma_4

    def b(self, r):
        return np.full_like(np.asarray(r, dtype=float), 2.0 * self.alpha / self.sigma_sq)

    def radial_problem(self) -> RadialProblem:
        return RadialProblem(self.N, self.a, self.b, NonlinearityPair.model_log(), self.u0)

    def as_dict(self) -> dict:
        return {"N": self.N, "sigma": list(self.sigma), "alpha": self.alpha, "u0": self.u0}


def build_model(N: int, sigma, alpha: float, u0: float = 1.0):
    """Return ``(model, problem)`` for the planning model with these parameters.

    >>> m, p = build_model(3, (1, 1, 1), 1.0)
    >>> float(p.a(np.array(3.0))), float(p.b(np.array(0.0)))
    (1.0, 0.6666666666666666)
    """
    model = PlanningModel(int(N), tuple(np.atleast_1d(sigma)), float(alpha), float(u0))
    return model, model.radial_problem()


# --------------------------------------------------------------------------
# closed forms

def closed_H(model: PlanningModel, s: float) -> float:
    """H(s) = ln(ln s + 1) - ln(ln u0 + 1)."""
    if not s >= model.u0:
        raise DomainError(f"s={s} must be >= u0={model.u0}")
    return math.log(math.log(s) + 1.0) - math.log(math.log(model.u0) + 1.0)


def closed_H_inv(model: PlanningModel, y: float) -> float:
    """H^{-1}(y) = exp((1 + ln u0) e^y - 1); ``inf`` once the result overflows."""
    if not y >= 0:
        raise DomainError(f"y={y} must be >= 0")
    try:
        return math.exp((1.0 + math.log(model.u0)) * math.exp(y) - 1.0)
    except OverflowError:
        return math.inf


def _quartic_quadratic(model: PlanningModel, r: float) -> tuple[float, float]:
    if not r >= 0:
        raise DomainError(f"r={r} must be >= 0")
    quartic = r**4 / (4.0 * (model.N + 2) * model.sigma_4)
    quadratic = model.alpha * r**2 / (model.N * model.sigma_sq)
    return quartic, quadratic


def closed_p_bar(model: PlanningModel, r: float) -> float:
    """P_bar(r) = r^4 / (4(N+2)|sigma|^4) + alpha r^2 / (N |sigma|^2)."""
    quartic, quadratic = _quartic_quadratic(model, r)
    return quartic + quadratic


def closed_p_under(model: PlanningModel, r: float) -> float:
    """Lower envelope for the model.

    At u0 = 1 only the ``a h`` term contributes (g(1) = 0), leaving the
    quartic.  Otherwise the integrand is ``(a + b) min(h(u0), g(u0))`` with
    ``h(u0) = u0`` and ``g(u0) = u0 ln u0``.
    """
    quartic, quadratic = _quartic_quadratic(model, r)
    u0 = model.u0
    if u0 == 1.0:
        return quartic
    return min(u0, u0 * math.log(u0)) * (quartic + quadratic)


# --------------------------------------------------------------------------
# value function and feedback

@dataclass(frozen=True)
class PolicyField:
    """Value function and feedback policy backed by one radial solution.

    Off-grid radii use linear interpolation of u and u' on the radial grid.
    """

    model: PlanningModel
    radial_solution: RadialSolution
    interpolation: str = field(default="linear")

    def __post_init__(self):
        sol = self.radial_solution
        if not sol.converged:
            raise DomainError("policy field needs a converged radial solution")
        if self.interpolation != "linear":
            raise ValueError(f"unsupported interpolation {self.interpolation!r}")

    @property
    def r_max(self) -> float:
        return float(self.radial_solution.grid[-1])

    def _radii(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        limit = self.r_max * (1.0 + GRID_REACH_RTOL)
        if np.any(~(r <= limit)):
            worst = float(np.nanmax(np.where(np.isfinite(r), r, np.inf)))
            raise ExtrapolationError(f"|x|={worst!r} beyond radial grid r_max={self.r_max!r}")
        return np.minimum(r, self.r_max)

    def u(self, r) -> np.ndarray:
        sol = self.radial_solution
        return np.interp(self._radii(r), sol.grid, sol.u)

    def du(self, r) -> np.ndarray:
        sol = self.radial_solution
        return np.interp(self._radii(r), sol.grid, sol.du)

    def drift_speed(self, r) -> np.ndarray:
        """q(r) = |sigma|^2 u'(r)/u(r), the magnitude of -grad z / 2."""
        r = self._radii(r)
        return self.model.sigma_sq * self.du(r) / self.u(r)

    def z_radial(self, r) -> np.ndarray:
        return -2.0 * self.model.sigma_sq * np.log(self.u(r))

    def grad_z(self, x) -> np.ndarray:
        """grad z = -2|sigma|^2 (u'/u) x/|x| through the chain rule; 0 at x = 0."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        q = self.drift_speed(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
        return -2.0 * q[..., None] * unit


def policy_field(model: PlanningModel, r_max: float, n_points: int = 4001,
                 method: str = "picard") -> PolicyField:
    """Solve the model's radial problem on [0, r_max] and wrap it as a field."""
    cfg = GridConfig(r_max=float(r_max), n_points=int(n_points))
    solver = {"picard": picard_solve, "oracle": ode_oracle}[method]
    return PolicyField(model, solver(model.radial_problem(), cfg))


def _check_dim(field_: PolicyField, x: np.ndarray):
    if x.shape[-1] != field_.model.N:
        raise DomainError(f"x has {x.shape[-1]} components, expected N={field_.model.N}")


def value_function(field_: PolicyField, x):
    """z(x) = -2|sigma|^2 ln u(|x|).  Accepts one point or an array of points."""
    x = np.asarray(x, dtype=float)
    _check_dim(field_, x)
    z = field_.z_radial(np.linalg.norm(x, axis=-1)) + 0.0
    return float(z) if z.ndim == 0 else z


def optimal_control(field_: PolicyField, x):
    """p*_i = max(0, |sigma|^2 (u'/u) x_i/|x|); the zero vector at x = 0."""
    x = np.asarray(x, dtype=float)
    _check_dim(field_, x)
    return np.maximum(0.0, -0.5 * field_.grad_z(x)) + 0.0


# --------------------------------------------------------------------------
# Hamiltonian minimisation

def hamiltonian(p, grad_z):
    """F(p) = p . grad z + |p|^2, vectorised over the leading axes of ``p``."""
    p = np.asarray(p, dtype=float)
    return np.sum(p * grad_z, axis=-1) + np.sum(p * p, axis=-1)


def clamped_argmin(grad_z) -> np.ndarray:
    return np.maximum(0.0, -0.5 * np.asarray(grad_z, dtype=float)) + 0.0


@dataclass(frozen=True)
class PGrid:
    """Box lattice for the brute-force search.

    Each searched axis holds ``n`` points of spacing ``step`` centred on the
    analytic minimiser, shifted by ``offset`` cells so that the minimiser is
    not itself a lattice point, and cut at p >= 0.  For N > 2 only the
    ``section`` axes are searched and the rest stay at p*.
    """

    step: float = 1e-3
    n: int = 201
    offset: float = 0.37
    section: tuple = (0, 1)


@dataclass(frozen=True)
class ArgminReport:
    grad_z: np.ndarray
    p_star: np.ndarray
    f_star: float
    grid_argmin: np.ndarray
    grid_min: float
    clamp_active: bool
    distance_in_cells: float
    value_error: float | None
    ok: bool

    def as_dict(self):
        return {
            "grad_z": self.grad_z.tolist(),
            "p_star": self.p_star.tolist(),
            "f_star": self.f_star,
            "grid_argmin": self.grid_argmin.tolist(),
            "grid_min": self.grid_min,
            "clamp_active": self.clamp_active,
            "distance_in_cells": self.distance_in_cells,
            "value_error": self.value_error,
            "ok": self.ok,
        }


def argmin_check_gradient(grad_z, p_grid: PGrid = PGrid(), value_tol: float = 1e-10) -> ArgminReport:
    """Brute-force check that the clamped critical point minimises F over p >= 0."""
    g = np.asarray(grad_z, dtype=float).ravel()
    if not np.all(np.isfinite(g)):
        raise DomainError("grad z must be finite")
    n_dim = g.size
    p_star = clamped_argmin(g)
    axes = tuple(range(n_dim)) if n_dim <= 2 else tuple(p_grid.section)
    half = (p_grid.n - 1) // 2
    ticks = []
    for i in axes:
        pts = p_star[i] + p_grid.step * (np.arange(-half, p_grid.n - half) + p_grid.offset)
        pts = pts[pts >= 0.0]
        if pts.size == 0:
            pts = np.array([0.0])
        ticks.append(pts)
    mesh = np.meshgrid(*ticks, indexing="ij")
    pts = np.broadcast_to(p_star, mesh[0].shape + (n_dim,)).copy()
    for k, i in enumerate(axes):
        pts[..., i] = mesh[k]
    values = hamiltonian(pts, g)
    flat = int(np.argmin(values))
    idx = np.unravel_index(flat, values.shape)
    grid_argmin = pts[idx]
    grid_min = float(values[idx])
    f_star = float(hamiltonian(p_star, g))

    clamp_active = bool(np.any(-0.5 * g < 0.0))
    dist = float(np.max(np.abs(grid_argmin - p_star)) / p_grid.step)
    value_error = None if clamp_active else abs(f_star + 0.25 * float(g @ g))
    ok = dist <= 1.0 and grid_min >= f_star - 1e-12 * max(1.0, abs(f_star))
    if value_error is not None:
        ok = ok and value_error <= value_tol
    return ArgminReport(g, p_star, f_star, grid_argmin, grid_min, clamp_active, dist, value_error, ok)


def hamiltonian_argmin_check(field_: PolicyField, x, p_grid: PGrid = PGrid(),
                             value_tol: float = 1e-10) -> ArgminReport:
    """Brute-force minimisation of F at state ``x`` with grad z from the field."""
    x = np.asarray(x, dtype=float)
    _check_dim(field_, x)
    return argmin_check_gradient(field_.grad_z(x), p_grid, value_tol)


# --------------------------------------------------------------------------
# HJB residual

@dataclass(frozen=True)
class HJBResidual:
    radii: np.ndarray
    residuals: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.residuals))

    @property
    def mean(self) -> float:
        return float(np.mean(self.residuals))


def hjb_profile(field_: PolicyField) -> np.ndarray:
    """|-2|sigma|^2 Lap z + (z')^2 + 4 alpha z - 4 r^2| at every grid node.

    z' comes from the solver's u' by the chain rule and z'' from second-order
    differences of z'.  At r = 0 the Laplacian is N z''(0), with z''(0)
    approximated by z'(dr)/dr (z' is odd in r).
    """
    m = field_.model
    sol = field_.radial_solution
    r = np.asarray(sol.grid, dtype=float)
    u, du = np.asarray(sol.u, dtype=float), np.asarray(sol.du, dtype=float)
    z = -2.0 * m.sigma_sq * np.log(u)
    zp = -2.0 * m.sigma_sq * du / u
    zpp = np.gradient(zp, r, edge_order=2)
    lap = np.empty_like(z)
    lap[1:] = zpp[1:] + (m.N - 1) * zp[1:] / r[1:]
    lap[0] = m.N * zp[1] / r[1]
    return np.abs(-2.0 * m.sigma_sq * lap + zp**2 + 4.0 * m.alpha * z - 4.0 * r**2)


def hjb_residual(field_: PolicyField, radii=None) -> HJBResidual:
    """HJB residual at ``radii`` (default: every grid node), linearly interpolated."""
    profile = hjb_profile(field_)
    grid = np.asarray(field_.radial_solution.grid, dtype=float)
    if radii is None:
        return HJBResidual(grid, profile)
    radii = field_._radii(np.atleast_1d(radii))
    return HJBResidual(radii, np.interp(radii, grid, profile))
