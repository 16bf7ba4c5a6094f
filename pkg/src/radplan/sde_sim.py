"""Monte Carlo evaluation of feedback policies for the production planning model.

Inventories follow ``dy = p(y) dt + sigma * dW`` and are advanced with
Euler-Maruyama.  Every path draws its noise from its own substream derived
from ``(seed, path index)``, so results do not depend on how paths are
batched, and every policy in one run sees the same noise (common random
numbers).  The discounted running cost ``(|p|^2 + |y|^2) e^{-alpha t}`` is
accumulated with a left-endpoint rule on [0, T].

A feedback policy is only defined inside the reach of its radial grid.  A
path that leaves it is frozen and flagged as truncated; truncated paths are
left out of every mean, and a policy with more than 1% truncated paths makes
the run invalid.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ExtrapolationError
from .planning_model import PlanningModel, PolicyField, value_function

TRUNCATION_LIMIT = 0.01
# upper bound on noise values held in memory per block (float64 entries)
NOISE_BUDGET = 4_000_000


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    dt: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    y0: tuple = (1.0, 1.0, 1.0)
    block_size: int = 10_000
    workers: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if not (self.dt > 0 and self.dt <= self.horizon * (1 + 1e-12)):
            raise ValueError(f"dt must lie in (0, horizon], got {self.dt!r}")
        if int(self.n_paths) < 1 or int(self.block_size) < 1 or int(self.workers) < 1:
            raise ValueError("n_paths, block_size and workers must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "y0", tuple(float(v) for v in np.atleast_1d(self.y0)))

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.horizon / self.dt - 1e-9)))

    @property
    def step(self) -> float:
        """Actual step, T / n_steps, which equals ``dt`` when dt divides T."""
        return self.horizon / self.n_steps

    def as_dict(self) -> dict:
        return {
            "horizon": self.horizon, "dt": self.dt, "n_paths": int(self.n_paths),
            "seed": int(self.seed), "y0": list(self.y0),
            "block_size": int(self.block_size), "workers": int(self.workers),
        }


# --------------------------------------------------------------------------
# policies

class ZeroPolicy:
    name = "zero"
    reach = math.inf
    scale = 0.0

    def speed(self, r: np.ndarray) -> np.ndarray:
        return np.zeros_like(r)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return np.zeros_like(y)


class FeedbackPolicy:
    """p = scale * max(0, q(|y|) y/|y|) with q = |sigma|^2 u'/u from a policy field.

    Interpolation is done by hand on the uniform radial grid because this is
    the inner loop of the simulator; it matches ``np.interp`` on u and u'.
    """

    def __init__(self, field_: PolicyField, scale: float = 1.0, name: str | None = None):
        self.field = field_
        self.scale = max(0.0, float(scale))
        self.name = name or f"scale={self.scale:g}"
        sol = field_.radial_solution
        grid = np.asarray(sol.grid, dtype=float)
        self._h = float(grid[1] - grid[0])
        self._u = np.asarray(sol.u, dtype=float)
        self._du = np.asarray(sol.du, dtype=float)
        self._last = len(grid) - 1
        self._sig2 = field_.model.sigma_sq
        self._r_max = field_.r_max
        # a zero-scaled policy is p = 0 everywhere, so it never leaves its reach
        self.reach = field_.r_max if self.scale > 0 else math.inf

    def speed(self, r: np.ndarray) -> np.ndarray:
        """q(r) with u and u' interpolated linearly; radii beyond the grid are clipped."""
        x = np.minimum(r, self._r_max) / self._h
        i = np.minimum(x.astype(np.intp), self._last - 1)
        w = x - i
        u = self._u[i] * (1.0 - w) + self._u[i + 1] * w
        du = self._du[i] * (1.0 - w) + self._du[i + 1] * w
        return self._sig2 * du / u

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        r = np.sqrt(_sq_norm(y))
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(r > 0, self.scale * self.speed(r) / r, 0.0)
        return np.maximum(0.0, coef[..., None] * y)


def _sq_norm(v: np.ndarray) -> np.ndarray:
    return np.sum(v * v, axis=-1)


def _speeds(policies, r: np.ndarray) -> np.ndarray:
    """Radial speed of every policy at the matching row of ``r`` (shape (S, n))."""
    fields = {id(p.field) for p in policies if isinstance(p, FeedbackPolicy)}
    if len(fields) == 1 and all(isinstance(p, (FeedbackPolicy, ZeroPolicy)) for p in policies):
        ref = next(p for p in policies if isinstance(p, FeedbackPolicy))
        return ref.speed(r)
    return np.stack([p.speed(r[s]) for s, p in enumerate(policies)])


# --------------------------------------------------------------------------
# simulation

@dataclass
class Ensemble:
    """Per-policy, per-path results of one coupled simulation.

    ``snapshots[k]`` holds the states at ``snapshot_times[k]``; entries of
    paths already truncated at that time are NaN.
    """

    policy_names: list
    sigma: np.ndarray
    alpha: float
    horizon: float
    step: float
    costs: np.ndarray          # (S, n)
    truncated: np.ndarray      # (S, n) bool
    exit_time: np.ndarray      # (S, n), inf when never truncated
    last_running: np.ndarray   # (S, n) undiscounted running cost at t = T
    snapshot_times: np.ndarray
    snapshots: np.ndarray      # (K, S, n, N)

    def index(self, name) -> int:
        if name is None:
            return 0
        return self.policy_names.index(name)


def _substreams(seed: int, start: int, stop: int):
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
            for i in range(start, stop)]


def _simulate_block(policies, cfg: SimConfig, sigma, alpha, f1, f2, snap_steps, start, stop):
    # State is stored component-first, shape (N, S, n), so that each
    # component is a contiguous (S, n) slab.
    S, n, N = len(policies), stop - start, len(sigma)
    n_steps, h = cfg.n_steps, cfg.step
    gens = _substreams(int(cfg.seed), start, stop)
    chunk = max(1, min(n_steps, NOISE_BUDGET // max(1, n * N)))

    y = np.empty((N, S, n))
    y[:] = np.asarray(cfg.y0, dtype=float)[:, None, None]
    alive = np.ones((S, n), dtype=bool)
    cost = np.zeros((S, n))
    exit_time = np.full((S, n), math.inf)
    snaps = np.full((len(snap_steps), S, n, N), np.nan)
    snap_at = {k: j for j, k in enumerate(snap_steps)}
    reach2 = np.array([p.reach for p in policies])[:, None] ** 2
    scales = np.array([p.scale for p in policies])[:, None]
    moving = bool(np.any(scales > 0))
    noise_scale = (np.asarray(sigma, dtype=float) * math.sqrt(h))[:, None]
    custom = f1 is not None or f2 is not None
    f1 = f1 or _sq_norm
    f2 = f2 or _sq_norm

    def drift(r2):
        if not moving:
            return np.zeros_like(y)
        r = np.sqrt(r2)
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(r > 0, scales * _speeds(policies, r) / r, 0.0)
        return np.maximum(0.0, coef * y)

    def running_cost(p, r2):
        if custom:
            return f1(np.moveaxis(p, 0, -1)) + f2(np.moveaxis(y, 0, -1))
        return np.sum(p * p, axis=0) + r2

    all_alive = True
    for k in range(n_steps + 1):
        if (k % chunk) == 0 and k < n_steps:
            m = min(chunk, n_steps - k)
            xi = np.stack([g.standard_normal((m, N)) for g in gens], axis=2)  # (m, N, n)
        r2 = np.sum(y * y, axis=0)
        gone = alive & ~(r2 <= reach2)
        if gone.any():
            alive &= ~gone
            exit_time[gone] = k * h
            all_alive = False
        if k in snap_at:
            snaps[snap_at[k]] = np.where(alive[..., None], np.moveaxis(y, 0, -1), np.nan)
        if k == n_steps:
            break
        p = drift(r2)
        run = running_cost(p, r2)
        disc = math.exp(-alpha * k * h) * h
        if all_alive:
            cost += run * disc
            y += p * h
            y += xi[k % chunk][:, None, :] * noise_scale[..., None]
        else:
            cost += np.where(alive, run, 0.0) * disc
            y = np.where(alive, y + p * h + xi[k % chunk][:, None, :] * noise_scale[..., None], y)

    with np.errstate(invalid="ignore"):
        r2 = np.sum(y * y, axis=0)
        last = np.where(alive, running_cost(drift(np.where(alive, r2, 0.0)), r2), np.nan)
    return cost, ~alive, exit_time, last, snaps


def simulate_paths(policies, cfg: SimConfig, model: PlanningModel | None = None,
                   snapshot_times=None, f1: Callable | None = None, f2: Callable | None = None) -> Ensemble:
    """Simulate every policy in ``policies`` under common random numbers.

    ``policies`` is a policy, a :class:`PolicyField` (simulated with its
    optimal feedback), the string ``"zero"``, or a sequence of these.  The
    model supplying sigma and alpha defaults to the first field's model.
    ``f1`` and ``f2`` override the squared-norm control and inventory losses;
    they receive arrays whose last axis holds the N components.
    """
    if isinstance(policies, (str, PolicyField, ZeroPolicy, FeedbackPolicy)):
        policies = [policies]
    resolved = []
    for p in policies:
        if isinstance(p, str):
            if p != "zero":
                raise DomainError(f"unknown named policy {p!r}")
            p = ZeroPolicy()
        elif isinstance(p, PolicyField):
            p = FeedbackPolicy(p, 1.0, name="optimal")
        resolved.append(p)
    if model is None:
        fields = [p.field for p in resolved if isinstance(p, FeedbackPolicy)]
        if not fields:
            raise DomainError("a model (sigma, alpha) is required when no feedback field is given")
        model = fields[0].model
    sigma = np.asarray(model.sigma, dtype=float)
    if len(cfg.y0) != len(sigma):
        raise DomainError(f"y0 has {len(cfg.y0)} components, expected N={len(sigma)}")
    names = [p.name for p in resolved]
    if len(set(names)) != len(names):
        raise DomainError(f"policy names must be unique, got {names}")

    h = cfg.step
    times = np.linspace(0.0, cfg.horizon, 16) if snapshot_times is None else np.asarray(snapshot_times, float)
    snap_steps = sorted({int(round(t / h)) for t in times})
    if snap_steps and (snap_steps[0] < 0 or snap_steps[-1] > cfg.n_steps):
        raise DomainError("snapshot times must lie in [0, horizon]")

    n = int(cfg.n_paths)
    bounds = [(s, min(n, s + int(cfg.block_size))) for s in range(0, n, int(cfg.block_size))]
    run = lambda b: _simulate_block(resolved, cfg, sigma, model.alpha, f1, f2, snap_steps, *b)  # noqa: E731
    if int(cfg.workers) > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=int(cfg.workers)) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    cost, trunc, exit_t, last = (np.concatenate([part[i] for part in parts], axis=1) for i in range(4))
    snaps = np.concatenate([part[4] for part in parts], axis=2)
    return Ensemble(names, sigma, float(model.alpha), cfg.horizon, h, cost, trunc, exit_t, last,
                    np.array(snap_steps, dtype=float) * h, snaps)


# --------------------------------------------------------------------------
# estimators

@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    truncation_bound: float
    n_used: int
    truncated_fraction: float

    @property
    def valid(self) -> bool:
        return self.truncated_fraction <= TRUNCATION_LIMIT and self.n_used > 1

    def as_dict(self):
        return {
            "mean": _num(self.mean), "stderr": _num(self.stderr),
            "truncation_bound": _num(self.truncation_bound), "n_used": self.n_used,
            "truncated_fraction": self.truncated_fraction, "valid": self.valid,
        }


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), math.nan
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


def discounted_cost(ensemble: Ensemble, policy=None) -> CostEstimate:
    """Mean and standard error of the discounted cost over untruncated paths.

    The truncation bound ``e^{-alpha T} * E[running cost at T] / alpha``
    estimates the part of the infinite-horizon integral beyond T.
    """
    s = ensemble.index(policy)
    ok = ~ensemble.truncated[s]
    mean, se = _mean_stderr(ensemble.costs[s][ok])
    last = ensemble.last_running[s][ok]
    tail = float(np.mean(last)) if last.size else math.nan
    bound = math.exp(-ensemble.alpha * ensemble.horizon) * tail / ensemble.alpha
    return CostEstimate(mean, se, bound, int(ok.sum()), float(1.0 - ok.mean()))


@dataclass(frozen=True)
class TransversalitySeries:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    valid_fraction: np.ndarray

    @property
    def valid(self) -> bool:
        return bool(np.all(self.valid_fraction >= 1.0 - TRUNCATION_LIMIT))

    @property
    def decay_ratio(self) -> float:
        """Final value over the largest absolute value of the series."""
        peak = float(np.max(np.abs(self.values)))
        return float(abs(self.values[-1]) / peak) if peak > 0 else 0.0

    def decays(self, fraction: float = 0.05) -> bool:
        return self.valid and bool(np.all(np.isfinite(self.values))) and self.decay_ratio <= fraction

    def as_dict(self):
        return {
            "times": self.times.tolist(), "values": [_num(v) for v in self.values],
            "stderr": [_num(v) for v in self.stderr],
            "valid_fraction": self.valid_fraction.tolist(),
            "decay_ratio": _num(self.decay_ratio), "valid": self.valid,
        }


def transversality_check(field_: PolicyField, ensemble: Ensemble, probe_times=None,
                         policy=None) -> TransversalitySeries:
    """Estimate E[e^{-alpha t} 2|sigma|^2 ln u(|y(t)|)] at recorded snapshot times."""
    s = ensemble.index(policy)
    rec = ensemble.snapshot_times
    times = rec if probe_times is None else np.asarray(probe_times, dtype=float)
    sig2 = field_.model.sigma_sq
    vals, ses, fracs = [], [], []
    for t in times:
        k = int(np.argmin(np.abs(rec - t)))
        if abs(rec[k] - t) > 0.5 * ensemble.step:
            raise DomainError(f"no snapshot recorded at t={t}")
        y = ensemble.snapshots[k, s]
        ok = np.isfinite(y[:, 0])
        r = np.sqrt(_sq_norm(y[ok]))
        inside = r <= field_.r_max
        U = 2.0 * sig2 * np.log(field_.u(r[inside])) * math.exp(-ensemble.alpha * rec[k])
        m, se = _mean_stderr(U)
        vals.append(m)
        ses.append(se)
        fracs.append(float(inside.sum()) / y.shape[0])
    return TransversalitySeries(rec[[int(np.argmin(np.abs(rec - t))) for t in times]],
                                np.array(vals), np.array(ses), np.array(fracs))


@dataclass(frozen=True)
class PolicyRow:
    scale: float
    cost: CostEstimate


def compare_policies(field_: PolicyField, cfg: SimConfig, scalings: Sequence[float] = (0.0, 0.5, 1.0, 1.5, 2.0),
                     snapshot_times=None):
    """Costs of p = s * p* for each scaling under common random numbers.

    Returns ``(rows, ensemble)`` with rows sorted by cost mean (NaN last, ties
    by scaling).
    """
    scalings = [max(0.0, float(s)) for s in scalings]
    if len(set(scalings)) != len(scalings):
        raise DomainError("scalings must be distinct after clamping at 0")
    pols = [FeedbackPolicy(field_, s) for s in scalings]
    ens = simulate_paths(pols, cfg, field_.model, snapshot_times)
    rows = [PolicyRow(s, discounted_cost(ens, p.name)) for s, p in zip(scalings, pols)]
    rows.sort(key=lambda r: (math.isnan(r.cost.mean), r.cost.mean if not math.isnan(r.cost.mean) else 0.0, r.scale))
    return rows, ens


def pooled_stderr(a: CostEstimate, b: CostEstimate) -> float:
    return math.sqrt(a.stderr**2 + b.stderr**2)


def crn_variance(field_: PolicyField, cfg: SimConfig, s1: float, s2: float, model=None):
    """Variance of per-path cost differences with shared versus independent noise.

    Returns ``(var_common, var_independent)``.  The independent run reuses the
    configuration with a seed derived from the original one.
    """
    p1, p2 = FeedbackPolicy(field_, s1, name="a"), FeedbackPolicy(field_, s2, name="b")
    shared = simulate_paths([p1, p2], cfg, model or field_.model, [0.0])
    other_seed = int(np.random.SeedSequence(int(cfg.seed)).generate_state(2, np.uint64)[1])
    other_cfg = SimConfig(**{**cfg.as_dict(), "seed": other_seed})
    other = simulate_paths([p2], other_cfg, model or field_.model, [0.0])
    ok = ~shared.truncated[0] & ~shared.truncated[1] & ~other.truncated[0]
    d_common = shared.costs[0][ok] - shared.costs[1][ok]
    d_indep = shared.costs[0][ok] - other.costs[0][ok]
    return float(np.var(d_common, ddof=1)), float(np.var(d_indep, ddof=1))


# --------------------------------------------------------------------------
# reports

def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class SimReport:
    cost_mean: float
    cost_stderr: float
    transversality_series: list
    truncation_bound: float
    per_policy: dict
    valid: bool
    truncated_fraction: float
    value_at_y0: float | None = None
    config: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "cost_mean": _num(self.cost_mean),
            "cost_stderr": _num(self.cost_stderr),
            "transversality_series": [[t, _num(v)] for t, v in self.transversality_series],
            "truncation_bound": _num(self.truncation_bound),
            "per_policy": {k: {"cost_mean": _num(m), "cost_stderr": _num(s)}
                           for k, (m, s) in self.per_policy.items()},
            "valid": self.valid,
            "truncated_fraction": self.truncated_fraction,
            "value_at_y0": None if self.value_at_y0 is None else _num(self.value_at_y0),
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2, allow_nan=False)


def run_simulation(field_: PolicyField, cfg: SimConfig, scalings=(0.0, 1.0, 2.0),
                   probe_times=None) -> SimReport:
    """Simulate p* and its scalings; report cost of p* and the transversality series.

    The value function at y0 is reported beside the simulated cost, with no
    relation asserted between the two.
    """
    scalings = sorted({max(0.0, float(s)) for s in scalings} | {1.0})
    times = np.linspace(0.0, cfg.horizon, 16) if probe_times is None else np.asarray(probe_times, float)
    rows, ens = compare_policies(field_, cfg, scalings, times)
    by_scale = {r.scale: r.cost for r in rows}
    main = by_scale[1.0]
    series = transversality_check(field_, ens, times, policy=FeedbackPolicy(field_, 1.0).name)
    y0 = np.asarray(cfg.y0, dtype=float)
    try:
        z0 = value_function(field_, y0)
    except ExtrapolationError:
        z0 = None
    per = {f"scale={s:g}": (c.mean, c.stderr) for s, c in sorted(by_scale.items())}
    return SimReport(
        cost_mean=main.mean,
        cost_stderr=main.stderr,
        transversality_series=list(zip(series.times.tolist(), series.values.tolist())),
        truncation_bound=main.truncation_bound,
        per_policy=per,
        valid=all(c.valid for c in by_scale.values()),
        truncated_fraction=max(c.truncated_fraction for c in by_scale.values()),
        value_at_y0=z0,
        config={"model": field_.model.as_dict(), "sim": cfg.as_dict(), "scalings": scalings},
    )
