"""Euler-Maruyama simulation, discounted cost and policy comparison."""
import math

import numpy as np
import pytest

from radplan.errors import DomainError
from radplan.planning_model import PolicyField, build_model, optimal_control, policy_field
from radplan.radial_solver import RadialSolution
from radplan.sde_sim import (
    FeedbackPolicy, SimConfig, ZeroPolicy, compare_policies, crn_variance, discounted_cost, pooled_stderr,
    run_simulation, simulate_paths, transversality_check,
)


@pytest.fixture(scope="module")
def quiet_model():
    return build_model(3, (1e-8, 1e-8, 1e-8), 1.0)[0]


@pytest.fixture(scope="module")
def unit_model():
    return build_model(3, (1.0, 1.0, 1.0), 1.0)[0]


@pytest.fixture(scope="module")
def wide_field(unit_model):
    return policy_field(unit_model, 10.0, 4001)


def flat_field(model, u0, r_max=50.0):
    r = np.linspace(0.0, r_max, 501)
    return PolicyField(model, RadialSolution(r, np.full_like(r, u0), np.zeros_like(r), 1, True, "constant"))


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"horizon": 0.0}, {"horizon": 1.0, "dt": 2.0},
                                        {"horizon": 1.0, "n_paths": 0}, {"horizon": 1.0, "seed": -1}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)

    def test_step_divides_horizon(self):
        cfg = SimConfig(horizon=1.0, dt=0.3)
        assert cfg.n_steps == 4 and cfg.step == pytest.approx(0.25)

    def test_round_trip(self):
        cfg = SimConfig(horizon=2.0, dt=0.01, n_paths=5, seed=9, y0=(1, 2, 3))
        assert SimConfig(**cfg.as_dict()) == cfg


class TestPaths:
    def test_negligible_noise_keeps_state(self, quiet_model):
        ens = simulate_paths("zero", SimConfig(1.0, 1e-3, 20, 1, (1.0, 0.0, 0.0)), quiet_model,
                             snapshot_times=[0.0, 0.5, 1.0])
        np.testing.assert_allclose(ens.snapshots[:, 0], np.broadcast_to([1.0, 0.0, 0.0], (3, 20, 3)), atol=1e-6)

    def test_brownian_second_moment(self, unit_model):
        ens = simulate_paths("zero", SimConfig(1.0, 1e-2, 10_000, 2, (0.0, 0.0, 0.0)), unit_model,
                             snapshot_times=[1.0])
        r2 = np.sum(ens.snapshots[0, 0] ** 2, axis=1)
        se = r2.std(ddof=1) / math.sqrt(r2.size)
        assert abs(r2.mean() - 3.0) <= 3 * se

    def test_same_seed_is_bit_identical(self, wide_field):
        cfg = SimConfig(0.5, 1e-2, 200, 5, (0.5, 0.5, 0.5))
        a = simulate_paths(wide_field, cfg)
        b = simulate_paths(wide_field, cfg)
        assert a.costs.tobytes() == b.costs.tobytes()
        assert a.snapshots.tobytes() == b.snapshots.tobytes()

    def test_different_seed_differs(self, wide_field):
        a = simulate_paths(wide_field, SimConfig(0.5, 1e-2, 50, 5, (0.5, 0.5, 0.5)))
        b = simulate_paths(wide_field, SimConfig(0.5, 1e-2, 50, 6, (0.5, 0.5, 0.5)))
        assert not np.array_equal(a.costs, b.costs)

    @pytest.mark.parametrize("block_size,workers", [(7, 1), (64, 3)])
    def test_batching_does_not_change_results(self, wide_field, block_size, workers):
        base = SimConfig(0.5, 1e-2, 150, 5, (0.5, 0.5, 0.5))
        other = SimConfig(0.5, 1e-2, 150, 5, (0.5, 0.5, 0.5), block_size=block_size, workers=workers)
        np.testing.assert_array_equal(simulate_paths(wide_field, base).costs,
                                      simulate_paths(wide_field, other).costs)

    def test_policy_matches_optimal_control(self, wide_field):
        rng = np.random.default_rng(1)
        y = rng.uniform(-3, 3, size=(100, 3))
        np.testing.assert_allclose(FeedbackPolicy(wide_field)(y), optimal_control(wide_field, y), rtol=1e-12)

    def test_leaving_the_grid_truncates(self, unit_model):
        small = policy_field(unit_model, 2.0, 401)
        ens = simulate_paths(small, SimConfig(3.0, 1e-2, 100, 1, (1.0, 1.0, 1.0)))
        est = discounted_cost(ens)
        assert est.truncated_fraction > 0.5 and not est.valid
        assert np.all(np.isfinite(ens.exit_time[ens.truncated]))

    def test_model_required_for_zero_policy(self):
        with pytest.raises(DomainError):
            simulate_paths("zero", SimConfig(1.0))

    def test_dimension_mismatch(self, unit_model):
        with pytest.raises(DomainError):
            simulate_paths("zero", SimConfig(1.0, y0=(1.0, 1.0)), unit_model)


class TestDiscountedCost:
    def test_deterministic_closed_form(self, quiet_model):
        ens = simulate_paths("zero", SimConfig(20.0, 1e-3, 10, 3, (1.0, 0.0, 0.0)), quiet_model)
        est = discounted_cost(ens)
        assert est.mean == pytest.approx(1.0, rel=0.02)
        assert est.truncation_bound <= 1e-8

    def test_brownian_closed_form(self, unit_model):
        # |sigma|^2 / alpha^2 = 3
        ens = simulate_paths("zero", SimConfig(15.0, 1e-2, 4000, 4, (0.0, 0.0, 0.0)), unit_model)
        est = discounted_cost(ens)
        assert abs(est.mean - 3.0) <= 3 * est.stderr

    def test_single_step(self, wide_field):
        y0 = np.array([0.5, 0.5, 0.5])
        ens = simulate_paths(wide_field, SimConfig(1e-3, 1e-3, 3, 1, tuple(y0)))
        p = optimal_control(wide_field, y0)
        expected = (p @ p + y0 @ y0) * 1e-3
        np.testing.assert_allclose(ens.costs[0], expected, rtol=1e-12)

    def test_halving_dt(self, unit_model):
        coarse = discounted_cost(simulate_paths("zero", SimConfig(10.0, 2e-2, 4000, 8, (1.0, 1.0, 1.0)), unit_model))
        fine = discounted_cost(simulate_paths("zero", SimConfig(10.0, 1e-2, 4000, 8, (1.0, 1.0, 1.0)), unit_model))
        assert abs(coarse.mean - fine.mean) < 2 * pooled_stderr(coarse, fine)


class TestTransversality:
    def test_constant_field_is_exponential(self, unit_model):
        model = build_model(3, (1, 1, 1), 1.0, math.e)[0]
        fld = flat_field(model, math.e)
        times = [0.0, 0.5, 1.0, 2.0]
        ens = simulate_paths(fld, SimConfig(2.0, 1e-2, 100, 1, (0.0, 0.0, 0.0)), snapshot_times=times)
        series = transversality_check(fld, ens, times)
        np.testing.assert_allclose(series.values, 6.0 * np.exp(-np.array(times)), rtol=1e-12)
        assert series.valid

    def test_doubled_discount_decays_faster(self, unit_model, wide_field):
        fast_model = build_model(3, (1, 1, 1), 2.0)[0]
        cfg = SimConfig(3.0, 1e-2, 500, 2, (0.5, 0.5, 0.5))
        times = [0.5, 1.0, 2.0, 3.0]
        slow = simulate_paths("zero", cfg, unit_model, snapshot_times=times)
        fast = simulate_paths("zero", cfg, fast_model, snapshot_times=times)
        s_series = transversality_check(wide_field, slow, times)
        f_series = transversality_check(wide_field, fast, times)
        assert np.all(f_series.values < s_series.values)

    def test_unrecorded_time_rejected(self, wide_field):
        ens = simulate_paths(wide_field, SimConfig(1.0, 1e-2, 5, 1, (0.1, 0.1, 0.1)), snapshot_times=[0.0, 1.0])
        with pytest.raises(DomainError):
            transversality_check(wide_field, ens, [0.5])


class TestComparison:
    def test_zero_scaling_reproduces_closed_form(self, quiet_model):
        r = np.linspace(0.0, 10.0, 101)
        fld = PolicyField(quiet_model, RadialSolution(r, 1 + r**2, 2 * r, 1, True, "synthetic"))
        rows, _ = compare_policies(fld, SimConfig(20.0, 1e-3, 5, 1, (1.0, 0.0, 0.0)), [0.0])
        assert rows[0].cost.mean == pytest.approx(1.0, rel=0.02)

    def test_sorted_and_deterministic(self, wide_field):
        cfg = SimConfig(0.5, 1e-2, 300, 3, (0.5, 0.5, 0.5))
        rows_a, _ = compare_policies(wide_field, cfg, [0.0, 0.5, 1.0])
        rows_b, _ = compare_policies(wide_field, cfg, [0.0, 0.5, 1.0])
        means = [r.cost.mean for r in rows_a]
        assert means == sorted(means)
        assert [(r.scale, r.cost) for r in rows_a] == [(r.scale, r.cost) for r in rows_b]

    def test_negative_scalings_clamp(self, wide_field):
        with pytest.raises(DomainError):
            compare_policies(wide_field, SimConfig(0.1, 1e-2, 5), [0.0, -1.0])

    def test_common_random_numbers_reduce_variance(self, wide_field):
        shared, independent = crn_variance(wide_field, SimConfig(1.0, 1e-2, 2000, 12, (0.5, 0.5, 0.5)), 1.0, 0.5)
        assert shared < independent

    def test_report_json_is_reproducible(self, wide_field):
        cfg = SimConfig(0.5, 1e-2, 100, 21, (0.5, 0.5, 0.5))
        a = run_simulation(wide_field, cfg, (0.0, 2.0), probe_times=[0.0, 0.25, 0.5])
        b = run_simulation(wide_field, cfg, (0.0, 2.0), probe_times=[0.0, 0.25, 0.5])
        assert a.to_json() == b.to_json()
        assert set(a.per_policy) == {"scale=0", "scale=1", "scale=2"}
        assert a.valid and a.value_at_y0 < 0

    def test_zero_policy_name(self):
        assert ZeroPolicy().name == "zero"
