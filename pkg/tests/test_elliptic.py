import numpy as np
import pytest

from switchlab.errors import AssemblyError, ConvergenceError, DomainError
from switchlab.elliptic import (
    EllipticSystem,
    estimate_jump_before_exit,
    mean_exit_time,
    recurrence_indicator,
    solve_fixed_point,
    solve_scalar_dirichlet,
    system_rate_total,
)


def unit_interval_system(K=1, rates=None, b="0", sigma="1", boundary=0.0, rhs=-1.0,
                         h=1 / 64):
    return EllipticSystem(
        [(0.0, 1.0)], h=h, K=K, b=b, sigma=sigma, rates=rates or {},
        boundary=lambda x, i: boundary, rhs=lambda x, i: rhs)


def base_return_rates(K=6):
    """Jump-to-base table with uniformly positive return rates (tail condition)."""
    rates = {(1, 2): "1"}
    for i in range(2, K + 1):
        rates[(i, 1)] = "1 + x/2"
    for i in range(2, K):
        rates[(i, i + 1)] = "1/2"
    return rates


class TestScalarSolve:
    def test_quadratic_exactness(self):
        sys1 = unit_interval_system()
        u = solve_scalar_dirichlet(sys1, 1, sys1.rhs_grid(1))
        assert np.abs(u - sys1.x * (1 - sys1.x)).max() <= 1e-12

    def test_constants_are_harmonic(self):
        sys2 = unit_interval_system(b="0.4", boundary=2.5, rhs=0.0)
        u = solve_scalar_dirichlet(sys2, 1, sys2.rhs_grid(1))
        assert np.abs(u - 2.5).max() <= 1e-12

    def test_cosh_killing_benchmark_second_order(self):
        # q == 1, rhs 0, boundary 1: u = cosh(sqrt(2)(x - 1/2)) / cosh(sqrt(2)/2)
        def err(h):
            s = EllipticSystem([(0.0, 1.0)], h=h, K=2, b="0", sigma="1",
                               rates={(1, 2): "1", (2, 1): "1"},
                               boundary=lambda x, i: 1.0, rhs=lambda x, i: 0.0)
            u1 = solve_scalar_dirichlet(s, 1, s.rhs_grid(1))
            exact = np.cosh(np.sqrt(2) * (s.x - 0.5)) / np.cosh(np.sqrt(2) / 2)
            return np.abs(u1 - exact).max()

        e1, e2 = err(1 / 64), err(1 / 128)
        assert np.log2(e1 / e2) >= 1.8

    def test_maximum_principle(self):
        # rhs <= 0 and boundary data >= 0 force u >= 0 at every node
        rng = np.random.default_rng(0)
        for _ in range(10):
            c = float(rng.uniform(0, 2))
            s = EllipticSystem([(0.0, 1.0)], h=1 / 32, K=2, b="x - 1/2", sigma="1",
                               rates={(1, 2): "1/2", (2, 1): "1"},
                               boundary=lambda x, i, c=c: c,
                               rhs=lambda x, i: -float(rng.uniform(0, 1)))
            u, _ = solve_fixed_point(s)
            assert u.min() >= -1e-12

    def test_multi_interval_grid(self):
        s = EllipticSystem([(-2.0, -1.0), (0.0, 1.0)], h=1 / 32, K=1, b="0",
                           sigma="1", rates={}, boundary=lambda x, i: 0.0,
                           rhs=lambda x, i: -1.0)
        u = solve_scalar_dirichlet(s, 1, s.rhs_grid(1))
        start, count, lo, hi = s.components[1]
        xs = s.x[start:start + count]
        assert np.abs(u[start:start + count] - xs * (1 - xs)).max() <= 1e-12

    def test_peclet_triggers_grid_halving(self):
        s = EllipticSystem([(0.0, 1.0)], h=1 / 4, K=1, b="20", sigma="1", rates={},
                           boundary=lambda x, i: 0.0, rhs=lambda x, i: -1.0)
        assert s.halvings > 0
        assert s.h <= 1 / 20

    def test_peclet_failure_after_max_halvings(self):
        with pytest.raises(AssemblyError):
            EllipticSystem([(0.0, 1.0)], h=1 / 4, K=1, b="1000", sigma="1", rates={},
                           boundary=lambda x, i: 0.0, rhs=lambda x, i: -1.0)

    def test_degenerate_diffusion_rejected(self):
        with pytest.raises(AssemblyError):
            unit_interval_system(sigma="x")

    def test_negative_rate_rejected(self):
        with pytest.raises(AssemblyError):
            unit_interval_system(K=2, rates={(1, 2): "x - 1/2", (2, 1): "1"})


class TestFixedPoint:
    def test_single_regime_converges_first_iteration(self):
        s = unit_interval_system(K=1)
        u, trace = solve_fixed_point(s)
        assert trace.iterations == 1
        assert np.abs(u[0] - s.x * (1 - s.x)).max() <= 1e-12

    def test_symmetric_two_regime_solution(self):
        s = unit_interval_system(K=2, rates={(1, 2): "1", (2, 1): "1"})
        u, trace = solve_fixed_point(s)
        assert np.abs(u[0] - u[1]).max() <= 1e-10
        assert np.abs(u[0] - s.x * (1 - s.x)).max() <= 1e-10

    def test_deltas_monotone_nonincreasing(self):
        s = EllipticSystem([(0.0, 1.0)], h=1 / 64, K=6, b="0", sigma="1",
                           rates=base_return_rates(), boundary=lambda x, i: 0.0,
                           rhs=lambda x, i: -1.0)
        _, trace = solve_fixed_point(s)
        assert all(d2 <= d1 + 1e-18 for d1, d2 in zip(trace.deltas, trace.deltas[1:]))

    def test_two_step_contraction_bound(self):
        s = EllipticSystem([(0.0, 1.0)], h=1 / 64, K=6, b="0", sigma="1",
                           rates=base_return_rates(), boundary=lambda x, i: 0.0,
                           rhs=lambda x, i: -1.0)
        u, trace = solve_fixed_point(s)
        assert s.n0 == 1
        assert s.eps0 > 0
        p_hat = estimate_jump_before_exit(s, [0.25, 0.5, 0.75], dt=1e-3,
                                          n_paths=2000, seed=3)
        bound = p_hat + (1 - p_hat) * s.eps1 + 0.05
        floor = 100 * 1e-10 * (1 + np.abs(u).max())
        ratios = trace.two_step_ratios(floor=floor)
        assert ratios
        assert max(ratios) <= bound

    def test_nonconvergence_raises_with_trace(self):
        # a strongly amplifying coupling defeats the iteration
        s = EllipticSystem([(0.0, 1.0)], h=1 / 16, K=2, b="0", sigma="1",
                           rates={(1, 2): "60", (2, 1): "60"},
                           boundary=lambda x, i: 0.0, rhs=lambda x, i: -1.0)
        with pytest.raises(ConvergenceError) as err:
            solve_fixed_point(s, m_max=40)
        assert err.value.trace is not None
        assert len(err.value.trace.deltas) == 40

    def test_regime_truncation_stability(self):
        # weak upward rates: adding two regimes moves low-regime values < 1e-6
        def solve(K):
            rates = {(1, 2): "1/10"}
            for i in range(2, K + 1):
                rates[(i, 1)] = "5"
            for i in range(2, K):
                rates[(i, i + 1)] = "1/10"
            system, u, _ = mean_exit_time([(0.0, 1.0)], 1 / 64, K, "0", "1", rates)
            return system, u

        s6, u6 = solve(6)
        s8, u8 = solve(8)
        for i in range(1, 4):
            for x0 in (0.25, 0.5, 0.75):
                a = s6.interpolate(u6[i - 1], x0)
                b = s8.interpolate(u8[i - 1], x0)
                assert abs(a - b) < 1e-6


class TestMeanExitTime:
    def test_single_regime_midpoint(self):
        _, u, _ = mean_exit_time([(0.0, 1.0)], 1 / 64, 1, "0", "1", {})
        assert u[0][32] == pytest.approx(0.25, abs=1e-12)

    def test_two_identical_regimes_agree(self):
        _, u, _ = mean_exit_time([(0.0, 1.0)], 1 / 64, 2, "0", "1",
                                 {(1, 2): "2", (2, 1): "2"})
        assert np.abs(u[0] - u[1]).max() <= 1e-10


class TestRecurrenceIndicator:
    def test_brownian_motion_recurrent(self):
        res = recurrence_indicator((-1.0, 1.0), [125, 250, 500, 1000, 2000], K=1,
                                   b="0", sigma="1", rates={}, h=0.25,
                                   probes=[(2.0, 1)])
        assert res["verdict"] == "recurrent"
        # harmonic-function oracle: v_k(2) = (k - 2) / (k - 1)
        assert res["probe_values"][3]["2.0,1"] == pytest.approx(998 / 999, abs=1e-9)
        assert all(d2 < d1 for d1, d2 in zip(res["deficits"], res["deficits"][1:]))

    def test_outward_drift_transient(self):
        res = recurrence_indicator((-1.0, 1.0), [10, 20, 40, 80], K=1,
                                   b="x/abs(x)", sigma="1", rates={}, h=0.05,
                                   probes=[(2.0, 1)])
        assert res["verdict"] == "transient"
        k = 80.0
        oracle = (np.exp(-4) - np.exp(-2 * k)) / (np.exp(-2) - np.exp(-2 * k))
        assert res["probe_values"][-1]["2.0,1"] == pytest.approx(oracle, abs=5e-4)
        assert res["deficits"][-1] > 1e-2

    def test_symmetric_regimes_match_single_regime_verdict(self):
        # the coupled iteration contracts at roughly c/(c + pi^2 s^2 / 2L^2),
        # so keep the exterior levels moderate for the two-regime run
        single = recurrence_indicator((-1.0, 1.0), [10, 20, 40], K=1, b="0",
                                      sigma="1", rates={}, h=0.25, probes=[(2.0, 1)])
        double = recurrence_indicator((-1.0, 1.0), [10, 20, 40], K=2, b="0",
                                      sigma="1", rates={(1, 2): "1/5", (2, 1): "1/5"},
                                      h=0.25, probes=[(2.0, 1), (2.0, 2)])
        assert single["verdict"] == double["verdict"]
        assert double["probe_values"][-1]["2.0,1"] == pytest.approx(
            double["probe_values"][-1]["2.0,2"], abs=1e-7)
        assert double["probe_values"][-1]["2.0,1"] == pytest.approx(
            single["probe_values"][-1]["2.0,1"], abs=1e-7)

    def test_bad_schedule_rejected(self):
        with pytest.raises(DomainError):
            recurrence_indicator((-1.0, 1.0), [10, 10], K=1, b="0", sigma="1",
                                 rates={}, h=0.25, probes=[(2.0, 1)])


class TestAssemblyInvariants:
    def test_tail_reachability_detected(self):
        s = EllipticSystem([(0.0, 1.0)], h=1 / 32, K=6, b="0", sigma="1",
                           rates=base_return_rates(), boundary=lambda x, i: 0.0,
                           rhs=lambda x, i: -1.0)
        assert s.n0 == 1
        assert s.eps0 == pytest.approx(1.0)
        assert s.eps1 == pytest.approx(1.0 - s.eps0 / s.M_D)

    def test_birth_death_needs_high_level(self):
        rates = {(1, 2): "1"}
        for i in range(2, 7):
            rates[(i, i - 1)] = "1/2 + x"
        for i in range(2, 6):
            rates[(i, i + 1)] = "1/2"
        s = EllipticSystem([(0.0, 1.0)], h=1 / 32, K=6, b="0", sigma="1",
                           rates=rates, boundary=lambda x, i: 0.0,
                           rhs=lambda x, i: 0.0)
        assert s.n0 == 5  # only the K-1 level reaches the whole tail

    def test_rate_total_grid(self):
        s = unit_interval_system(K=2, rates={(1, 2): "1 + x", (2, 1): "2"})
        assert np.allclose(system_rate_total(s, 1, s.x), 1 + s.x)
        assert np.allclose(s.total_rate_grid(2), 2.0)

    def test_trace_csv(self, tmp_path):
        s = unit_interval_system(K=2, rates={(1, 2): "1", (2, 1): "1"})
        _, trace = solve_fixed_point(s)
        trace.to_csv(tmp_path / "trace.csv")
        lines = (tmp_path / "trace.csv").read_text().strip().splitlines()
        assert lines[0] == "m,delta,ratio"
        assert len(lines) == len(trace.deltas) + 1
