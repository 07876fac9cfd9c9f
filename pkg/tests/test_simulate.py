import numpy as np
import pytest
from scipy import stats

import switchlab as sl
from switchlab.errors import DomainError, ExplosionGuardError
from switchlab.kernels import GlobalBound, TableKernel
from switchlab.segment import constant_segment
from switchlab.simulate import (
    _block_rng,
    Box,
    HitTarget,
    sample_regime_jump,
)


def no_switch_model(drift="0", sigma="1", r=0.05):
    return sl.builtin_model("custom", n=1, r=r, drift=[drift], diffusion=[[sigma]],
                            kernel=TableKernel({}, GlobalBound(0.0)))


class TestSampleRegimeJump:
    def test_first_interval(self):
        assert sample_regime_jump([(1, 1.0), (3, 2.0)], 3.0, 0.5) == 1

    def test_second_interval(self):
        assert sample_regime_jump([(1, 1.0), (3, 2.0)], 3.0, 2.9) == 3

    def test_boundary_is_right_open(self):
        # Example 1 row at i = 1: z == q_i falls outside the union
        assert sample_regime_jump([(2, 1.0)], 1.0, 1.0) is None

    def test_interval_partition_property(self):
        # the sampler inverts the cumulative-interval map exactly
        rng = np.random.default_rng(10)
        for _ in range(200):
            k = int(rng.integers(1, 6))
            js = np.sort(rng.choice(np.arange(1, 20), size=k, replace=False))
            qs = rng.uniform(0.0, 2.0, size=k)
            row = list(zip(js.tolist(), qs.tolist()))
            total = float(qs.sum())
            cum = np.concatenate([[0.0], np.cumsum(qs)])
            for idx in range(k):
                left, right = cum[idx], cum[idx + 1]
                if right > left:
                    assert sample_regime_jump(row, total, left) == js[idx]
                    assert sample_regime_jump(row, total, (left + right) / 2) == js[idx]
            assert sample_regime_jump(row, total, total) is None
            assert sample_regime_jump(row, total, total + 0.5) is None


class TestStep:
    def test_frozen_dynamics(self):
        m = no_switch_model(drift="0", sigma="0")
        seg = constant_segment(0.4, 0.05, 0.01)
        st = sl.HybridState(seg, 1, 0.0, _block_rng(0, 0))
        out = sl.step(st, m, 0.01)
        assert np.array_equal(out.seg.values, seg.values)
        assert out.regime == 1
        assert out.time == pytest.approx(0.01)

    def test_deterministic_euler(self):
        m = no_switch_model(drift="-x", sigma="0")
        seg = constant_segment(1.0, 0.05, 0.01)
        st = sl.HybridState(seg, 1, 0.0, _block_rng(0, 0))
        out = sl.step(st, m, 0.01)
        assert out.seg.head()[0] == pytest.approx(0.99)

    def test_explosion_guard(self):
        m = no_switch_model(drift="x*10", sigma="0", r=0.05)
        seg = constant_segment(1.0, 0.05, 0.01)
        st = sl.HybridState(seg, 1, 0.0, _block_rng(0, 0))
        with pytest.raises(ExplosionGuardError):
            for _ in range(200):
                st = sl.step(st, m, 0.01, h_cap=5.0)

    def test_dt_must_match_grid(self):
        m = no_switch_model()
        seg = constant_segment(0.0, 0.05, 0.01)
        st = sl.HybridState(seg, 1, 0.0, _block_rng(0, 0))
        with pytest.raises(DomainError):
            sl.step(st, m, 0.02)


class TestSimulatePath:
    def test_t_zero_is_initial_state_only(self):
        m = sl.builtin_model("ex1", r=0.5)
        seg = constant_segment(1.0, 0.5, 0.01)
        traj = sl.simulate_path(m, (seg, 2), T=0.0, dt=0.01, seed=0)
        assert traj.times.shape == (1,)
        assert traj.x[0, 0] == pytest.approx(1.0)
        assert traj.regimes[0] == 2

    def test_brownian_terminal_law(self):
        m = no_switch_model()
        seg = constant_segment(0.3, 0.05, 0.005)
        batch = sl.simulate_batch(m, (seg, 1), T=1.0, dt=0.005, n_paths=10_000, seed=3)
        p = stats.kstest(batch.x[:, 0], "norm", args=(0.3, 1.0)).pvalue
        assert p > 0.01

    def test_first_jump_from_base_targets_two(self):
        m = sl.builtin_model("ex1", b="1", sigma="1", C=0.0, r=0.5)
        seg = constant_segment(1.0, 0.5, 0.005)
        seen = set()
        for seed in range(25):
            traj = sl.simulate_path(m, (seg, 1), T=2.0, dt=0.005, seed=seed)
            if traj.jumps:
                seen.add(traj.jumps[0][2])
        assert seen == {2}

    def test_bit_identical_reruns(self):
        m = sl.builtin_model("ex1", b="1", sigma="1", C=0.0, r=0.5)
        seg = constant_segment(1.0, 0.5, 0.01)
        a = sl.simulate_path(m, (seg, 1), T=1.0, dt=0.01, seed=123)
        b = sl.simulate_path(m, (seg, 1), T=1.0, dt=0.01, seed=123)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.regimes, b.regimes)
        assert a.jumps == b.jumps

    def test_regime_changes_exactly_at_logged_jumps(self):
        m = sl.builtin_model("ex1", b="1", sigma="1", C=0.5, r=0.25)
        seg = constant_segment(0.5, 0.25, 0.005)
        traj = sl.simulate_path(m, (seg, 2), T=2.0, dt=0.005, seed=9)
        changes = np.nonzero(np.diff(traj.regimes))[0]
        assert sorted(traj.times[changes + 1].tolist()) == sorted(t for t, _, _ in traj.jumps)
        for t, src, dst in traj.jumps:
            assert dst != src

    def test_x_continuous_across_jumps(self):
        # only alpha jumps: the x increment at a jump step matches the Euler
        # increment scale, never a macroscopic relocation
        m = sl.builtin_model("ex1", b="0", sigma="0", C=1.0, r=0.25)
        seg = constant_segment(2.0, 0.25, 0.005)
        traj = sl.simulate_path(m, (seg, 3), T=2.0, dt=0.005, seed=11)
        assert len(traj.jumps) > 0
        assert np.max(np.abs(np.diff(traj.x[:, 0]))) == 0.0


class TestJumpLaw:
    def test_conditional_target_distribution(self):
        # conditional on a jump from i, targets follow q_ij / q_i
        rng = np.random.default_rng(12)
        row = [(1, 0.5), (3, 1.5), (7, 2.0)]
        total = 4.0
        draws = rng.uniform(0.0, total, size=100_000)
        outcomes = np.array([sample_regime_jump(row, total, z) for z in draws])
        counts = [(outcomes == j).sum() for j, _ in row]
        expected = [q / total * len(draws) for _, q in row]
        p = stats.chisquare(counts, expected).pvalue
        assert p > 0.001

    def test_one_step_jump_probability(self):
        m = sl.builtin_model("ex1", b="1", sigma="1", C=0.0, r=0.5)
        seg = constant_segment(1.0, 0.5, 0.01)
        _, q = m.rate_row(seg, 2)
        n = 40_000
        batch = sl.simulate_batch(m, (seg, 2), T=0.01, dt=0.01, n_paths=n, seed=5)
        emp = float((batch.regimes != 2).mean())
        p = 1 - np.exp(-q * 0.01)
        z = abs(emp - p) / np.sqrt(p * (1 - p) / n)
        assert z < 4.0

    def test_mode_agreement_jump_counts(self):
        m = sl.builtin_model("ex1", b="1", sigma="1", C=0.0, r=0.5)
        seg = constant_segment(1.0, 0.5, 0.001)
        out = {}
        for mode, seed in [("euler-rate", 11), ("thinning", 12)]:
            b = sl.simulate_batch(m, (seg, 2), T=1.0, dt=0.001, n_paths=8000,
                                  seed=seed, mode=mode)
            out[mode] = (b.jump_counts.mean(),
                         b.jump_counts.std(ddof=1) / np.sqrt(b.n_paths))
        (m1, s1), (m2, s2) = out["euler-rate"], out["thinning"]
        assert abs(m1 - m2) <= 3 * np.hypot(s1, s2)


class TestBatch:
    def test_thread_count_does_not_change_results(self):
        m = sl.builtin_model("ex1", b="1", sigma="1", C=0.0, r=0.25)
        seg = constant_segment(1.0, 0.25, 0.01)
        runs = [sl.simulate_batch(m, (seg, 1), T=0.5, dt=0.01, n_paths=6000,
                                  seed=7, threads=t) for t in (1, 2, 8)]
        for other in runs[1:]:
            assert np.array_equal(runs[0].x, other.x)
            assert np.array_equal(runs[0].regimes, other.regimes)
            assert np.array_equal(runs[0].jump_counts, other.jump_counts)

    def test_explosion_guard_censors_not_drops(self):
        m = no_switch_model(drift="x*4", sigma="0", r=0.05)
        seg = constant_segment(1.0, 0.05, 0.01)
        batch = sl.simulate_batch(m, (seg, 1), T=3.0, dt=0.01, n_paths=16, seed=0,
                                  h_cap=10.0)
        assert batch.censored.all()
        assert batch.summary()["censored"] == 16

    def test_snapshots_on_grid_only(self):
        m = no_switch_model()
        seg = constant_segment(0.0, 0.05, 0.01)
        with pytest.raises(DomainError):
            sl.simulate_batch(m, (seg, 1), T=1.0, dt=0.01, n_paths=4, seed=0,
                              snapshot_times=[0.505])


class TestFirstHit:
    def test_immediate_hit(self):
        m = no_switch_model()
        seg = constant_segment(0.5, 0.05, 0.01)
        target = HitTarget(Box.interval(0.0, 1.0))
        tau, censored = sl.first_hit(m, (seg, 1), target, dt=0.01, t_max=1.0, seed=0)
        assert tau == 0.0 and not censored

    def test_regime_restricted_hit(self):
        m = sl.builtin_model("ex1", b="1", sigma="1", C=0.0, r=0.25)
        seg = constant_segment(0.0, 0.25, 0.01)
        target = HitTarget(Box.interval(-10, 10), regimes=frozenset({3}))
        tau, censored = sl.first_hit(m, (seg, 1), target, dt=0.01, t_max=50.0, seed=4)
        assert not censored
        traj = sl.simulate_path(m, (seg, 1), T=tau, dt=0.01, seed=4)
        assert traj.regimes[-1] == 3
        assert not np.any(traj.regimes[:-1] == 3)

    def test_exit_time_mean_matches_analytic(self):
        # E_x tau for BM exit from (0, 1) is x(1 - x); bridge correction
        # removes the O(sqrt(dt)) discrete-monitoring bias
        m = no_switch_model(r=0.01)
        seg = constant_segment(0.5, 0.01, 0.001)
        target = HitTarget(Box.interval(0.0, 1.0), complement=True)
        tau, censored = sl.first_hit_batch(m, (seg, 1), target, dt=0.001, t_max=6.0,
                                           n_paths=10_000, seed=21, boundary="bridge")
        assert censored.sum() == 0
        se = tau.std(ddof=1) / np.sqrt(tau.size)
        assert abs(tau.mean() - 0.25) <= 3 * se

    def test_grid_monitoring_biases_high(self):
        # without the bridge correction the exit time overshoots ~0.5826*sqrt(dt)
        m = no_switch_model(r=0.01)
        seg = constant_segment(0.5, 0.01, 0.001)
        target = HitTarget(Box.interval(0.0, 1.0), complement=True)
        tau_g, _ = sl.first_hit_batch(m, (seg, 1), target, dt=0.001, t_max=6.0,
                                      n_paths=10_000, seed=21, boundary="grid")
        assert tau_g.mean() > 0.25 + 0.005

    def test_outward_drift_censors(self):
        m = no_switch_model(drift="10", sigma="1", r=0.01)
        seg = constant_segment(5.0, 0.01, 0.001)
        target = HitTarget(Ball:=sl.Ball((0.0,), 0.25))
        tau, censored = sl.first_hit_batch(m, (seg, 1), target, dt=0.001, t_max=2.0,
                                           n_paths=200, seed=1)
        assert censored.mean() > 0.95
        assert np.all(tau[censored] == 2.0)

    def test_all_nodes_membership(self):
        m = no_switch_model(drift="1", sigma="0", r=0.05)
        seg = constant_segment(0.0, 0.05, 0.01)
        point = HitTarget(Box.interval(0.2, 10.0))
        whole = HitTarget(Box.interval(0.2, 10.0), all_nodes=True)
        tau_p, _ = sl.first_hit(m, (seg, 1), point, dt=0.01, t_max=2.0, seed=0)
        tau_w, _ = sl.first_hit(m, (seg, 1), whole, dt=0.01, t_max=2.0, seed=0)
        # the whole window must enter the set: one full delay later
        assert tau_w == pytest.approx(tau_p + 0.05, abs=1e-9)
