import numpy as np
import pytest

from switchlab.errors import DomainError
from switchlab.segment import SegmentPath, constant_segment, segment_from_function


def seg_012():
    return SegmentPath(1, 1.0, 0.5, np.array([[0.0], [1.0], [2.0]]))


class TestEvalAt:
    def test_node_exactness(self):
        seg = seg_012()
        assert seg.eval_at(-0.5) == pytest.approx(1.0)

    def test_linear_midpoint(self):
        seg = seg_012()
        assert seg.eval_at(-0.25) == pytest.approx(1.5)

    def test_constant_segment_everywhere(self):
        seg = constant_segment(3.7, 1.0, 0.1)
        for s in np.linspace(-1.0, 0.0, 23):
            assert seg.eval_at(s) == pytest.approx(3.7)

    def test_every_node_is_exact(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=(9, 2))
        seg = SegmentPath(2, 2.0, 0.25, vals)
        for k, t in enumerate(seg.times):
            assert np.array_equal(seg.eval_at(t), vals[k])

    def test_clamps_half_step_then_errors(self):
        seg = seg_012()
        assert seg.eval_at(0.2) == pytest.approx(2.0)
        assert seg.eval_at(-1.2) == pytest.approx(0.0)
        with pytest.raises(DomainError):
            seg.eval_at(0.3)
        with pytest.raises(DomainError):
            seg.eval_at(-1.3)


class TestSupNorm:
    def test_constant(self):
        assert constant_segment(3.0, 1.0, 0.25).sup_norm() == pytest.approx(3.0)

    def test_max_of_absolute_values(self):
        seg = SegmentPath(1, 0.5, 0.5, np.array([[-4.0], [1.0]]))
        assert seg.sup_norm() == pytest.approx(4.0)

    def test_zero(self):
        assert constant_segment(0.0, 1.0, 0.25).sup_norm() == 0.0

    def test_dominates_endpoints(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            vals = rng.normal(size=(8, 3))
            seg = SegmentPath(3, 0.7, 0.1, vals)
            assert seg.sup_norm() >= np.linalg.norm(seg.head()) - 1e-15
            assert seg.sup_norm() >= np.linalg.norm(seg.tail()) - 1e-15

    def test_subwindow_monotone(self):
        rng = np.random.default_rng(2)
        vals = rng.normal(size=(17, 1))
        seg = SegmentPath(1, 1.6, 0.1, vals)
        for lo in range(8):
            sub = SegmentPath(1, 1.6 - lo * 0.1, 0.1, vals[lo:])
            assert sub.sup_norm() <= seg.sup_norm() + 1e-15


class TestWeightedIntegral:
    def test_constant_segment_abs(self):
        seg = constant_segment(1.0, 1.0, 0.125)
        val = seg.weighted_integral(lambda x, i: np.abs(x), lambda t, i: np.ones_like(t), 1)
        assert val == pytest.approx(1.0)

    def test_example3_base_rate_value(self):
        # q_{i,1} = 2 * integral of |phi|; phi == 1, r = 1 gives 2
        seg = constant_segment(1.0, 1.0, 0.125)
        assert 2 * seg.abs_integral() == pytest.approx(2.0)

    def test_linear_integrand_exact(self):
        seg = segment_from_function(lambda t: t, 1.0, 0.05)
        val = seg.weighted_integral(lambda x, i: x, lambda t, i: np.ones_like(t), 1)
        assert val == pytest.approx(-0.5)

    def test_linearity_in_f2_and_g(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            vals = rng.normal(size=(11, 1))
            seg = SegmentPath(1, 1.0, 0.1, vals)
            a, b = rng.normal(size=2)
            f1 = lambda x, i: np.abs(x)
            f2 = lambda x, i: x ** 2
            g1 = lambda t, i: np.exp(t)
            g2 = lambda t, i: 1.0 + t ** 2
            combined_f = seg.weighted_integral(lambda x, i: a * f1(x, i) + b * f2(x, i), g1, 1)
            split_f = a * seg.weighted_integral(f1, g1, 1) + b * seg.weighted_integral(f2, g1, 1)
            assert combined_f == pytest.approx(split_f, rel=1e-12)
            combined_g = seg.weighted_integral(f1, lambda t, i: a * g1(t, i) + b * g2(t, i), 1)
            split_g = a * seg.weighted_integral(f1, g1, 1) + b * seg.weighted_integral(f1, g2, 1)
            assert combined_g == pytest.approx(split_g, rel=1e-12)


class TestAdvance:
    def test_shift_semantics(self):
        seg = seg_012()
        out = seg.advance([3.0])
        assert np.array_equal(out.values.ravel(), [1.0, 2.0, 3.0])

    def test_constant_fixed_point(self):
        seg = constant_segment(2.5, 1.0, 0.25)
        out = seg
        for _ in range(10):
            out = out.advance([2.5])
        assert np.array_equal(out.values, seg.values)

    def test_right_endpoint_identity(self):
        seg = seg_012()
        out = seg.advance([7.25])
        assert out.eval_at(0.0) == pytest.approx(7.25)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            seg_012().advance([1.0, 2.0])

    def test_window_partition_after_many_advances(self):
        # head is the last appended value; tail is the value appended m steps ago
        seg = constant_segment(0.0, 1.0, 0.25)
        m = seg.n_nodes - 1
        appended = []
        rng = np.random.default_rng(4)
        for k in range(12):
            v = rng.normal()
            appended.append(v)
            seg = seg.advance([v])
        assert seg.eval_at(0.0) == pytest.approx(appended[-1])
        assert seg.eval_at(-1.0) == pytest.approx(appended[-1 - m])

    def test_immutability(self):
        seg = seg_012()
        with pytest.raises(ValueError):
            seg.values[0, 0] = 99.0


class TestValidation:
    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            SegmentPath(1, 1.0, 0.3, np.zeros((4, 1)))

    def test_csv_roundtrip(self, tmp_path):
        seg = segment_from_function(lambda t: (np.sin(t), np.cos(t)), 1.0, 0.125, dim=2)
        path = tmp_path / "seg.csv"
        seg.to_csv(path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "t,x_1,x_2"
        assert len(rows) == seg.n_nodes + 1
        got = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        assert np.allclose(got[:, 0], seg.times)
        assert np.allclose(got[:, 1:], seg.values)
