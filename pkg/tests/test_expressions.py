import numpy as np
import pytest

from switchlab.errors import EvalError, ExprKindError, ExprSyntaxError
from switchlab.expressions import (
    PointEnv,
    SegEnv,
    parse_expr,
    parse_point_expr,
    parse_segment_expr,
)
from switchlab.segment import constant_segment


def test_zero_segment_supnorm_rate():
    e = parse_segment_expr("1/(1+SUPNORM)")
    env = SegEnv.from_segment(constant_segment(0.0, 1.0, 0.25), 1)
    assert e.eval(env) == pytest.approx(1.0)


def test_example3_intabs_rate():
    e = parse_segment_expr("2*INTABS")
    env = SegEnv.from_segment(constant_segment(1.0, 1.0, 0.25), 1)
    assert e.eval(env) == pytest.approx(2.0)


def test_point_arithmetic():
    e = parse_point_expr("x*(1-x)")
    assert e.eval(PointEnv(0.5, 1)) == pytest.approx(0.25)


def test_regime_symbol_and_functions():
    e = parse_segment_expr("i*INTABS + max(0, SEG0) - min(SEGR, 2)")
    seg = constant_segment(1.5, 1.0, 0.25)
    env = SegEnv.from_segment(seg, 3)
    assert e.eval(env) == pytest.approx(3 * 1.5 + 1.5 - 1.5)


def test_pow_exp_log_abs():
    e = parse_point_expr("pow(x, 3) + exp(-x) + log(x) + abs(-x)")
    x = 1.7
    assert e.eval(PointEnv(x, 1)) == pytest.approx(x**3 + np.exp(-x) + np.log(x) + x)


def test_unary_minus_and_precedence():
    e = parse_point_expr("-x*2 + 3*(x - 1)/2")
    x = 0.8
    assert e.eval(PointEnv(x, 1)) == pytest.approx(-x * 2 + 3 * (x - 1) / 2)


def test_scientific_number():
    e = parse_point_expr("1e-3 + 2.5E2*x")
    assert e.eval(PointEnv(2.0, 1)) == pytest.approx(1e-3 + 500.0)


class TestKindChecks:
    def test_supnorm_rejected_in_point_expression(self):
        with pytest.raises(ExprKindError):
            parse_point_expr("1 + SUPNORM")

    def test_x_rejected_in_segment_expression(self):
        with pytest.raises(ExprKindError):
            parse_segment_expr("x + SEG0")

    def test_i_allowed_in_both(self):
        parse_point_expr("i*x")
        parse_segment_expr("i*SUPNORM")


class TestSyntaxErrors:
    @pytest.mark.parametrize("text", ["1 +", "(x", "pow(x)", "min(x, 1, 2)",
                                      "foo(x)", "x[", "1..2", "* x"])
    def test_bad_input_has_position(self, text):
        with pytest.raises(ExprSyntaxError) as err:
            parse_expr(text, "point")
        assert "position" in str(err.value)


class TestEvalErrors:
    def test_division_by_zero_reported(self):
        e = parse_point_expr("1/x")
        with pytest.raises(EvalError):
            e.eval(PointEnv(0.0, 1))

    def test_division_by_zero_vectorised(self):
        e = parse_point_expr("1/x")
        with pytest.raises(EvalError):
            e.eval(PointEnv(np.array([1.0, 0.0, 2.0]), 1))

    def test_log_domain(self):
        with pytest.raises(EvalError):
            parse_point_expr("log(x)").eval(PointEnv(-1.0, 1))

    def test_fractional_power_of_negative(self):
        with pytest.raises(EvalError):
            parse_point_expr("pow(x, 0.5)").eval(PointEnv(-2.0, 1))

    def test_no_silent_nan(self):
        e = parse_segment_expr("1/(SUPNORM - 1)")
        env = SegEnv.from_segment(constant_segment(1.0, 1.0, 0.25), 1)
        with pytest.raises(EvalError):
            e.eval(env)


class TestVectorSemantics:
    def test_batched_point_eval(self):
        e = parse_point_expr("x*x - i")
        xs = np.array([0.0, 1.0, 2.0])
        ii = np.array([1, 2, 3])
        assert np.allclose(e.eval(PointEnv(xs, ii)), xs**2 - ii)

    def test_vector_component_and_norm(self):
        e = parse_point_expr("x[0] + 2*x[1] + abs(x)")
        x = np.array([3.0, 4.0])
        assert e.eval(PointEnv(x, 1, dim=2)) == pytest.approx(3 + 8 + 5)

    def test_bare_vector_requires_dim_one(self):
        e = parse_point_expr("x + 1")
        with pytest.raises(EvalError):
            e.eval(PointEnv(np.array([1.0, 2.0]), 1, dim=2))

    def test_segment_vector_norm(self):
        e = parse_segment_expr("abs(SEG0) + SEGR[1]")
        env = SegEnv(np.array([3.0, 4.0]), np.array([0.5, 2.0]), 5.0, 1.0, 1, dim=2)
        assert e.eval(env) == pytest.approx(5.0 + 2.0)


class TestPrintRoundTrip:
    @pytest.mark.parametrize("text,kind", [
        ("1/(1+SUPNORM)", "segment"),
        ("2*INTABS", "segment"),
        ("x*(1-x)", "point"),
        ("-x*(2 - x) + pow(x, 2)/(1 + abs(x))", "point"),
        ("max(0, SEG0) - min(SEGR, i) + exp(-SUPNORM)", "segment"),
        ("1.5e-2*i + abs(SEG0)*INTABS - (i - 1)*(i - 2)", "segment"),
        ("-(x - 1)/(x + 2)*3 - -x", "point"),
    ])
    def test_parse_print_reparse_agree_on_random_inputs(self, text, kind):
        first = parse_expr(text, kind)
        second = parse_expr(str(first), kind)
        third = parse_expr(str(second), kind)
        assert str(second) == str(third)
        rng = np.random.default_rng(42)
        for _ in range(100):
            if kind == "point":
                env = PointEnv(rng.normal(), int(rng.integers(1, 6)))
            else:
                env = SegEnv(rng.normal(), rng.normal(), abs(rng.normal()) + 0.1,
                             abs(rng.normal()), int(rng.integers(1, 6)))
            assert first.eval(env) == pytest.approx(second.eval(env), rel=1e-14, abs=1e-14)
