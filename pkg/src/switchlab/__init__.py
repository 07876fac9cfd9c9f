"""Numerical laboratory for switching diffusions with path-dependent switching.

The package simulates hybrid processes (X(t), alpha(t)) whose countable
regime component jumps at intensities read off the trailing path segment,
verifies Lyapunov drift conditions and ergodic behaviour empirically, and
solves the associated countably-coupled elliptic Dirichlet systems to
characterise recurrence in the past-independent case.
"""

__version__ = "0.1.0"

from .segment import SegmentPath, constant_segment, segment_from_function
from .expressions import parse_expr, parse_point_expr, parse_segment_expr
from .model import RegimeSwitchingModel, builtin_model, load_model, save_model
from .simulate import (
    Ball,
    Box,
    HitTarget,
    HybridState,
    Trajectory,
    first_hit,
    first_hit_batch,
    sample_regime_jump,
    simulate_batch,
    simulate_path,
    step,
)
from .lyapunov import (
    CylindricalLyapunov,
    DriftReport,
    SamplerSpec,
    apply_generator,
    dynkin_residual,
    example1_lyapunov,
    horizontal_derivative,
    quadratic_lyapunov,
    scan_drift_condition,
)
from .ergostats import (
    Binning,
    HittingBatch,
    TVCurve,
    empirical_tv,
    fit_exponential_rate,
    hitting_stats,
    tv_decay_curve,
)
from .elliptic import (
    EllipticSystem,
    IterationTrace,
    mean_exit_time,
    recurrence_indicator,
    solve_fixed_point,
    solve_scalar_dirichlet,
)
