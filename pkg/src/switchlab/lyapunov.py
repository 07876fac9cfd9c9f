"""Cylindrical test functionals and the functional generator.

Functionals have the form V(phi, i) = f1(phi(0), i) + sum of integral terms
int_{-r}^0 g(t, i) f2(phi(t), i) dt.  Horizontal differentiation touches only
the integral terms, vertical derivatives only f1, so the generator is

    L V = V_t + sum_k b_k d_k f1 + (1/2) sum_kl a_kl d_kl f1
          + sum_{j != i} q_ij(phi) [V(phi, j) - V(phi, i)]

with V_t = sum_terms [g(0,i) f2(phi(0),i) - g(-r,i) f2(phi(-r),i)
                      - int f2(phi(t),i) g'(t,i) dt].

The module provides pointwise evaluation, drift-condition scans over segment
samples (constants plus Brownian-bridge-roughened windows), and Monte-Carlo
verification of the Dynkin identity along simulated paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ModelError
from .expressions import Expr, PointEnv, parse_point_expr
from .model import RegimeSwitchingModel
from .segment import SegmentPath, constant_segment
from . import simulate as sim

__all__ = [
    "CylindricalLyapunov",
    "quartic_cap",
    "example1_kappa",
    "example1_lyapunov",
    "quadratic_lyapunov",
    "lyapunov_from_expressions",
    "lincomb",
    "horizontal_derivative",
    "apply_generator",
    "SamplerSpec",
    "DriftReport",
    "scan_drift_condition",
    "DynkinResult",
    "dynkin_residual",
    "dynkin_halving_study",
]


# ---------------------------------------------------------------------------
# Functional containers and builders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CylindricalLyapunov:
    """f1 plus a list of (f2, g, g_dt) integral terms; all numpy-vectorised.

    For dim == 1 the callables map scalars/arrays elementwise; for dim > 1,
    f1 takes (..., dim) points, grad returns (..., dim) and hess
    (..., dim, dim).
    """

    f1: Callable
    f1_grad: Callable
    f1_hess: Callable
    integral_terms: Tuple = ()
    label: str = "V"

    def value(self, seg: SegmentPath, i: int) -> float:
        x = seg.head()[0] if seg.dim == 1 else seg.head()
        out = float(np.asarray(self.f1(x, i)))
        for f2, g, _ in self.integral_terms:
            out += seg.weighted_integral(f2, g, i)
        return out

    def value_batch(self, x, regimes, window=None, window_times=None, step=None):
        """V over a lane batch; window (B, m+1, dim) needed with integral terms."""
        out = np.asarray(self.f1(x, regimes), dtype=float)
        if self.integral_terms:
            if window is None:
                raise DomainError("integral terms need the segment window")
            w = window[:, :, 0] if window.shape[-1] == 1 else window
            ii = np.asarray(regimes)[:, None]
            for f2, g, _ in self.integral_terms:
                integ = np.asarray(f2(w, ii)) * np.asarray(g(window_times[None, :], ii))
                integ = np.broadcast_to(integ, w.shape[:2])
                out = out + np.trapezoid(integ, dx=step, axis=1)
        return out


def quartic_cap():
    """C^2 cap of |x|: equals |x| for |x| >= 1, (-x^4 + 6x^2 + 3)/8 inside.

    Matches value, slope and curvature at x = +-1 and stays positive.
    Returns (f, f', f'').
    """

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) >= 1, np.abs(x), (-x**4 + 6 * x**2 + 3) / 8)

    def fp(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) >= 1, np.sign(x), (3 * x - x**3) / 2)

    def fpp(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) >= 1, 0.0, 1.5 * (1 - x**2))

    return f, fp, fpp


def example1_kappa(b_factor, sigma, i_max: int = 8, n_grid: int = 2001,
                   refinements: int = 2) -> float:
    """Bound kappa for the capped-|x| functional on the drift -x*b(x, i).

    Maximises |-f'(x) x b(x, i) + f''(x) sigma^2(x, i) / 2| over a refined
    grid of |x| <= 1 and regimes 1..i_max.  ``b_factor`` and ``sigma`` are
    point expressions (or strings) in (x, i).
    """
    b_e = b_factor if isinstance(b_factor, Expr) else parse_point_expr(str(b_factor))
    s_e = sigma if isinstance(sigma, Expr) else parse_point_expr(str(sigma))
    _, fp, fpp = quartic_cap()

    def objective(xs, i):
        env = PointEnv(xs, i, dim=1)
        b = np.broadcast_to(np.asarray(b_e.eval(env), dtype=float), xs.shape)
        s = np.broadcast_to(np.asarray(s_e.eval(env), dtype=float), xs.shape)
        return np.abs(-fp(xs) * xs * b + 0.5 * fpp(xs) * s**2)

    lo, hi = -1.0, 1.0
    best = 0.0
    for _ in range(refinements + 1):
        xs = np.linspace(lo, hi, n_grid)
        vals = np.stack([objective(xs, i) for i in range(1, i_max + 1)])
        best = max(best, float(vals.max()))
        flat = int(vals.max(axis=0).argmax())
        span = (hi - lo) / (n_grid - 1)
        lo = max(-1.0, xs[flat] - 2 * span)
        hi = min(1.0, xs[flat] + 2 * span)
    return best


def example1_lyapunov(model: RegimeSwitchingModel, i_max: int = 8,
                      kappa: Optional[float] = None) -> Tuple[CylindricalLyapunov, float]:
    """The capped-|x| + 2*kappa*i functional for the birth–death models.

    The model must carry its drift multiplier and diffusion in params (the
    built-ins ex1/ex2/ex3 do).  Returns (V, kappa); pass ``kappa`` to pin the
    constant instead of maximising numerically.
    """
    if kappa is None:
        params = model.params
        if "b" not in params and model.name not in ("ex1", "ex2", "ex3"):
            raise ModelError("example1_lyapunov needs the drift multiplier b in params")
        kappa = example1_kappa(params.get("b", "1"), params.get("sigma", "1"), i_max=i_max)
    f, fp, fpp = quartic_cap()
    kap = float(kappa)

    return CylindricalLyapunov(
        f1=lambda x, i: f(x) + 2.0 * kap * np.asarray(i, dtype=float),
        f1_grad=lambda x, i: fp(x),
        f1_hess=lambda x, i: fpp(x),
        label=f"cap_abs+2*{kap:.6g}*i",
    ), kap


def quadratic_lyapunov(regime_coeff: float = 0.0) -> CylindricalLyapunov:
    """U(x) = x^2 (+ regime_coeff * i), with exact derivatives; dim == 1."""
    c = float(regime_coeff)
    return CylindricalLyapunov(
        f1=lambda x, i: np.asarray(x, dtype=float) ** 2 + c * np.asarray(i, dtype=float),
        f1_grad=lambda x, i: 2.0 * np.asarray(x, dtype=float),
        f1_hess=lambda x, i: 2.0 * np.ones_like(np.asarray(x, dtype=float)),
        label="x^2" if c == 0 else f"x^2+{c:g}*i",
    )


def _const_g(c: float):
    return (lambda t, i: np.full_like(np.asarray(t, dtype=float), c),
            lambda t, i: np.zeros_like(np.asarray(t, dtype=float)))


def _exp_g(rate: float):
    return (lambda t, i: np.exp(rate * np.asarray(t, dtype=float)),
            lambda t, i: rate * np.exp(rate * np.asarray(t, dtype=float)))


def lyapunov_from_expressions(f1, f2=None, g=("const", 1.0),
                              fd_step: float = 1e-5, label: str = "V") -> CylindricalLyapunov:
    """Build a functional from point expressions; derivatives of f1 by
    central finite differences (dim == 1).

    ``g`` is ("const", c) or ("exp", rate), or a (g, g_dt) pair of callables.
    """
    f1_e = f1 if isinstance(f1, Expr) else parse_point_expr(str(f1))

    def f1_fn(x, i):
        return f1_e.eval(PointEnv(x, i, dim=1))

    h = fd_step

    def grad(x, i):
        xa = np.asarray(x, dtype=float)
        return (np.asarray(f1_fn(xa + h, i)) - np.asarray(f1_fn(xa - h, i))) / (2 * h)

    def hess(x, i):
        xa = np.asarray(x, dtype=float)
        return (np.asarray(f1_fn(xa + h, i)) - 2 * np.asarray(f1_fn(xa, i))
                + np.asarray(f1_fn(xa - h, i))) / h**2

    terms = ()
    if f2 is not None:
        f2_e = f2 if isinstance(f2, Expr) else parse_point_expr(str(f2))

        def f2_fn(x, i):
            return f2_e.eval(PointEnv(x, i, dim=1))

        if isinstance(g, tuple) and g and g[0] == "const":
            g_fn, g_dt = _const_g(float(g[1]))
        elif isinstance(g, tuple) and g and g[0] == "exp":
            g_fn, g_dt = _exp_g(float(g[1]))
        else:
            g_fn, g_dt = g
        terms = ((f2_fn, g_fn, g_dt),)

    return CylindricalLyapunov(f1=f1_fn, f1_grad=grad, f1_hess=hess,
                               integral_terms=terms, label=label)


def lincomb(a: float, V: CylindricalLyapunov, b: float, W: CylindricalLyapunov) -> CylindricalLyapunov:
    """a*V + b*W, again cylindrical (integral-term lists concatenate)."""

    def scale_terms(c, terms):
        return tuple(
            (lambda x, i, f2=f2, c=c: c * np.asarray(f2(x, i)), g, g_dt)
            for f2, g, g_dt in terms
        )

    return CylindricalLyapunov(
        f1=lambda x, i: a * np.asarray(V.f1(x, i)) + b * np.asarray(W.f1(x, i)),
        f1_grad=lambda x, i: a * np.asarray(V.f1_grad(x, i)) + b * np.asarray(W.f1_grad(x, i)),
        f1_hess=lambda x, i: a * np.asarray(V.f1_hess(x, i)) + b * np.asarray(W.f1_hess(x, i)),
        integral_terms=scale_terms(a, V.integral_terms) + scale_terms(b, W.integral_terms),
        label=f"{a}*{V.label}+{b}*{W.label}",
    )


# ---------------------------------------------------------------------------
# Generator evaluation
# ---------------------------------------------------------------------------

def horizontal_derivative(V: CylindricalLyapunov, seg: SegmentPath, i: int) -> float:
    """V_t at (seg, i): boundary terms minus the integral of f2 dg."""
    out = 0.0
    x0 = seg.head()[0] if seg.dim == 1 else seg.head()
    xr = seg.tail()[0] if seg.dim == 1 else seg.tail()
    for f2, g, g_dt in V.integral_terms:
        out += float(np.asarray(g(0.0, i)) * np.asarray(f2(x0, i)))
        out -= float(np.asarray(g(-seg.delay, i)) * np.asarray(f2(xr, i)))
        out -= seg.weighted_integral(f2, g_dt, i)
    return out


def apply_generator(V: CylindricalLyapunov, model: RegimeSwitchingModel,
                    seg: SegmentPath, i: int) -> float:
    """The functional generator L V at (seg, i).

    Sums the horizontal derivative, the frozen-regime diffusion generator of
    f1 at phi(0), and the switching differences weighted by the rate row.
    """
    x = seg.head()[0] if seg.dim == 1 else seg.head()
    vt = horizontal_derivative(V, seg, i)
    grad = np.atleast_1d(np.asarray(V.f1_grad(x, i), dtype=float))
    hess = np.atleast_2d(np.asarray(V.f1_hess(x, i), dtype=float))
    b = model.drift_at(x, i)
    a = model.a_at(x, i)
    drift_term = float(b @ grad)
    diff_term = 0.5 * float(np.tensordot(a, hess))
    row, _total = model.rate_row(seg, i)
    vi = V.value(seg, i)
    jump_term = 0.0
    for j, q in row:
        if q != 0.0:
            jump_term += q * (V.value(seg, j) - vi)
    return vt + drift_term + diff_term + jump_term


def _vt_batch(V: CylindricalLyapunov, view, regimes) -> np.ndarray:
    if not V.integral_terms:
        return 0.0
    win = view.window_values()
    ts = view.window_times()
    w = win[:, :, 0] if win.shape[-1] == 1 else win
    ii = np.asarray(regimes)[:, None]
    out = np.zeros(w.shape[0])
    r = -ts[0]
    x0 = view.x
    xr = view.x_tail
    for f2, g, g_dt in V.integral_terms:
        out += np.asarray(g(0.0, regimes)) * np.asarray(f2(x0, regimes))
        out -= np.asarray(g(-r, regimes)) * np.asarray(f2(xr, regimes))
        integ = np.broadcast_to(np.asarray(f2(w, ii)) * np.asarray(g_dt(ts[None, :], ii)),
                                w.shape[:2])
        out -= np.trapezoid(integ, dx=view._e.ring.h, axis=1)
    return out


def generator_batch(V: CylindricalLyapunov, model: RegimeSwitchingModel, view) -> np.ndarray:
    """Vectorised L V over a simulation block (used by the Dynkin driver)."""
    x = view.x
    regimes = view.regimes
    B = regimes.shape[0]
    vt = _vt_batch(V, view, regimes)
    grad = np.asarray(V.f1_grad(x, regimes), dtype=float)
    hess = np.asarray(V.f1_hess(x, regimes), dtype=float)
    b = model.drift_batch(x, regimes)
    s = model.sigma_batch(x, regimes)
    if model.dim == 1:
        a00 = np.einsum("bnd,bnd->b", s, s)
        drift_term = b[:, 0] * grad
        diff_term = 0.5 * a00 * hess
    else:
        a = np.einsum("bnd,bmd->bnm", s, s)
        drift_term = np.einsum("bn,bn->b", b, grad)
        diff_term = 0.5 * np.einsum("bnm,bnm->b", a, hess)

    env = view.seg_env()
    targets, rates, _tot = model.kernel.row_batch(env, regimes)
    win = view.window_values() if V.integral_terms else None
    ts = view.window_times() if V.integral_terms else None
    h = view._e.ring.h if V.integral_terms else None
    vi = V.value_batch(x, regimes, win, ts, h)
    jump = np.zeros(B)
    for c in range(targets.shape[1]):
        tj = targets[:, c]
        q = rates[:, c]
        safe = np.where(tj > 0, tj, 1)
        vj = V.value_batch(x, safe, win, ts, h)
        jump += np.where((tj > 0) & (q > 0), q * (vj - vi), 0.0)
    return vt + drift_term + diff_term + jump


# ---------------------------------------------------------------------------
# Drift-condition scans
# ---------------------------------------------------------------------------

@dataclass
class SamplerSpec:
    """Sample families for drift scans: constant and roughened segments.

    Rough segments add a scaled Brownian bridge to a constant base, rescaled
    so the window sup-norm stays below ``rough_sup`` while keeping phi(0)
    (and phi(-r)) at the base value.
    """

    x_values: Sequence[float]
    i_max: int
    delay: float
    h_seg: float
    n_rough: int = 0
    rough_sup: float = 0.0
    rough_scale: float = 1.0
    seed: int = 0

    def segments(self) -> List[Tuple[SegmentPath, str]]:
        segs = [(constant_segment(x, self.delay, self.h_seg), "const")
                for x in self.x_values]
        if self.n_rough:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))
            m = int(round(self.delay / self.h_seg))
            bases = list(self.x_values) or [0.0]
            for k in range(self.n_rough):
                x0 = bases[k % len(bases)]
                incr = rng.standard_normal(m) * np.sqrt(self.h_seg)
                w = np.concatenate([[0.0], np.cumsum(incr)])
                ts = np.linspace(0.0, 1.0, m + 1)
                bridge = (w - ts * w[-1]) * self.rough_scale
                room = self.rough_sup - abs(x0)
                peak = np.abs(bridge).max()
                if room <= 0 or peak == 0:
                    continue
                bridge *= min(1.0, room / peak)
                segs.append(
                    (SegmentPath(1, self.delay, self.h_seg, (x0 + bridge)[:, None]),
                     "rough"))
        return segs


@dataclass
class DriftReport:
    """Margins of a drift inequality over a sampled point set."""

    kind: str
    constants: dict
    n_points: int
    worst_margin: float
    violations: List[dict]
    coercive: Optional[bool]
    fit_failed: bool = False
    points: dict = field(default_factory=dict)  # arrays: phi0, sup, i, v, lv, margin, family

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "constants": self.constants,
            "n_points": self.n_points,
            "worst_margin": self.worst_margin,
            "violations": self.violations,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


KIND_THM22 = "thm2.2"
KIND_THM23 = "thm2.3"
KIND_THM24 = "thm2.4"


def _margins(kind, constants, v, lv):
    if kind == KIND_THM22:
        bound = constants["C"] * (v <= constants["H"])
    elif kind == KIND_THM23:
        bound = -constants["C1"] + constants["C2"] * (v >= constants["H"])
    elif kind == KIND_THM24:
        bound = -constants["C1"] * v + constants["C2"]
    else:
        raise DomainError(f"unknown drift-condition kind {kind!r}")
    return bound - lv


def _fit_constants(kind, v, lv):
    tol = 1e-12
    if kind == KIND_THM22:
        # smallest localisation level H whose exterior has nonpositive drift
        for H in np.unique(v):
            outside = v > H
            if not np.any(outside) or lv[outside].max() <= tol:
                C = max(0.0, float(lv[v <= H].max())) if np.any(v <= H) else 0.0
                return {"C": C, "H": float(H)}, False
        return {"C": max(0.0, float(lv.max())), "H": float(v.max())}, False
    if kind == KIND_THM23:
        best = None
        for H in np.unique(v):
            below = v < H
            c1 = -float(lv[below].max()) if np.any(below) else np.inf
            if not np.isfinite(c1) or c1 <= 0:
                continue
            above = v >= H
            c2 = max(0.0, (float(lv[above].max()) if np.any(above) else -np.inf) + c1)
            cand = {"C1": c1, "C2": c2, "H": float(H)}
            if best is None or c1 > best["C1"] or (c1 == best["C1"] and c2 < best["C2"]):
                best = cand
        if best is None:
            return {"C1": 0.0, "C2": 0.0, "H": float(v.max())}, True
        return best, False
    if kind == KIND_THM24:
        grid = np.linspace(0.05, 4.0, 80)
        c2s = np.array([max(0.0, float((lv + c1 * v).max())) for c1 in grid])
        c2_min = c2s.min()
        ok = c2s <= c2_min + 1e-9 * (1.0 + c2_min)
        c1 = float(grid[ok][-1])
        return {"C1": c1, "C2": float(c2s[ok][-1])}, False
    raise DomainError(f"unknown drift-condition kind {kind!r}")


def _coercivity(phi0, regimes, v) -> Optional[bool]:
    reach = np.maximum(np.abs(phi0), regimes)
    levels = [n for n in (1, 2, 4, 8, 16, 32, 64) if np.any(reach >= n)]
    if len(levels) < 3:
        return None
    mins = [float(v[reach >= n].min()) for n in levels]
    tail = mins[-3:]
    return tail[0] < tail[1] < tail[2]


def scan_drift_condition(V: CylindricalLyapunov, model: RegimeSwitchingModel,
                         sampler: SamplerSpec, kind: str,
                         constants: Optional[dict] = None) -> DriftReport:
    """Evaluate a drift inequality over sampled (segment, regime) points.

    With ``constants`` given, reports margins; otherwise grid-fits the least
    constants making every sampled margin nonnegative (when possible).  The
    report also carries an empirical coercivity check: the minimum of V over
    points with |phi(0)| v i beyond growing levels must increase.
    """
    segs = sampler.segments()
    if not segs or sampler.i_max < 1:
        raise DomainError("sampler produced no points")
    rows = []
    for seg, family in segs:
        for i in range(1, sampler.i_max + 1):
            lv = apply_generator(V, model, seg, i)
            v = V.value(seg, i)
            rows.append((seg.head()[0], seg.sup_norm(), i, v, lv, family))
    phi0 = np.array([r[0] for r in rows])
    sup = np.array([r[1] for r in rows])
    regs = np.array([r[2] for r in rows])
    v = np.array([r[3] for r in rows])
    lv = np.array([r[4] for r in rows])
    family = [r[5] for r in rows]

    fit_failed = False
    if constants is None:
        constants, fit_failed = _fit_constants(kind, v, lv)
    margins = _margins(kind, constants, v, lv)
    viol_idx = np.where(margins < -1e-9)[0]
    violations = [
        {"phi_summary": {"phi0": float(phi0[k]), "supnorm": float(sup[k]),
                         "family": family[k]},
         "i": int(regs[k]), "margin": float(margins[k])}
        for k in viol_idx
    ]
    return DriftReport(
        kind=kind,
        constants={k: float(val) for k, val in constants.items()},
        n_points=len(rows),
        worst_margin=float(margins.min()),
        violations=violations,
        coercive=_coercivity(phi0, regs, v),
        fit_failed=fit_failed,
        points={"phi0": phi0, "supnorm": sup, "i": regs, "v": v, "lv": lv,
                "margin": margins, "family": np.array(family)},
    )


# ---------------------------------------------------------------------------
# Dynkin identity by Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class DynkinResult:
    residual: float
    se: float
    n_paths: int
    n_censored: int
    dt: float
    T: float
    per_path: Optional[np.ndarray] = None

    def to_json(self) -> dict:
        return {"residual": self.residual, "se": self.se, "n_paths": self.n_paths,
                "n_censored": self.n_censored, "dt": self.dt, "T": self.T}

    def to_csv(self, path) -> None:
        import csv

        if self.per_path is None:
            raise DomainError("per-path residuals were not recorded")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "residual"])
            for k, v in enumerate(self.per_path):
                w.writerow([k, repr(float(v))])


def _terminal_v(V, eng):
    view = eng.view
    win = view.window_values() if V.integral_terms else None
    ts = view.window_times() if V.integral_terms else None
    h = eng.ring.h if V.integral_terms else None
    return V.value_batch(view.x, view.regimes, win, ts, h)


def _dynkin_block(model, V, seg0, i0, dt, n_steps, width, rng, mode, h_cap):
    eng = sim._BlockEngine(model, seg0, i0, dt, width, rng, mode, h_cap=h_cap)
    acc = np.zeros(width)
    for _ in range(n_steps):
        live = eng.alive
        acc[live] += generator_batch(V, model, eng.view)[live] * dt
        eng.step()
    v_T = _terminal_v(V, eng)
    return v_T - acc, eng.alive


def dynkin_residual(V: CylindricalLyapunov, model: RegimeSwitchingModel, init,
                    T: float, dt: float, n_paths: int, seed: int,
                    mode: str = sim.EULER_RATE, threads: int = 1,
                    h_cap: float = sim.DEFAULT_H_CAP) -> DynkinResult:
    """Mean and standard error of V(X_T, a_T) - V(phi0, i0) - sum L V dt.

    The identity makes the per-path quantity a centred martingale increment;
    the mean converges to 0 up to O(dt) discretisation bias.  Censored paths
    (explosion guard) are excluded from the statistics and counted.
    """
    seg0, i0 = sim._check_init(model, init)
    n_steps = sim._n_steps(T, dt)
    v0 = V.value(seg0, i0)
    widths = sim._block_widths(n_paths)

    def job(b):
        rng = sim._block_rng(seed, b)
        return _dynkin_block(model, V, seg0, i0, dt, n_steps, widths[b], rng, mode, h_cap)

    results = sim._map_blocks(job, len(widths), threads)
    vals = np.concatenate([r[0] for r in results]) - v0
    alive = np.concatenate([r[1] for r in results])
    ok = vals[alive]
    if ok.size == 0:
        raise DomainError("all paths censored; no Dynkin statistics")
    res = float(ok.mean())
    se = float(ok.std(ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else float("inf")
    return DynkinResult(residual=res, se=se, n_paths=n_paths,
                        n_censored=int((~alive).sum()), dt=dt, T=T,
                        per_path=np.where(alive, vals, np.nan))


def _dynkin_pair_block(model, V, seg0f, seg0c, i0, dt_c, n_coarse, width, rng, h_cap):
    dt_f = dt_c / 2.0
    fine = sim._BlockEngine(model, seg0f, i0, dt_f, width, rng, sim.EULER_RATE, h_cap=h_cap)
    coarse = sim._BlockEngine(model, seg0c, i0, dt_c, width, rng, sim.EULER_RATE, h_cap=h_cap)
    d = model.noise_dim
    acc_f = np.zeros(width)
    acc_c = np.zeros(width)
    for _ in range(n_coarse):
        draws = []
        for _half in range(2):
            xi = rng.standard_normal((width, d))
            uj = rng.random(width)
            ut = rng.random(width)
            draws.append((xi, uj, ut))
            live = fine.alive
            acc_f[live] += generator_batch(V, model, fine.view)[live] * dt_f
            fine.step(draws[-1])
        xi_c = (draws[0][0] + draws[1][0]) / np.sqrt(2.0)
        # couple the jump chains: with a frozen rate q, the coarse step jumps
        # iff either fine half-step does.  u_eff = 1 - (1 - min(u1, u2))^2 is
        # uniform and turns the coarse threshold 1 - exp(-2 q dt_f) into
        # exactly that event; the target uniform follows the earlier half.
        u1, u2 = draws[0][1], draws[1][1]
        u_eff = 1.0 - (1.0 - np.minimum(u1, u2)) ** 2
        ut_eff = np.where(u1 <= u2, draws[0][2], draws[1][2])
        live = coarse.alive
        acc_c[live] += generator_batch(V, model, coarse.view)[live] * dt_c
        coarse.step((xi_c, u_eff, ut_eff))
    res_f = _terminal_v(V, fine) - acc_f
    res_c = _terminal_v(V, coarse) - acc_c
    return res_f, res_c, fine.alive & coarse.alive


def dynkin_halving_study(V: CylindricalLyapunov, model: RegimeSwitchingModel, init,
                         T: float, dt: float, n_paths: int, seed: int,
                         threads: int = 1, h_cap: float = sim.DEFAULT_H_CAP) -> dict:
    """Coupled estimate of the discretisation bias at dt versus dt/2.

    Both resolutions run on the same Brownian increments (the coarse step
    sums the fine pair) and share jump uniforms, so the paired difference of
    the Dynkin residuals isolates the deterministic component.  Returns the
    two residuals, their standard errors, and the paired difference with its
    standard error.
    """
    seg0c, i0 = sim._check_init(model, init)
    if abs(seg0c.step - dt) > 1e-12:
        raise DomainError("initial segment grid must equal dt")
    n_coarse = sim._n_steps(T, dt)
    m = int(round(model.delay / (dt / 2)))
    fine_vals = np.empty((m + 1, model.dim))
    fine_vals[::2] = seg0c.values
    fine_vals[1::2] = (seg0c.values[:-1] + seg0c.values[1:]) / 2.0
    seg0f = SegmentPath(model.dim, model.delay, dt / 2, fine_vals)
    v0 = V.value(seg0c, i0)
    widths = sim._block_widths(n_paths)

    def job(b):
        rng = sim._block_rng(seed, b)
        return _dynkin_pair_block(model, V, seg0f, seg0c, i0, dt, n_coarse,
                                  widths[b], rng, h_cap)

    results = sim._map_blocks(job, len(widths), threads)
    res_f = np.concatenate([r[0] for r in results]) - v0
    res_c = np.concatenate([r[1] for r in results]) - v0
    alive = np.concatenate([r[2] for r in results])
    res_f, res_c = res_f[alive], res_c[alive]
    diff = res_c - res_f

    def stats(a):
        return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size))

    mf, sf = stats(res_f)
    mc, sc = stats(res_c)
    md, sd = stats(diff)
    return {
        "residual_coarse": mc, "se_coarse": sc,
        "residual_fine": mf, "se_fine": sf,
        "paired_diff": md, "se_diff": sd,
        "dt": dt, "n_paths": int(alive.sum()),
    }
