"""Countably-coupled elliptic Dirichlet systems in one spatial dimension.

For past-independent switching the mean exit time and exit-location
probabilities solve, regime by regime,

    (1/2) sigma^2(x,i) u'' + b(x,i) u' - q_i(x) u + sum_j q_ij(x) u(x,j) = g

with Dirichlet data on the boundary of a finite union of intervals.  The
regime space is truncated to 1..K.  Scalar problems are discretised with
second-order central differences and solved by tridiagonal elimination; the
coupled system is solved by successive approximation: the coupling sum is
evaluated at the previous iterate and moved to the right-hand side.  The
iteration contracts at a two-step factor p + (1-p) eps1, where p is the
largest probability of a regime jump before exit from a low regime and
eps1 = 1 - eps0/M_D is the tail-rate ratio; both are exposed for checking.

Coefficients are point expressions (or plain callables f(x_array, i)).
Central differencing is kept (no upwinding): when the cell Peclet number
|b| h / sigma^2 exceeds one, the grid step is halved automatically up to
four times and assembly fails beyond that, a documented failure mode.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AssemblyError, ConvergenceError, DomainError
from .expressions import Expr, PointEnv, parse_point_expr

__all__ = [
    "EllipticSystem",
    "IterationTrace",
    "solve_scalar_dirichlet",
    "solve_fixed_point",
    "mean_exit_time",
    "recurrence_indicator",
]

MAX_H_HALVINGS = 4


def _as_coeff(c) -> Callable:
    """Normalise a coefficient to a callable f(x_array, i) -> array.

    Expression-built callables remember their Expr (``fn._expr``) so the
    Monte-Carlo contraction helpers can rebuild frozen-regime models.
    """
    if callable(c) and not isinstance(c, Expr):
        return c
    expr = c if isinstance(c, Expr) else parse_point_expr(str(c))

    def fn(x, i):
        return np.broadcast_to(
            np.asarray(expr.eval(PointEnv(x, i, dim=1)), dtype=float),
            np.asarray(x, dtype=float).shape)

    fn._expr = expr
    return fn


@dataclass
class IterationTrace:
    """Sup-norm deltas of the successive approximation, plus derived ratios."""

    deltas: List[float] = field(default_factory=list)
    contraction_bound: Optional[float] = None  # p + (1-p) eps1 when p is known
    converged: bool = False
    iterations: int = 0

    def two_step_ratios(self, floor: float = 0.0) -> List[float]:
        """Measured Delta_{m+2} / Delta_m, skipping deltas at the round-off floor."""
        out = []
        for m in range(len(self.deltas) - 2):
            if self.deltas[m] > floor and self.deltas[m + 2] > 0:
                out.append(self.deltas[m + 2] / self.deltas[m])
        return out

    def to_csv(self, path) -> None:
        ratios = self.two_step_ratios()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "delta", "ratio"])
            for m, d in enumerate(self.deltas):
                r = repr(ratios[m]) if m < len(ratios) else ""
                w.writerow([m, repr(float(d)), r])


class EllipticSystem:
    """Assembled K-regime Dirichlet system on a union of intervals.

    ``rates`` maps (i, j), i != j, 1 <= i, j <= K, to a coefficient for
    q_ij(x).  ``boundary`` and ``rhs`` are functions (x, i) -> value; the
    boundary function is read at interval endpoints only.
    """

    def __init__(self, intervals: Sequence[Tuple[float, float]], h: float, K: int,
                 b, sigma, rates: Dict[Tuple[int, int], object],
                 boundary, rhs, ellipticity_floor: float = 1e-12):
        if K < 1:
            raise AssemblyError("need at least one regime")
        ivs = sorted((float(lo), float(hi)) for lo, hi in intervals)
        for lo, hi in ivs:
            if hi <= lo:
                raise AssemblyError(f"empty interval ({lo}, {hi})")
        for (lo1, hi1), (lo2, hi2) in zip(ivs, ivs[1:]):
            if lo2 < hi1:
                raise AssemblyError("intervals must be disjoint")
        self.K = K
        self.b = _as_coeff(b)
        self.sigma = _as_coeff(sigma)
        self.boundary = boundary
        self.rhs = rhs
        self.rate_fns = {}
        for (i, j), c in rates.items():
            if i == j:
                raise AssemblyError("q_ii is identically zero; drop diagonal entries")
            if not (1 <= i <= K and 1 <= j <= K):
                raise AssemblyError(f"rate ({i},{j}) outside the truncated regime set")
            self.rate_fns[(i, j)] = _as_coeff(c)

        h_eff, halvings = float(h), 0
        while True:
            self._build_grid(ivs, h_eff)
            pe = self._max_peclet()
            if pe <= 1.0 or halvings >= MAX_H_HALVINGS:
                break
            h_eff /= 2.0
            halvings += 1
        if self._max_peclet() > 1.0:
            raise AssemblyError(
                f"cell Peclet number {self._max_peclet():.3g} > 1 after "
                f"{MAX_H_HALVINGS} grid halvings; central differencing unstable")
        self.h = h_eff
        self.halvings = halvings

        # assembly-time invariants
        self._q_grid = np.zeros((K, self.x.size))
        for (i, j), fn in self.rate_fns.items():
            q = np.asarray(fn(self.x, i), dtype=float)
            if np.any(q < 0):
                raise AssemblyError(f"negative rate q[{i},{j}] on the grid")
            self._q_grid[i - 1] += q
        sig_min = min(
            float(np.min(np.asarray(self.sigma(self.x, i), dtype=float) ** 2))
            for i in range(1, K + 1)
        )
        if sig_min <= ellipticity_floor:
            raise AssemblyError(
                f"sigma^2 must stay positive on the grid (min {sig_min:.3g})")
        self.theta = sig_min
        self.n0, self.eps0 = self._tail_reachability()

    # -- grid -----------------------------------------------------------------
    def _build_grid(self, ivs, h):
        xs, comp = [], []
        self.components = []
        offset = 0
        for ci, (lo, hi) in enumerate(ivs):
            n = int(round((hi - lo) / h))
            if abs(lo + n * h - hi) > 1e-9 * max(1.0, abs(hi)) or n < 2:
                raise AssemblyError(
                    f"interval ({lo}, {hi}) is not an integer number (>= 2) of steps h = {h}")
            nodes = lo + h * np.arange(n + 1)
            self.components.append((offset, n + 1, lo, hi))
            offset += n + 1
            xs.append(nodes)
            comp.extend([ci] * (n + 1))
        self.intervals = ivs
        self.x = np.concatenate(xs)
        self._comp = np.asarray(comp)
        self._h_try = h

    def _max_peclet(self) -> float:
        pe = 0.0
        for i in range(1, self.K + 1):
            babs = np.abs(np.asarray(self.b(self.x, i), dtype=float))
            s2 = np.asarray(self.sigma(self.x, i), dtype=float) ** 2
            with np.errstate(divide="ignore"):
                pe = max(pe, float(np.max(babs * self._h_try / np.where(s2 > 0, s2, np.inf))))
        return pe

    def _tail_reachability(self):
        """Smallest n0 with sum_{j <= n0} q_ij >= eps0 > 0 for all i in (n0, K].

        n0 == K satisfies the condition vacuously (no tail regimes); a
        nontrivial level is required by the contraction-bound helpers.
        """
        for n0 in range(1, self.K):
            eps = np.inf
            for i in range(n0 + 1, self.K + 1):
                acc = np.zeros(self.x.size)
                for j in range(1, n0 + 1):
                    fn = self.rate_fns.get((i, j))
                    if fn is not None:
                        acc += np.asarray(fn(self.x, i), dtype=float)
                eps = min(eps, float(acc.min()))
            if eps > 0:
                return n0, eps
        return self.K, None

    # -- derived quantities -----------------------------------------------------
    def total_rate_grid(self, i: int) -> np.ndarray:
        return self._q_grid[i - 1]

    @property
    def M_D(self) -> float:
        return float(self._q_grid.max()) if self._q_grid.size else 0.0

    @property
    def eps1(self) -> Optional[float]:
        if self.eps0 is None or self.M_D <= 0:
            return None
        return 1.0 - self.eps0 / self.M_D

    def boundary_values(self, i: int) -> List[Tuple[int, float]]:
        """(node index, value) pairs for every interval endpoint."""
        out = []
        for start, count, lo, hi in self.components:
            out.append((start, float(self.boundary(lo, i))))
            out.append((start + count - 1, float(self.boundary(hi, i))))
        return out

    def rhs_grid(self, i: int) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.rhs(self.x, i), dtype=float), self.x.shape).copy()

    def interpolate(self, u: np.ndarray, x0: float) -> float:
        """Linear interpolation of a grid function at x0 (inside some interval)."""
        for start, count, lo, hi in self.components:
            if lo - 1e-12 <= x0 <= hi + 1e-12:
                pos = np.clip((x0 - lo) / self.h, 0, count - 1)
                k = int(np.floor(pos))
                frac = pos - k
                if k >= count - 1:
                    return float(u[start + count - 1])
                return float((1 - frac) * u[start + k] + frac * u[start + k + 1])
        raise DomainError(f"x0 = {x0} lies outside the domain")


def _thomas(lower, diag, upper, rhs):
    """Tridiagonal elimination; coefficients are modified in place."""
    n = diag.size
    for k in range(1, n):
        w = lower[k] / diag[k - 1]
        diag[k] -= w * upper[k - 1]
        rhs[k] -= w * rhs[k - 1]
    out = np.empty(n)
    out[-1] = rhs[-1] / diag[-1]
    for k in range(n - 2, -1, -1):
        out[k] = (rhs[k] - upper[k] * out[k + 1]) / diag[k]
    return out


def solve_scalar_dirichlet(system: EllipticSystem, i: int, rhs_grid: np.ndarray) -> np.ndarray:
    """Solve (1/2) s^2 u'' + b u' - q_i u = rhs for one regime, Dirichlet data.

    Second-order central differences on each interval component; boundary
    nodes are pinned to the system's boundary data.  Returns u on all nodes.
    """
    x = system.x
    s2 = np.asarray(system.sigma(x, i), dtype=float) ** 2
    bb = np.asarray(system.b(x, i), dtype=float)
    q = system.total_rate_grid(i)
    h = system.h
    u = np.zeros_like(x)
    bvals = dict(system.boundary_values(i))
    for start, count, _lo, _hi in system.components:
        sl = slice(start + 1, start + count - 1)
        lo_val = bvals[start]
        hi_val = bvals[start + count - 1]
        lower = s2[sl] / (2 * h * h) - bb[sl] / (2 * h)
        upper = s2[sl] / (2 * h * h) + bb[sl] / (2 * h)
        diag = -s2[sl] / (h * h) - q[sl]
        rhs = np.array(rhs_grid[sl], dtype=float)
        rhs[0] -= lower[0] * lo_val
        rhs[-1] -= upper[-1] * hi_val
        dom = np.abs(diag) - (np.abs(lower) + np.abs(upper))
        if np.any(dom < -1e-12 * np.abs(diag)):
            raise AssemblyError("tridiagonal system lost diagonal dominance")
        u[sl] = _thomas(lower.copy(), diag.copy(), upper.copy(), rhs)
        u[start] = lo_val
        u[start + count - 1] = hi_val
    return u


def solve_fixed_point(system: EllipticSystem, tol: float = 1e-10,
                      m_max: int = 10_000, threads: int = 1):
    """Successive approximation of the coupled system.

    u_0 solves the decoupled problems; u_{m+1}(., i) solves the scalar
    problem with right-hand side g(., i) - sum_j q_ij(x) u_m(., j).  Stops
    when the sup-norm delta falls below tol * (1 + max |u|); non-convergence
    raises ConvergenceError carrying the trace (the usual diagnosis is a
    violated tail-reachability condition).
    Returns (u, trace) with u of shape (K, n_nodes).
    """
    K = system.K
    g = np.stack([system.rhs_grid(i) for i in range(1, K + 1)])
    coup = {
        (i, j): np.asarray(fn(system.x, i), dtype=float)
        for (i, j), fn in system.rate_fns.items()
    }
    u = np.stack([solve_scalar_dirichlet(system, i, g[i - 1]) for i in range(1, K + 1)])
    trace = IterationTrace()
    for m in range(m_max):
        rhs = g.copy()
        for (i, j), q in coup.items():
            rhs[i - 1] -= q * u[j - 1]
        new_u = np.stack([
            solve_scalar_dirichlet(system, i, rhs[i - 1]) for i in range(1, K + 1)
        ])
        delta = float(np.abs(new_u - u).max())
        trace.deltas.append(delta)
        u = new_u
        if delta <= tol * (1.0 + float(np.abs(u).max())):
            trace.converged = True
            trace.iterations = m + 1
            return u, trace
    trace.iterations = m_max
    raise ConvergenceError(
        f"no convergence after {m_max} iterations (last delta {trace.deltas[-1]:.3g}); "
        "check the tail-reachability condition", trace=trace)


def mean_exit_time(intervals, h: float, K: int, b, sigma, rates,
                   tol: float = 1e-10, m_max: int = 10_000):
    """Expected exit time system: rhs -1, zero boundary data.

    Returns (system, u, trace); u[i-1] approximates E_{x,i} of the exit time
    from the domain.
    """
    system = EllipticSystem(
        intervals, h, K, b, sigma, rates,
        boundary=lambda x, i: 0.0, rhs=lambda x, i: -1.0,
    )
    u, trace = solve_fixed_point(system, tol=tol, m_max=m_max)
    return system, u, trace


def solution_to_csv(system: EllipticSystem, u: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "i", "u"])
        for i in range(1, u.shape[0] + 1):
            for xv, uv in zip(system.x, u[i - 1]):
                w.writerow([repr(float(xv)), i, repr(float(uv))])


def recurrence_indicator(D1: Tuple[float, float], k_schedule: Sequence[float],
                         K: int, b, sigma, rates, h: float,
                         probes: Sequence[Tuple[float, int]],
                         tol_rec: float = 1e-3, fp_tol: float = 1e-10,
                         m_max: int = 10_000) -> dict:
    """Exit-location dichotomy for the exterior of a bounded interval.

    For each level k the system is solved on (-k, l) union (u, k) with
    boundary data 1 on the inner boundary (the edge of D1 = (l, u)) and 0 at
    |x| = k; v_k(x, i) is then the probability of reaching D1 before |x| = k.
    Verdict ``recurrent`` when the probe deficits 1 - v_k shrink
    monotonically below tol_rec; ``transient`` when they stabilise above
    10*tol_rec; ``inconclusive`` otherwise.
    """
    lo1, hi1 = float(D1[0]), float(D1[1])
    if hi1 <= lo1:
        raise DomainError("D1 must be a nonempty open interval")
    ks = [float(k) for k in k_schedule]
    if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])) or ks[0] <= max(abs(lo1), abs(hi1)):
        raise DomainError("k_schedule must increase strictly beyond D1")

    deficits, probe_values = [], []
    for k in ks:
        system = EllipticSystem(
            [(-k, lo1), (hi1, k)], h, K, b, sigma, rates,
            boundary=lambda x, i, k=k: 1.0 if x in (lo1, hi1) else 0.0,
            rhs=lambda x, i: 0.0,
        )
        u, _ = solve_fixed_point(system, tol=fp_tol, m_max=m_max)
        vals = {}
        worst = 0.0
        for x0, i0 in probes:
            v = system.interpolate(u[i0 - 1], x0)
            vals[f"{x0},{i0}"] = v
            worst = max(worst, 1.0 - v)
        probe_values.append(vals)
        deficits.append(worst)

    nonincreasing = all(d2 <= d1 + 1e-12 for d1, d2 in zip(deficits, deficits[1:]))
    stabilised = (
        len(deficits) >= 2
        and abs(deficits[-1] - deficits[-2]) <= 0.1 * max(deficits[-1], 1e-300)
    )
    if nonincreasing and deficits[-1] <= tol_rec:
        verdict = "recurrent"
    elif stabilised and deficits[-1] > 10 * tol_rec:
        verdict = "transient"
    else:
        verdict = "inconclusive"
    return {
        "D1": [lo1, hi1],
        "ks": ks,
        "deficits": deficits,
        "probe_values": probe_values,
        "verdict": verdict,
        "tol_rec": tol_rec,
    }


def estimate_jump_before_exit(system: EllipticSystem, probes: Sequence[float],
                              dt: float, n_paths: int, seed: int,
                              t_max: float = 50.0) -> float:
    """Monte-Carlo estimate of p: the largest probability, over regimes up to
    the tail level n0 and probe starting points, of a regime jump before the
    frozen-regime diffusion exits the domain.

    Simulates Y with the regime frozen at i, accumulates the integral of
    q_i(Y(s)) to the exit time, and averages 1 - exp(-integral); returns the
    maximum of (mean + 3 SE) as a conservative upper estimate.
    """
    from .expressions import freeze_regime, parse_point_expr
    from .kernels import TableKernel, GlobalBound
    from .model import builtin_model
    from .segment import constant_segment
    from . import simulate as sim

    if system.K > 1 and system.eps0 is None:
        raise AssemblyError("tail-reachability level is vacuous; p is undefined")
    if len(system.components) != 1:
        raise DomainError("the p estimator expects a single-interval domain")
    lo, hi = system.intervals[0]
    delay = 8 * dt
    target = sim.HitTarget(sim.Box.interval(lo, hi), complement=True)
    best = 0.0
    for i in range(1, system.n0 + 1):
        b_i = freeze_regime(_coeff_expr(system.b), i)
        s_i = freeze_regime(_coeff_expr(system.sigma), i)
        model = builtin_model("custom", n=1, r=delay, drift=[b_i], diffusion=[[s_i]],
                              kernel=TableKernel({}, GlobalBound(0.0)))

        def q_total(view, i=i):
            return np.asarray(system_rate_total(system, i, view.x), dtype=float)

        for x0 in probes:
            seg = constant_segment(x0, delay, dt)
            _tau, censored, acc = sim.first_hit_batch(
                model, (seg, 1), target, dt, t_max, n_paths, seed,
                boundary="bridge", accumulate=q_total)
            vals = 1.0 - np.exp(-acc[~censored])
            if vals.size == 0:
                continue
            est = float(vals.mean())
            se = float(vals.std(ddof=1) / np.sqrt(vals.size))
            best = max(best, est + 3 * se)
    return best


def system_rate_total(system: EllipticSystem, i: int, x) -> np.ndarray:
    """q_i(x) from the assembled rate functions, vectorised over x."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for (ii, j), fn in system.rate_fns.items():
        if ii == i:
            acc = acc + np.asarray(fn(x, i), dtype=float)
    return acc


def _coeff_expr(fn) -> "Expr":
    """Recover the expression behind a coefficient callable (set by _as_coeff)."""
    expr = getattr(fn, "_expr", None)
    if expr is None:
        raise DomainError("coefficient was not built from an expression")
    return expr
