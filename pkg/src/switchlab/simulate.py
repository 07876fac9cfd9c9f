"""Sample paths of the hybrid process (X(t), alpha(t)).

The continuous component advances by Euler–Maruyama; the regime jumps through
the cumulative-interval construction: the rates out of regime i, listed in
ascending target order, partition [0, q_i) into consecutive left-closed
right-open intervals, and a uniform mark falling in the j-th interval moves
the regime to j.  Two jump modes exist:

* ``euler-rate`` — per step, jump with probability 1 - exp(-q_i dt) and draw
  the target from the normalised row (at most one jump per step);
* ``thinning``   — per step, a Poisson(Mbar dt) number of candidate marks,
  each uniform on [0, Mbar) and accepted when it lands inside [0, q_i); this
  is the reference Poisson-random-measure construction and permits several
  jumps per step.

Randomness is counter-based (Philox) and organised in fixed-width lane
blocks: path p lives in block p // BLOCK_WIDTH, and each block owns the
stream seeded by SeedSequence(seed, spawn_key=(block,)).  Block decomposition
depends only on (seed, n_paths), never on the thread count or completion
order, so batches are byte-reproducible under any parallel schedule.  Within
a block every step consumes a fixed sequence of draws regardless of lane
states (unused draws are masked out), keeping lanes aligned.

The segment feeding the rates is the Euler interpolant over the trailing
window, frozen within each step; its grid step equals the simulation dt.
Paths whose window sup-norm exceeds the hard cap are censored (flagged and
frozen), never silently dropped.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ExplosionGuardError, KernelError, ModelError
from .expressions import SegEnv
from .kernels import GlobalBound
from .model import RegimeSwitchingModel
from .segment import SegmentPath

__all__ = [
    "BLOCK_WIDTH",
    "HybridState",
    "Trajectory",
    "HitTarget",
    "Box",
    "Ball",
    "sample_regime_jump",
    "step",
    "simulate_path",
    "simulate_batch",
    "first_hit",
    "first_hit_batch",
    "BatchResult",
]

BLOCK_WIDTH = 4096
DEFAULT_H_CAP = 1e6
DEFAULT_BOUND_MARGIN = 1.0

EULER_RATE = "euler-rate"
THINNING = "thinning"


# ---------------------------------------------------------------------------
# Jump-target sampling (the Delta-interval inverse map)
# ---------------------------------------------------------------------------

def sample_regime_jump(row: Sequence[Tuple[int, float]], total: float, z: float) -> Optional[int]:
    """Target regime for a mark z >= 0, or None when z falls outside [0, total).

    ``row`` must list (j, q_ij) in ascending j; the cumulative sums define
    consecutive left-closed right-open intervals, and the unique j whose
    interval contains z is returned.  ``z >= total`` is the no-jump outcome.
    """
    if z < 0:
        raise DomainError("mark z must be nonnegative")
    if z >= total:
        return None
    acc = 0.0
    for j, q in row:
        acc += q
        if z < acc:
            return j
    return None  # only reachable through float round-off at the right edge


# ---------------------------------------------------------------------------
# Scalar state / trajectory containers
# ---------------------------------------------------------------------------

@dataclass
class HybridState:
    """State of a single path: current window, regime, time and RNG stream."""

    seg: SegmentPath
    regime: int
    time: float
    rng: np.random.Generator

    def __post_init__(self):
        if self.regime < 1:
            raise ModelError("regime must be a positive integer")


@dataclass
class Trajectory:
    """Recorded path on the simulation grid.

    The regime column changes only at logged jump times; X is continuous
    across jumps (only alpha jumps).
    """

    times: np.ndarray
    x: np.ndarray
    regimes: np.ndarray
    jumps: List[Tuple[float, int, int]] = field(default_factory=list)
    censored: bool = False

    def to_csv(self, path) -> None:
        import csv

        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{k + 1}" for k in range(n)] + ["alpha"])
            for t, row, a in zip(self.times, self.x, self.regimes):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [int(a)])

    def jumps_to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "from", "to"])
            for t, src, dst in self.jumps:
                w.writerow([repr(float(t)), int(src), int(dst)])


# ---------------------------------------------------------------------------
# Hitting targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo_k, hi_k] per component; infinities allowed."""

    lo: tuple
    hi: tuple

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Box":
        return cls((lo,), (hi,))

    def contains(self, x: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        inside = (x >= lo) & (x <= hi)
        return inside.all(axis=-1)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        return np.linalg.norm(x - c, axis=-1) <= self.radius


@dataclass(frozen=True)
class HitTarget:
    """Target set for first-hit runs, on the (X(t), alpha(t)) marginal.

    ``region`` is a Box or Ball on the continuous component; ``complement``
    flips it (e.g. exit problems).  ``regimes`` restricts the discrete
    component (None means any regime).  With ``all_nodes`` the whole window
    must sit inside the region, the optional segment-set membership test.
    """

    region: object
    complement: bool = False
    regimes: Optional[frozenset] = None
    all_nodes: bool = False

    def hit_points(self, x: np.ndarray, regimes: np.ndarray) -> np.ndarray:
        ok = self.region.contains(x)
        if self.complement:
            ok = ~ok
        if self.regimes is not None:
            ok = ok & np.isin(regimes, list(self.regimes))
        return ok

    def describe(self) -> dict:
        return {
            "region": type(self.region).__name__.lower(),
            "params": vars(self.region) if not isinstance(self.region, (Box, Ball))
            else {k: list(v) if isinstance(v, tuple) else v
                  for k, v in self.region.__dict__.items()},
            "complement": self.complement,
            "regimes": sorted(self.regimes) if self.regimes is not None else "any",
            "all_nodes": self.all_nodes,
        }


# ---------------------------------------------------------------------------
# Vectorised ring buffer over a lane block
# ---------------------------------------------------------------------------

class _Ring:
    """Trailing windows for B lanes with O(1) functional updates.

    Keeps per-node Euclidean norms plus running sup-norm and trapezoidal
    |phi| integral; the sup-norm is patched incrementally and recomputed only
    for lanes whose evicted node attained the maximum.
    """

    def __init__(self, init: SegmentPath, B: int):
        m1 = init.n_nodes
        self.m1 = m1
        self.h = init.step
        self.buf = np.tile(init.values[None, :, :], (B, 1, 1)).astype(float)
        self.norms = np.tile(np.linalg.norm(init.values, axis=1)[None, :], (B, 1))
        self.start = 0  # column index of the oldest node
        self.sup = self.norms.max(axis=1)
        w = np.full(m1, self.h)
        w[0] = w[-1] = self.h / 2
        self.intabs = self.norms @ w

    def head(self) -> np.ndarray:
        return self.buf[:, (self.start - 1) % self.m1, :]

    def tail(self) -> np.ndarray:
        return self.buf[:, self.start, :]

    def advance(self, new: np.ndarray, update_mask: np.ndarray) -> None:
        """Push new values; masked-out lanes keep their functionals frozen."""
        s = self.start
        old0 = self.norms[:, s].copy()
        old1 = self.norms[:, (s + 1) % self.m1]
        newest = self.norms[:, (s - 1) % self.m1]
        new_vals = np.where(update_mask[:, None], new, self.buf[:, s, :])
        new_norm = np.linalg.norm(new_vals, axis=1)
        # frozen lanes re-insert the evicted node, leaving functionals intact
        self.buf[:, s, :] = new_vals
        self.norms[:, s] = new_norm
        self.intabs = self.intabs + (self.h / 2) * (
            np.where(update_mask, new_norm + newest - old0 - old1, 0.0)
        )
        stale = update_mask & (old0 >= self.sup)
        self.sup = np.where(update_mask, np.maximum(self.sup, new_norm), self.sup)
        if np.any(stale):
            self.sup[stale] = self.norms[stale].max(axis=1)
        self.start = (s + 1) % self.m1

    def ordered_values(self) -> np.ndarray:
        """Window nodes oldest-to-newest, shape (B, m+1, n); copies."""
        idx = (self.start + np.arange(self.m1)) % self.m1
        return self.buf[:, idx, :]


class BlockView:
    """Read access to a block's state for generator/terminal callbacks."""

    def __init__(self, engine: "_BlockEngine"):
        self._e = engine

    @property
    def dim(self) -> int:
        return self._e.model.dim

    @property
    def x(self) -> np.ndarray:
        # engine-maintained state, authoritative also for frozen lanes
        return self._e.x[:, 0] if self._e.model.dim == 1 else self._e.x

    @property
    def x_tail(self) -> np.ndarray:
        tail = self._e.ring.tail()
        return tail[:, 0] if self._e.model.dim == 1 else tail

    @property
    def regimes(self) -> np.ndarray:
        return self._e.regimes

    @property
    def supnorm(self) -> np.ndarray:
        return self._e.ring.sup

    @property
    def intabs(self) -> np.ndarray:
        return self._e.ring.intabs

    @property
    def time(self) -> float:
        return self._e.t

    def seg_env(self) -> SegEnv:
        return SegEnv(self.x, self.x_tail, self.supnorm, self.intabs,
                      self._e.regimes, dim=self._e.model.dim)

    def window_values(self) -> np.ndarray:
        return self._e.ring.ordered_values()

    def window_times(self) -> np.ndarray:
        m = self._e.ring.m1 - 1
        return -self._e.model.delay + self._e.ring.h * np.arange(m + 1)


class _BlockEngine:
    """Drives one lane block; one instance per (block, run)."""

    def __init__(self, model: RegimeSwitchingModel, init_seg: SegmentPath, init_regime: int,
                 dt: float, B: int, rng: np.random.Generator, mode: str,
                 h_cap: float = DEFAULT_H_CAP, bound_margin: float = DEFAULT_BOUND_MARGIN):
        if mode not in (EULER_RATE, THINNING):
            raise ModelError(f"unknown jump mode {mode!r}")
        if abs(init_seg.step - dt) > 1e-12 * max(1.0, dt):
            raise DomainError("segment grid step must equal the simulation dt")
        self.model = model
        self.dt = dt
        self.B = B
        self.rng = rng
        self.mode = mode
        self.h_cap = h_cap
        self.bound_margin = bound_margin
        self.ring = _Ring(init_seg, B)
        self.x = np.tile(init_seg.head()[None, :], (B, 1))
        self.regimes = np.full(B, int(init_regime), dtype=np.int64)
        self.k = 0  # completed steps; time is k*dt to avoid accumulation drift
        self.alive = np.ones(B, dtype=bool)      # not censored by the explosion guard
        self.frozen = np.zeros(B, dtype=bool)    # externally stopped lanes (e.g. already hit)
        self.jump_counts = np.zeros(B, dtype=np.int64)
        self.jump_events: List[Tuple[float, np.ndarray, np.ndarray, np.ndarray]] = []
        self.record_jumps = False
        self.sqrt_dt = np.sqrt(dt)
        self.view = BlockView(self)

    @property
    def t(self) -> float:
        return self.k * self.dt

    # -- internals ---------------------------------------------------------------
    def _active(self) -> np.ndarray:
        return self.alive & ~self.frozen

    def _row_batch(self):
        env = self.view.seg_env()
        return self.model.kernel.row_batch(env, self.regimes)

    @staticmethod
    def _pick_targets(targets, rates, z):
        cum = np.cumsum(rates, axis=1)
        hit = z[:, None] < cum
        col = hit.argmax(axis=1)
        picked = targets[np.arange(targets.shape[0]), col]
        valid = hit.any(axis=1) & (picked > 0)
        return picked, valid

    def step(self, draws=None) -> None:
        """Advance the block one step of length dt.

        ``draws`` optionally supplies (xi, u_jump, u_target) for euler-rate
        coupling studies; thinning always draws internally.
        """
        act = self._active()
        B, n, d = self.B, self.model.dim, self.model.noise_dim

        x_in = self.x[:, 0] if n == 1 else self.x
        b = self.model.drift_batch(x_in, self.regimes)
        sig = self.model.sigma_batch(x_in, self.regimes)

        if self.mode == EULER_RATE:
            if draws is None:
                xi = self.rng.standard_normal((B, d))
                u_jump = self.rng.random(B)
                u_target = self.rng.random(B)
            else:
                xi, u_jump, u_target = draws
            targets, rates, totals = self._row_batch()
            x_new = self.x + b * self.dt + np.einsum("bnd,bd->bn", sig, xi) * self.sqrt_dt
            p_jump = -np.expm1(-totals * self.dt)
            do_jump = act & (u_jump < p_jump) & (totals > 0)
            z = u_target * totals
            picked, valid = self._pick_targets(targets, rates, z)
            do_jump &= valid
            new_regimes = np.where(do_jump, picked, self.regimes)
        else:
            if draws is not None:
                raise ModelError("external draws are only supported in euler-rate mode")
            xi = self.rng.standard_normal((B, d))
            x_new = self.x + b * self.dt + np.einsum("bnd,bd->bn", sig, xi) * self.sqrt_dt
            mbar = np.broadcast_to(np.asarray(
                self.model.kernel.bound.value(self.ring.sup + self.bound_margin, self.regimes),
                dtype=float), (B,))
            if not np.all(np.isfinite(mbar)):
                raise KernelError("thinning requires a finite dominating bound")
            counts = self.rng.poisson(mbar * self.dt)
            counts = np.where(act, counts, 0)
            new_regimes = self.regimes.copy()
            rounds = int(counts.max()) if counts.size else 0
            for k in range(rounds):
                u = self.rng.random(B)
                env = SegEnv(self.view.x, self.view.x_tail, self.ring.sup,
                             self.ring.intabs, new_regimes, dim=n)
                targets, rates, totals = self.model.kernel.row_batch(env, new_regimes)
                if np.any(totals[act] > mbar[act] + 1e-12):
                    raise KernelError("dominating bound smaller than the total rate")
                cand = act & (k < counts)
                z = u * mbar
                picked, valid = self._pick_targets(targets, rates, z)
                accept = cand & valid & (z < totals)
                if self.record_jumps and np.any(accept):
                    self.jump_events.append(
                        ((self.k + 1) * self.dt, np.where(accept)[0].copy(),
                         new_regimes[accept].copy(), picked[accept].copy()))
                self.jump_counts += accept
                new_regimes = np.where(accept, picked, new_regimes)
            do_jump = None

        if self.mode == EULER_RATE:
            self.jump_counts += do_jump
            if self.record_jumps and np.any(do_jump):
                self.jump_events.append(
                    ((self.k + 1) * self.dt, np.where(do_jump)[0].copy(),
                     self.regimes[do_jump].copy(), new_regimes[do_jump].copy()))

        upd = act
        self.x = np.where(upd[:, None], x_new, self.x)
        self.regimes = np.where(upd, new_regimes, self.regimes)
        self.ring.advance(self.x, upd)
        exploded = self.alive & (self.ring.sup > self.h_cap)
        if np.any(exploded):
            self.alive &= ~exploded
        self.k += 1


def _block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(ss))


def _block_widths(n_paths: int) -> List[int]:
    widths = []
    remaining = n_paths
    while remaining > 0:
        widths.append(min(BLOCK_WIDTH, remaining))
        remaining -= BLOCK_WIDTH
    return widths


def _check_init(model: RegimeSwitchingModel, init) -> Tuple[SegmentPath, int]:
    seg, i0 = init
    if not isinstance(seg, SegmentPath):
        raise ModelError("init must be (SegmentPath, regime)")
    if seg.dim != model.dim:
        raise ModelError("initial segment dimension does not match the model")
    if abs(seg.delay - model.delay) > 1e-9 * max(1.0, model.delay):
        raise ModelError("initial segment delay does not match the model")
    if int(i0) < 1:
        raise ModelError("initial regime must be >= 1")
    return seg, int(i0)


def _n_steps(T: float, dt: float) -> int:
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise DomainError("T must be an integer multiple of dt")
    return steps


# ---------------------------------------------------------------------------
# Scalar operations
# ---------------------------------------------------------------------------

def step(state: HybridState, model: RegimeSwitchingModel, dt: float,
         mode: str = EULER_RATE, h_cap: float = DEFAULT_H_CAP,
         bound_margin: float = DEFAULT_BOUND_MARGIN) -> HybridState:
    """One hybrid step for a single path (spec-level scalar operation).

    X moves by Euler–Maruyama with the pre-jump regime; the regime updates
    per the selected mode using the segment frozen at the step start.
    Raises ExplosionGuardError when the new window exceeds the hard cap.
    """
    seg, i = state.seg, state.regime
    if abs(seg.step - dt) > 1e-12 * max(1.0, dt):
        raise DomainError("dt must equal the segment grid step")
    rng = state.rng
    x = seg.head()
    bvec = model.drift_at(x if model.dim > 1 else x[0], i)
    sig = model.sigma_at(x if model.dim > 1 else x[0], i)
    row, total = model.rate_row(seg, i)

    xi = rng.standard_normal(model.noise_dim)
    x_new = x + bvec * dt + sig @ xi * np.sqrt(dt)

    new_i = i
    if mode == EULER_RATE:
        u_jump = rng.random()
        u_target = rng.random()
        if total > 0 and u_jump < -np.expm1(-total * dt):
            j = sample_regime_jump(row, total, u_target * total)
            if j is not None:
                new_i = j
    elif mode == THINNING:
        mbar = float(model.kernel.bound.value(seg.sup_norm() + bound_margin, i))
        if not np.isfinite(mbar):
            raise KernelError("thinning requires a finite dominating bound")
        if total > mbar + 1e-12:
            raise KernelError("dominating bound smaller than the total rate")
        n_cand = rng.poisson(mbar * dt)
        cur_row, cur_total = row, total
        for _ in range(int(n_cand)):
            z = rng.random() * mbar
            if new_i != i:
                cur_row, cur_total = model.rate_row(seg, new_i)
            j = sample_regime_jump(cur_row, cur_total, z)
            if j is not None:
                new_i = j
    else:
        raise ModelError(f"unknown jump mode {mode!r}")

    new_seg = seg.advance(x_new)
    if new_seg.sup_norm() > h_cap:
        raise ExplosionGuardError(
            f"segment sup-norm exceeded the cap {h_cap:g}; path censored"
        )
    return HybridState(seg=new_seg, regime=new_i, time=state.time + dt, rng=rng)


# ---------------------------------------------------------------------------
# Batch drivers
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    """Terminal states plus optional snapshots for a path batch."""

    x: np.ndarray                 # (n_paths, dim)
    regimes: np.ndarray           # (n_paths,)
    censored: np.ndarray          # (n_paths,) bool: explosion-guard hits
    snapshots: dict               # time -> (x (n_paths, dim), regimes (n_paths,))
    jump_counts: np.ndarray       # (n_paths,)
    n_paths: int
    seed: int
    dt: float
    mode: str

    def summary(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "censored": int(self.censored.sum()),
            "seed": self.seed,
            "dt": self.dt,
            "mode": self.mode,
        }


def _run_one_block(model, seg0, i0, dt, width, rng, mode, n_steps, snap_steps,
                   h_cap, bound_margin, record=False):
    eng = _BlockEngine(model, seg0, i0, dt, width, rng, mode,
                       h_cap=h_cap, bound_margin=bound_margin)
    eng.record_jumps = record
    snaps = {}
    if record:
        xs = np.empty((n_steps + 1, width, model.dim))
        rs = np.empty((n_steps + 1, width), dtype=np.int64)
        xs[0], rs[0] = eng.x, eng.regimes
    for k in range(n_steps):
        eng.step()
        if record:
            xs[k + 1], rs[k + 1] = eng.x, eng.regimes
        if k + 1 in snap_steps:
            snaps[k + 1] = (eng.x.copy(), eng.regimes.copy())
    out = {
        "x": eng.x, "regimes": eng.regimes, "censored": ~eng.alive, "snaps": snaps,
        "jump_counts": eng.jump_counts,
    }
    if record:
        out["xs"], out["rs"], out["jumps"] = xs, rs, eng.jump_events
    return out


def simulate_batch(model: RegimeSwitchingModel, init, T: float, dt: float,
                   n_paths: int, seed: int, mode: str = EULER_RATE,
                   snapshot_times: Optional[Sequence[float]] = None,
                   threads: int = 1, h_cap: float = DEFAULT_H_CAP,
                   bound_margin: float = DEFAULT_BOUND_MARGIN) -> BatchResult:
    """Simulate n_paths independent paths from a common initial condition."""
    seg0, i0 = _check_init(model, init)
    n_steps = _n_steps(T, dt)
    snap_steps = {}
    if snapshot_times:
        for ts in snapshot_times:
            ks = int(round(ts / dt))
            if abs(ks * dt - ts) > 1e-9 * max(1.0, abs(ts)) or not 0 < ks <= n_steps:
                raise DomainError(f"snapshot time {ts} not on the grid")
            snap_steps[ks] = ts

    widths = _block_widths(n_paths)

    def job(b):
        rng = _block_rng(seed, b)
        return _run_one_block(model, seg0, i0, dt, widths[b], rng, mode,
                              n_steps, snap_steps, h_cap, bound_margin)

    results = _map_blocks(job, len(widths), threads)

    x = np.concatenate([r["x"] for r in results], axis=0)
    regimes = np.concatenate([r["regimes"] for r in results])
    censored = np.concatenate([r["censored"] for r in results])
    jump_counts = np.concatenate([r["jump_counts"] for r in results])
    snapshots = {}
    for ks, ts in snap_steps.items():
        snapshots[ts] = (
            np.concatenate([r["snaps"][ks][0] for r in results], axis=0),
            np.concatenate([r["snaps"][ks][1] for r in results]),
        )
    return BatchResult(x=x, regimes=regimes, censored=censored, snapshots=snapshots,
                       jump_counts=jump_counts, n_paths=n_paths, seed=seed, dt=dt, mode=mode)


def _map_blocks(job: Callable, n_blocks: int, threads: int) -> list:
    if threads <= 1 or n_blocks <= 1:
        return [job(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, range(n_blocks)))


def simulate_path(model: RegimeSwitchingModel, init, T: float, dt: float, seed: int,
                  mode: str = EULER_RATE, h_cap: float = DEFAULT_H_CAP,
                  bound_margin: float = DEFAULT_BOUND_MARGIN) -> Trajectory:
    """Single recorded trajectory on [0, T]; reproducible given (seed, dt, mode)."""
    seg0, i0 = _check_init(model, init)
    n_steps = _n_steps(T, dt)
    rng = _block_rng(seed, 0)
    out = _run_one_block(model, seg0, i0, dt, 1, rng, mode, n_steps, {},
                         h_cap, bound_margin, record=True)
    times = dt * np.arange(n_steps + 1)
    jumps = [(float(t), int(src[0]), int(dst[0]))
             for t, lanes, src, dst in out["jumps"]]
    return Trajectory(times=times, x=out["xs"][:, 0, :], regimes=out["rs"][:, 0],
                      jumps=jumps, censored=bool(out["censored"][0]))


# ---------------------------------------------------------------------------
# First hitting times
# ---------------------------------------------------------------------------

def _bridge_interval(target: HitTarget, dim: int):
    """Interval (lo, hi) whose exit the bridge correction refines, or None."""
    if dim != 1 or not isinstance(target.region, Box):
        return None
    if not target.complement or target.regimes is not None or target.all_nodes:
        return None
    return float(target.region.lo[0]), float(target.region.hi[0])


def _hit_block(model, seg0, i0, target, dt, t_max, width, rng, mode,
               h_cap, bound_margin, boundary, accumulate=None):
    eng = _BlockEngine(model, seg0, i0, dt, width, rng, mode,
                       h_cap=h_cap, bound_margin=bound_margin)
    n_steps = _n_steps(t_max, dt)
    tau = np.full(width, t_max)
    done = np.zeros(width, dtype=bool)
    acc = np.zeros(width) if accumulate is not None else None
    interval = _bridge_interval(target, model.dim) if boundary == "bridge" else None
    if boundary == "bridge" and interval is None:
        raise DomainError(
            "bridge boundary mode needs an unrestricted 1-D interval-exit target")

    def points_hit():
        x = eng.x[:, 0] if model.dim == 1 else eng.x
        if target.all_nodes:
            vals = eng.ring.ordered_values()
            xs = vals[:, :, 0][..., None] if model.dim == 1 else vals
            ok = target.region.contains(xs.reshape(-1, model.dim)).reshape(width, -1)
            ok = ok.all(axis=1)
            if target.complement:
                ok = ~ok
            if target.regimes is not None:
                ok &= np.isin(eng.regimes, list(target.regimes))
            return ok
        return target.hit_points(eng.x, eng.regimes)

    hit0 = points_hit()
    tau[hit0] = 0.0
    done |= hit0
    eng.frozen = done.copy()

    for k in range(n_steps):
        if (done | ~eng.alive).all():
            break
        if accumulate is not None:
            live = ~done & eng.alive
            acc[live] += accumulate(eng.view)[live] * dt
        x_prev = sig_prev = None
        if interval is not None:
            x_prev = eng.x[:, 0].copy()
            sig_prev = model.sigma_batch(eng.x[:, 0], eng.regimes)[:, 0, 0]
        eng.step()
        newly = points_hit() & ~done & eng.alive
        if interval is not None:
            u_bridge = eng.rng.random(width)  # drawn every step: fixed consumption
            lo, hi = interval
            x_now = eng.x[:, 0]
            inside = ~newly & ~done & eng.alive
            var = np.maximum(sig_prev ** 2 * dt, 1e-300)
            p_hi = np.exp(-2.0 * np.maximum(hi - x_prev, 0) * np.maximum(hi - x_now, 0) / var)
            p_lo = np.exp(-2.0 * np.maximum(x_prev - lo, 0) * np.maximum(x_now - lo, 0) / var)
            p_cross = np.clip(p_hi + p_lo, 0.0, 1.0)
            newly |= inside & (u_bridge < p_cross)
        tau[newly] = eng.t
        done |= newly
        eng.frozen = done | ~eng.alive

    censored = ~done
    out = {"tau": tau, "censored": censored, "exploded": ~eng.alive & ~done}
    if accumulate is not None:
        out["acc"] = acc
    return out


def first_hit_batch(model: RegimeSwitchingModel, init, target: HitTarget, dt: float,
                    t_max: float, n_paths: int, seed: int, mode: str = EULER_RATE,
                    boundary: str = "grid", threads: int = 1,
                    h_cap: float = DEFAULT_H_CAP,
                    bound_margin: float = DEFAULT_BOUND_MARGIN,
                    accumulate=None):
    """First grid times at which (X(t), alpha(t)) enters the target set.

    Returns (tau, censored[, acc]) arrays of length n_paths; censored entries
    report tau = t_max.  ``boundary='bridge'`` adds the Brownian-bridge
    crossing correction for 1-D interval exits, removing the O(sqrt(dt))
    discrete-monitoring bias; detection otherwise happens at grid times.
    ``accumulate`` optionally integrates a per-step functional of the block
    state along each path until its hit time.
    """
    seg0, i0 = _check_init(model, init)
    widths = _block_widths(n_paths)

    def job(b):
        rng = _block_rng(seed, b)
        return _hit_block(model, seg0, i0, target, dt, t_max, widths[b], rng,
                          mode, h_cap, bound_margin, boundary, accumulate)

    results = _map_blocks(job, len(widths), threads)
    tau = np.concatenate([r["tau"] for r in results])
    censored = np.concatenate([r["censored"] for r in results])
    if accumulate is not None:
        acc = np.concatenate([r["acc"] for r in results])
        return tau, censored, acc
    return tau, censored


def first_hit(model: RegimeSwitchingModel, init, target: HitTarget, dt: float,
              t_max: float, seed: int, mode: str = EULER_RATE,
              boundary: str = "grid", h_cap: float = DEFAULT_H_CAP,
              bound_margin: float = DEFAULT_BOUND_MARGIN) -> Tuple[float, bool]:
    """Single-path hitting time: (tau, censored)."""
    if not np.isfinite(t_max):
        raise DomainError("t_max must be finite")
    tau, censored = first_hit_batch(model, init, target, dt, t_max, 1, seed,
                                    mode=mode, boundary=boundary,
                                    h_cap=h_cap, bound_margin=bound_margin)
    return float(tau[0]), bool(censored[0])
