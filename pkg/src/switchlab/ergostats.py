"""Recurrence and ergodicity evidence from trajectory batches.

Hitting statistics summarise first-hit batches (with explicit censoring).
Total-variation decay is estimated on the (X(t), alpha(t)) marginal: two
ensembles started from different initial conditions are binned on a shared
spatial grid crossed with a capped regime axis, and TV(t) is half the L1
distance of the histograms.  Both ensembles converging to the same invariant
law forces their mutual TV to zero, which is what the decay fit measures; the
invariant measure itself is never constructed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError
from .model import RegimeSwitchingModel
from . import simulate as sim

__all__ = [
    "HittingBatch",
    "hitting_stats",
    "Binning",
    "empirical_tv",
    "TVCurve",
    "tv_decay_curve",
    "fit_exponential_rate",
]


# ---------------------------------------------------------------------------
# Hitting statistics
# ---------------------------------------------------------------------------

@dataclass
class HittingBatch:
    """First-hit times with censoring flags; censored entries equal t_max."""

    taus: np.ndarray
    censored: np.ndarray
    t_max: float
    target: dict = field(default_factory=dict)

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        self.censored = np.asarray(self.censored, dtype=bool)
        if self.taus.shape != self.censored.shape:
            raise DomainError("taus and censored must align")
        if self.taus.size == 0:
            raise DomainError("empty hitting batch")
        if not np.all(self.taus[self.censored] == self.t_max):
            raise DomainError("censored entries must carry tau == t_max")

    @property
    def n_paths(self) -> int:
        return self.taus.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "tau", "censored"])
            for k, (t, c) in enumerate(zip(self.taus, self.censored)):
                w.writerow([k, repr(float(t)), int(c)])


def hitting_stats(batch: HittingBatch) -> dict:
    """Hit fraction, mean over uncensored hits with a normal 95% CI.

    With every path censored the mean is undefined and flagged; evidence for
    positive recurrence is a hit fraction near one together with a mean that
    stays stable as t_max doubles.
    """
    hit = ~batch.censored
    n = batch.n_paths
    out = {
        "n_paths": n,
        "hit_fraction": float(hit.mean()),
        "censor_fraction": float(batch.censored.mean()),
        "t_max": batch.t_max,
        "all_censored": not bool(hit.any()),
    }
    if out["all_censored"]:
        out["mean_hitting_time"] = None
        out["ci95"] = None
        out["se"] = None
        return out
    taus = batch.taus[hit]
    mean = float(taus.mean())
    se = float(taus.std(ddof=1) / np.sqrt(taus.size)) if taus.size > 1 else float("inf")
    out["mean_hitting_time"] = mean
    out["se"] = se
    out["ci95"] = (mean - 1.96 * se, mean + 1.96 * se)
    return out


# ---------------------------------------------------------------------------
# Empirical total variation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Binning:
    """Shared histogram layout: spatial edges per dimension plus a regime cap.

    Samples outside the edge range are clipped into the end cells; regimes
    above the cap pool into one overflow cell, keeping the countable axis
    finite.
    """

    edges: Tuple[np.ndarray, ...]
    regime_cap: int

    @classmethod
    def regular(cls, lo, hi, n_cells: int, regime_cap: int, dim: int = 1) -> "Binning":
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
        edges = tuple(np.linspace(lo[k], hi[k], n_cells + 1) for k in range(dim))
        return cls(edges=edges, regime_cap=int(regime_cap))

    @property
    def n_cells(self) -> int:
        space = 1
        for e in self.edges:
            space *= len(e) - 1
        return space * (self.regime_cap + 1)

    def cell_index(self, x: np.ndarray, regimes: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != len(self.edges):
            raise DomainError("sample dimension does not match the binning")
        flat = np.zeros(x.shape[0], dtype=np.int64)
        for k, e in enumerate(self.edges):
            idx = np.clip(np.searchsorted(e, x[:, k], side="right") - 1, 0, len(e) - 2)
            flat = flat * (len(e) - 1) + idx
        r = np.minimum(np.asarray(regimes, dtype=np.int64), self.regime_cap + 1) - 1
        return flat * (self.regime_cap + 1) + r


def empirical_tv(samples_a, samples_b, binning: Binning) -> float:
    """Half the L1 distance of the binned empirical laws, in [0, 1].

    Each sample set is an (x, regimes) pair; both are binned on the shared
    layout (symmetric in its arguments, and a metric on binned histograms).
    """
    xa, ra = samples_a
    xb, rb = samples_b
    if np.asarray(xa).size == 0 or np.asarray(xb).size == 0:
        raise DomainError("empty sample set")
    ca = np.bincount(binning.cell_index(xa, ra), minlength=binning.n_cells)
    cb = np.bincount(binning.cell_index(xb, rb), minlength=binning.n_cells)
    pa = ca / ca.sum()
    pb = cb / cb.sum()
    return float(0.5 * np.abs(pa - pb).sum())


@dataclass
class TVCurve:
    """TV estimates over time with sample counts and the binning size."""

    times: np.ndarray
    tv: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    n_cells: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.tv = np.asarray(self.tv, dtype=float)
        if np.any((self.tv < 0) | (self.tv > 1)):
            raise DomainError("TV estimates must lie in [0, 1]")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "tv", "n_a", "n_b"])
            for t, v, na, nb in zip(self.times, self.tv, self.n_a, self.n_b):
                w.writerow([repr(float(t)), repr(float(v)), int(na), int(nb)])


def tv_decay_curve(model: RegimeSwitchingModel, init_a, init_b,
                   times: Sequence[float], dt: float, n_paths: int, seed: int,
                   binning: Binning, mode: str = sim.EULER_RATE,
                   threads: int = 1) -> TVCurve:
    """TV between two ensembles from different initial conditions, per time.

    Censored lanes are dropped from both ensembles' histograms; the two runs
    use disjoint seeds derived from ``seed``.
    """
    times = sorted(times)
    T = times[-1]
    res_a = sim.simulate_batch(model, init_a, T, dt, n_paths, seed * 2 + 1,
                               mode=mode, snapshot_times=times, threads=threads)
    res_b = sim.simulate_batch(model, init_b, T, dt, n_paths, seed * 2 + 2,
                               mode=mode, snapshot_times=times, threads=threads)
    tvs, nas, nbs = [], [], []
    for t in times:
        xa, ra = res_a.snapshots[t]
        xb, rb = res_b.snapshots[t]
        ka = ~res_a.censored
        kb = ~res_b.censored
        tvs.append(empirical_tv((xa[ka], ra[ka]), (xb[kb], rb[kb]), binning))
        nas.append(int(ka.sum()))
        nbs.append(int(kb.sum()))
    return TVCurve(times=np.array(times), tv=np.array(tvs),
                   n_a=np.array(nas), n_b=np.array(nbs), n_cells=binning.n_cells)


def fit_exponential_rate(curve: TVCurve, floor: Optional[float] = None) -> dict:
    """Least-squares decay rate of log TV versus t above the noise floor.

    The default floor is 2/sqrt(samples per cell) = 2*sqrt(n_cells/n); points
    at or below it are estimator noise and excluded.  Fewer than three usable
    points flags the fit instead of producing one.
    """
    n_min = int(min(curve.n_a.min(), curve.n_b.min()))
    if floor is None:
        floor = 2.0 * np.sqrt(curve.n_cells / max(n_min, 1))
    usable = curve.tv > floor
    out = {"floor": float(floor), "n_used": int(usable.sum())}
    if usable.sum() < 3:
        out.update({"theta_hat": None, "r_squared": None, "flagged": True})
        return out
    t = curve.times[usable]
    y = np.log(curve.tv[usable])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    out.update({"theta_hat": float(-slope), "r_squared": r2, "flagged": False})
    return out
