"""Memory segment of the continuous component on a uniform time grid.

A segment holds the trailing window ``{phi(t): -delay <= t <= 0}`` sampled at
``step`` intervals.  It is the functional state that switching intensities and
cylindrical test functions read.  Reconstruction between nodes is piecewise
linear, matching the Euler interpolant of the simulator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = ["SegmentPath", "constant_segment", "segment_from_function"]

# Permitted slack between m*step and delay, in units of spacing of `delay`.
_GRID_RTOL_ULPS = 4


@dataclass(frozen=True)
class SegmentPath:
    """Uniformly sampled path segment phi: [-delay, 0] -> R^dim.

    ``values[k]`` is phi(-delay + k*step); there are exactly m+1 nodes with
    m*step == delay (up to a few ulps).  Instances are value types: `advance`
    returns a fresh segment and never mutates the receiver.
    """

    dim: int
    delay: float
    step: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if self.dim <= 0:
            raise DomainError("segment dim must be positive")
        if self.delay <= 0 or self.step <= 0:
            raise DomainError("segment delay and step must be positive")
        if vals.ndim != 2 or vals.shape[1] != self.dim:
            raise DomainError(
                f"segment values must have shape (m+1, {self.dim}), got {vals.shape}"
            )
        m = vals.shape[0] - 1
        if m < 1:
            raise DomainError("segment needs at least two nodes")
        tol = _GRID_RTOL_ULPS * np.spacing(self.delay)
        if abs(m * self.step - self.delay) > tol:
            raise DomainError(
                f"grid mismatch: m*step = {m * self.step!r} but delay = {self.delay!r}"
            )
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        """Grid times -delay, ..., 0 (length m+1)."""
        m = self.n_nodes - 1
        return -self.delay + self.step * np.arange(m + 1)

    def eval_at(self, s: float) -> np.ndarray:
        """Value of phi at s in [-delay, 0], linearly interpolated between nodes.

        Up to half a grid step beyond either endpoint clamps to the endpoint;
        anything further is a DomainError.
        """
        if s < -self.delay - 0.5 * self.step or s > 0.5 * self.step:
            raise DomainError(
                f"s = {s} outside [-{self.delay} - step/2, step/2]"
            )
        pos = (s + self.delay) / self.step
        m = self.n_nodes - 1
        pos = min(max(pos, 0.0), float(m))
        k = int(np.floor(pos))
        if k >= m:
            return self.values[m].copy()
        frac = pos - k
        # exact node values when s lands on the grid (within float slack)
        if frac < 1e-12:
            return self.values[k].copy()
        if frac > 1 - 1e-12:
            return self.values[k + 1].copy()
        return (1 - frac) * self.values[k] + frac * self.values[k + 1]

    def head(self) -> np.ndarray:
        """phi(0), the most recent value."""
        return self.values[-1].copy()

    def tail(self) -> np.ndarray:
        """phi(-delay), the oldest value in the window."""
        return self.values[0].copy()

    def sup_norm(self) -> float:
        """max_k |phi(t_k)| (Euclidean norm per node).

        The grid maximum is the adopted discretisation of sup over [-delay, 0];
        it is exact for the piecewise-linear reconstruction.
        """
        return float(np.linalg.norm(self.values, axis=1).max())

    def abs_integral(self) -> float:
        """Trapezoidal integral of |phi(s)| over the window."""
        norms = np.linalg.norm(self.values, axis=1)
        return float(np.trapezoid(norms, dx=self.step))

    def weighted_integral(self, f2, g, i: int) -> float:
        """Trapezoidal rule for the time-weighted functional of the window.

        Computes integral over [-delay, 0] of g(t, i) * f2(phi(t), i) dt.
        ``f2`` receives the node values as an array ((m+1,) when dim == 1,
        else (m+1, dim)) and must return an (m+1,) array; ``g`` receives the
        grid times.  Both must therefore be numpy-vectorised along the node
        axis.
        """
        x = self.values[:, 0] if self.dim == 1 else self.values
        fy = np.asarray(f2(x, i), dtype=float)
        gy = np.asarray(g(self.times, i), dtype=float)
        integrand = np.broadcast_to(fy * gy, (self.n_nodes,))
        return float(np.trapezoid(integrand, dx=self.step))

    def advance(self, new_value) -> "SegmentPath":
        """Slide the window one step: drop the oldest node, append new_value."""
        nv = np.asarray(new_value, dtype=float).reshape(-1)
        if nv.shape != (self.dim,):
            raise DomainError(
                f"new value has length {nv.shape[0]}, segment dim is {self.dim}"
            )
        vals = np.empty_like(self.values)
        vals[:-1] = self.values[1:]
        vals[-1] = nv
        return SegmentPath(self.dim, self.delay, self.step, vals)

    def to_csv(self, path) -> None:
        """Dump the window as CSV rows t, x_1..x_n."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x_{k + 1}" for k in range(self.dim)])
            for t, row in zip(self.times, self.values):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def constant_segment(x, delay: float, step: float, dim: int | None = None) -> SegmentPath:
    """Segment identically equal to the point x."""
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    if dim is not None and xv.shape != (dim,):
        raise DomainError(f"constant value has shape {xv.shape}, expected ({dim},)")
    m = int(round(delay / step))
    vals = np.tile(xv, (m + 1, 1))
    return SegmentPath(xv.shape[0], delay, step, vals)


def segment_from_function(fn, delay: float, step: float, dim: int = 1) -> SegmentPath:
    """Sample phi(t) = fn(t) on the uniform grid over [-delay, 0]."""
    m = int(round(delay / step))
    ts = -delay + step * np.arange(m + 1)
    vals = np.array([np.atleast_1d(fn(t)) for t in ts], dtype=float)
    return SegmentPath(dim, delay, step, vals)
