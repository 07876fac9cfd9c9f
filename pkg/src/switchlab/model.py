"""Hybrid model definition: drift, diffusion and segment-dependent rate kernel.

The continuous component follows dX = b(X, i) dt + sigma(X, i) dW while the
regime i jumps with intensities q_ij read off the trailing segment.  Drift
and diffusion entries are point expressions (symbols x, i); rates are segment
expressions.  Built-in models cover the four reference kernels:

* ``ex1`` / ``ex2`` — symmetric birth–death rates C + 1/(1 + ||phi||) above
  regime 1, drift -x*b(x, i).  ``ex2`` is the same model; it additionally
  documents the requirement inf |x| b(x, i) > 0 at infinity (a limit
  condition on the caller's coefficients, not a runtime check).
* ``ex3`` — jump-to-base rates 2*INTABS with upward rate i*INTABS, drift
  -x*b(x, i).
* ``ex4`` — birth–death rates C + 2|phi(0)| (down) and C + |phi(-r)| (up),
  with a caller-supplied drift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ModelError
from .expressions import Expr, PointEnv, SegEnv, parse_point_expr
from .kernels import (
    BandedKernel,
    GlobalBound,
    JumpToBaseKernel,
    LocalBound,
    RateKernel,
    kernel_from_json,
    kernel_to_json,
)
from .segment import SegmentPath

__all__ = ["RegimeSwitchingModel", "builtin_model", "load_model", "save_model"]


def _as_point(e) -> Expr:
    return e if isinstance(e, Expr) else parse_point_expr(str(e))


@dataclass
class RegimeSwitchingModel:
    """Immutable model bundle; safe to share across simulation tasks."""

    dim: int
    delay: float
    drift: List[Expr]
    diffusion: List[List[Expr]]
    kernel: RateKernel
    name: str = "custom"
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.drift = [_as_point(e) for e in self.drift]
        self.diffusion = [[_as_point(e) for e in row] for row in self.diffusion]
        if len(self.drift) != self.dim:
            raise ModelError(f"drift needs {self.dim} components, got {len(self.drift)}")
        if len(self.diffusion) != self.dim:
            raise ModelError("diffusion needs one row per state dimension")
        widths = {len(row) for row in self.diffusion}
        if len(widths) != 1:
            raise ModelError("diffusion rows must share the same width d")
        self.noise_dim = widths.pop()
        if self.delay <= 0:
            raise ModelError("delay must be positive")

    # -- coefficient evaluation -------------------------------------------------
    def drift_at(self, x, i) -> np.ndarray:
        """b(x, i) as an (dim,) vector (scalar x allowed when dim == 1)."""
        env = PointEnv(x, i, dim=self.dim)
        return np.array([float(e.eval(env)) for e in self.drift])

    def sigma_at(self, x, i) -> np.ndarray:
        """sigma(x, i) as an (dim, d) matrix."""
        env = PointEnv(x, i, dim=self.dim)
        return np.array([[float(e.eval(env)) for e in row] for row in self.diffusion])

    def a_at(self, x, i) -> np.ndarray:
        """A = sigma sigma^T, symmetric positive semidefinite."""
        s = self.sigma_at(x, i)
        return s @ s.T

    def drift_batch(self, x, i) -> np.ndarray:
        """Vectorised drift for a lane batch: x (B,) or (B, dim) -> (B, dim)."""
        env = PointEnv(x, i, dim=self.dim)
        B = np.asarray(x).shape[0]
        cols = [np.broadcast_to(np.asarray(e.eval(env), dtype=float), (B,)) for e in self.drift]
        return np.stack(cols, axis=-1)

    def sigma_batch(self, x, i) -> np.ndarray:
        """Vectorised diffusion for a lane batch -> (B, dim, d)."""
        env = PointEnv(x, i, dim=self.dim)
        B = np.asarray(x).shape[0]
        rows = []
        for row in self.diffusion:
            rows.append([np.broadcast_to(np.asarray(e.eval(env), dtype=float), (B,)) for e in row])
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=1)

    # -- kernel access ------------------------------------------------------------
    def rate_row(self, seg: SegmentPath, i: int) -> Tuple[List[Tuple[int, float]], float]:
        """Rates out of regime i given the current segment.

        The returned row enumerates the support in ascending j; cumulative
        sums of the rates define the left-closed right-open target intervals
        used by the jump sampler.
        """
        if i < 1:
            raise ModelError("regimes are positive integers")
        env = SegEnv.from_segment(seg, i)
        return self.kernel.row(env, i)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "n": self.dim,
            "r": self.delay,
            "drift": [e.text for e in self.drift],
            "diffusion": [[e.text for e in row] for row in self.diffusion],
            "kernel": kernel_to_json(self.kernel),
        }


def rate_row(model: RegimeSwitchingModel, seg: SegmentPath, i: int):
    return model.rate_row(seg, i)


def load_model(path) -> RegimeSwitchingModel:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        return RegimeSwitchingModel(
            dim=int(obj["n"]),
            delay=float(obj["r"]),
            drift=obj["drift"],
            diffusion=obj["diffusion"],
            kernel=kernel_from_json(obj["kernel"]),
            name=obj.get("name", "custom"),
        )
    except KeyError as exc:
        raise ModelError(f"model file missing field {exc}") from None


def save_model(model: RegimeSwitchingModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def builtin_model(name: str, **params) -> RegimeSwitchingModel:
    """Construct one of the reference models.

    Common params: ``r`` (delay, default 1.0), ``sigma`` (expression or
    number, default "1"), ``C`` (the nonnegative constant in the birth–death
    rates, default 0).  For ex1/ex2/ex3, ``b`` is the positive multiplier in
    the drift -x*b(x, i); for ex4, ``drift`` is the drift expression itself.
    ``custom`` expects explicit ``drift`` (list), ``diffusion`` (matrix),
    ``kernel`` (RateKernel) and optional ``n``.
    """
    name = name.lower()
    if name == "custom":
        return RegimeSwitchingModel(
            dim=int(params.get("n", 1)),
            delay=float(params.get("r", 1.0)),
            drift=params["drift"],
            diffusion=params["diffusion"],
            kernel=params["kernel"],
            name="custom",
            params=dict(params),
        )

    r = float(params.get("r", 1.0))
    sigma = str(params.get("sigma", "1"))
    C = float(params.get("C", 0.0))
    if C < 0:
        raise ModelError("C must be nonnegative")

    if name in ("ex1", "ex2"):
        b = str(params.get("b", "1"))
        drift = [f"-x*({b})"]
        rate = f"{_fmt(C)} + 1/(1 + SUPNORM)"
        kernel = BandedKernel(
            first="1",
            down=rate,
            up=rate,
            bound=GlobalBound(max(1.0, 2 * C + 2.0)),
        )
    elif name == "ex3":
        b = str(params.get("b", "1"))
        drift = [f"-x*({b})"]
        kernel = JumpToBaseKernel(
            first="1",
            base="2*INTABS",
            up="i*INTABS",
            bound=LocalBound(const=1.0, h_coeff=2 * r, ih_coeff=r),
        )
    elif name == "ex4":
        drift = [str(params.get("drift", "-x"))]
        kernel = BandedKernel(
            first="1",
            down=f"{_fmt(C)} + 2*abs(SEG0)",
            up=f"{_fmt(C)} + abs(SEGR)",
            bound=LocalBound(const=1.0 + 2 * C, h_coeff=3.0),
        )
    else:
        raise ModelError(f"unknown builtin model {name!r}")

    return RegimeSwitchingModel(
        dim=1,
        delay=r,
        drift=drift,
        diffusion=[[sigma]],
        kernel=kernel,
        name=name,
        params=dict(params, r=r, sigma=sigma, C=C),
    )
