"""Rate kernels q_ij(phi) driving the regime jump process.

A kernel enumerates, for every regime i >= 1, the finite support of target
regimes j != i together with segment expressions for the rates.  Regimes live
on the positive integers; q_ii is identically zero by convention.  Kernels
also carry a bound descriptor: either a global dominating constant M for the
total rate q_i, or a local bound M_H valid while the segment sup-norm stays
below H (the thinning simulator uses whichever is available).

Forms:

* ``banded-birth-death`` — q_12 given by ``first``; for i >= 2 the row is
  {i-1: down, i+1: up}.
* ``jump-to-base``      — q_12 given by ``first``; for i >= 2 the row is
  {1: base, i+1: up}.
* ``dense-truncated`` / ``expression-table`` — explicit sparse table of
  (i, j) -> expression, optionally declared complete up to a level K.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import KernelError
from .expressions import Expr, SegEnv, parse_segment_expr

__all__ = [
    "GlobalBound",
    "LocalBound",
    "RateKernel",
    "BandedKernel",
    "JumpToBaseKernel",
    "TableKernel",
    "TruncatedKernel",
    "point_version",
]


@dataclass(frozen=True)
class GlobalBound:
    """q_i(phi) <= M for all (phi, i)."""

    M: float

    def value(self, H, i):
        return self.M

    def to_json(self):
        return {"type": "global", "M": self.M}


@dataclass(frozen=True)
class LocalBound:
    """q_i(phi) <= const + h_coeff*H + ih_coeff*i*H whenever ||phi|| <= H.

    The affine-in-(H, i*H) form covers the built-in kernels; regime-dependent
    growth (ih_coeff > 0) reflects kernels whose total rate scales with i.
    """

    const: float = 0.0
    h_coeff: float = 0.0
    ih_coeff: float = 0.0

    def value(self, H, i):
        return self.const + self.h_coeff * H + self.ih_coeff * np.asarray(i) * H

    def to_json(self):
        return {
            "type": "local",
            "const": self.const,
            "h_coeff": self.h_coeff,
            "ih_coeff": self.ih_coeff,
        }


def bound_from_json(obj) -> GlobalBound | LocalBound:
    if obj.get("type") == "global":
        return GlobalBound(float(obj["M"]))
    if obj.get("type") == "local":
        return LocalBound(
            float(obj.get("const", 0.0)),
            float(obj.get("h_coeff", 0.0)),
            float(obj.get("ih_coeff", 0.0)),
        )
    raise KernelError(f"unknown bound descriptor {obj!r}")


def _as_expr(e) -> Expr:
    return e if isinstance(e, Expr) else parse_segment_expr(e)


class RateKernel:
    """Base class; subclasses define support and row evaluation."""

    form: str = "abstract"
    bound: GlobalBound | LocalBound

    def support(self, i: int) -> List[int]:
        raise NotImplementedError

    def row(self, env: SegEnv, i: int) -> Tuple[List[Tuple[int, float]], float]:
        """Rates out of regime i for a single segment environment.

        Returns (ascending [(j, q_ij)], q_i).  Raises KernelError on a
        negative evaluated rate.
        """
        row = []
        total = 0.0
        for j, expr in self.row_exprs(i):
            q = float(expr.eval(env))
            if q < 0:
                raise KernelError(f"negative rate q[{i},{j}] = {q}")
            row.append((j, q))
            total += q
        return row, total

    def row_exprs(self, i: int) -> List[Tuple[int, Expr]]:
        raise NotImplementedError

    def max_support(self, i_max: Optional[int] = None) -> int:
        raise NotImplementedError

    def row_batch(self, env: SegEnv, regimes: np.ndarray):
        """Vectorised rows for a batch of lanes sharing one SegEnv.

        ``env`` fields are (B,) arrays; ``regimes`` is a (B,) int array.
        Returns (targets (B, S) int with -1 padding, rates (B, S) >= 0,
        totals (B,)).  Row entries are ascending in j per lane.
        """
        regimes = np.asarray(regimes)
        B = regimes.shape[0]
        S = self.max_support(int(regimes.max()) if B else 1)
        targets = np.full((B, S), -1, dtype=np.int64)
        rates = np.zeros((B, S), dtype=float)
        for i in np.unique(regimes):
            mask = regimes == i
            sub = _subset_env(env, mask)
            for col, (j, expr) in enumerate(self.row_exprs(int(i))):
                q = np.broadcast_to(np.asarray(expr.eval(sub), dtype=float), (int(mask.sum()),))
                if np.any(q < 0):
                    raise KernelError(f"negative rate in row of regime {i}")
                targets[mask, col] = j
                rates[mask, col] = q
        return targets, rates, rates.sum(axis=1)


def _banded_row_batch(env: SegEnv, regimes, first: Expr, low: Expr, up: Optional[Expr],
                      up_target: str = "next", low_target: str = "prev"):
    """Shared vectorised row evaluation for the two support-2 kernel forms.

    Evaluates the (i-aware) expressions once over the whole batch; lanes in
    regime 1 get the single row {2: first}, others get the low/up pair with
    low at i-1 ("prev") or 1 ("base").
    """
    regimes = np.asarray(regimes)
    B = regimes.shape[0]
    at_base = regimes == 1
    q_first = np.broadcast_to(np.asarray(first.eval(env), dtype=float), (B,))
    q_low = np.broadcast_to(np.asarray(low.eval(env), dtype=float), (B,))
    if up is not None:
        q_up = np.broadcast_to(np.asarray(up.eval(env), dtype=float), (B,))
    else:
        q_up = np.zeros(B)
    if np.any(q_first[at_base] < 0) or np.any(q_low[~at_base] < 0) or np.any(q_up[~at_base] < 0):
        raise KernelError("negative evaluated rate in banded kernel")
    low_j = np.where(at_base, 2, regimes - 1 if low_target == "prev" else 1)
    up_j = np.where(at_base, -1, regimes + 1 if up is not None else -1)
    targets = np.stack([low_j, up_j], axis=1).astype(np.int64)
    rates = np.stack([np.where(at_base, q_first, q_low),
                      np.where(at_base | (up is None), 0.0, q_up)], axis=1)
    return targets, rates, rates.sum(axis=1)


def _subset_env(env: SegEnv, mask) -> SegEnv:
    def cut(v):
        a = np.asarray(v)
        return a[mask] if a.ndim else a

    return SegEnv(
        cut(env.seg0), cut(env.segr), cut(env.supnorm), cut(env.intabs),
        np.asarray(env.i)[mask] if np.ndim(env.i) else env.i, dim=env.dim,
    )


class BandedKernel(RateKernel):
    form = "banded-birth-death"

    def __init__(self, first, down, up, bound):
        self.first = _as_expr(first)
        self.down = _as_expr(down)
        self.up = None if up is None else _as_expr(up)
        self.bound = bound

    def support(self, i):
        if i == 1:
            return [2]
        return [i - 1] + ([i + 1] if self.up is not None else [])

    def row_exprs(self, i):
        if i == 1:
            return [(2, self.first)]
        out = [(i - 1, self.down)]
        if self.up is not None:
            out.append((i + 1, self.up))
        return out

    def max_support(self, i_max=None):
        return 2

    def row_batch(self, env, regimes):
        return _banded_row_batch(env, regimes, self.first, self.down, self.up,
                                 up_target="next")

    def to_json(self):
        out = {"form": self.form, "first": self.first.text, "down": self.down.text}
        if self.up is not None:
            out["up"] = self.up.text
        return out


class JumpToBaseKernel(RateKernel):
    form = "jump-to-base"

    def __init__(self, first, base, up, bound):
        self.first = _as_expr(first)
        self.base = _as_expr(base)
        self.up = None if up is None else _as_expr(up)
        self.bound = bound

    def support(self, i):
        if i == 1:
            return [2]
        return [1] + ([i + 1] if self.up is not None else [])

    def row_exprs(self, i):
        if i == 1:
            return [(2, self.first)]
        out = [(1, self.base)]
        if self.up is not None:
            out.append((i + 1, self.up))
        return out

    def max_support(self, i_max=None):
        return 2

    def row_batch(self, env, regimes):
        return _banded_row_batch(env, regimes, self.first, self.base, self.up,
                                 up_target="next", low_target="base")

    def to_json(self):
        out = {"form": self.form, "first": self.first.text, "base": self.base.text}
        if self.up is not None:
            out["up"] = self.up.text
        return out


class TableKernel(RateKernel):
    """Explicit sparse table; doubles as the dense-truncated form."""

    def __init__(self, entries: Dict[Tuple[int, int], object], bound, K: Optional[int] = None,
                 form: str = "expression-table"):
        self.entries: Dict[int, List[Tuple[int, Expr]]] = {}
        for (i, j), e in entries.items():
            if i == j:
                raise KernelError("q_ii must be identically zero; drop diagonal entries")
            if i < 1 or j < 1:
                raise KernelError("regimes are positive integers")
            self.entries.setdefault(i, []).append((j, _as_expr(e)))
        for i in self.entries:
            self.entries[i].sort(key=lambda p: p[0])
        self.K = K
        self.bound = bound
        self.form = form

    def support(self, i):
        return [j for j, _ in self.entries.get(i, [])]

    def row_exprs(self, i):
        return self.entries.get(i, [])

    def max_support(self, i_max=None):
        if not self.entries:
            return 1
        return max(len(v) for v in self.entries.values())

    def to_json(self):
        out = {
            "form": self.form,
            "entries": {f"{i},{j}": e.text for i, row in self.entries.items() for j, e in row},
        }
        if self.K is not None:
            out["K"] = self.K
        return out


class TruncatedKernel(RateKernel):
    """Wrapper dropping every transition that would leave {1, ..., K}."""

    def __init__(self, base: RateKernel, K: int):
        if K < 1:
            raise KernelError("truncation level must be >= 1")
        self.base = base
        self.K = K
        self.bound = base.bound
        self.form = f"truncated({base.form}, K={K})"

    def support(self, i):
        return [j for j in self.base.support(i) if j <= self.K]

    def row_exprs(self, i):
        return [(j, e) for j, e in self.base.row_exprs(i) if j <= self.K]

    def max_support(self, i_max=None):
        return self.base.max_support(i_max)

    def row_batch(self, env, regimes):
        targets, rates, _tot = self.base.row_batch(env, regimes)
        keep = (targets >= 1) & (targets <= self.K)
        targets = np.where(keep, targets, -1)
        rates = np.where(keep, rates, 0.0)
        return targets, rates, rates.sum(axis=1)

    def to_json(self):
        return {"form": "truncated", "K": self.K, "base": self.base.to_json()}


def kernel_from_json(obj) -> RateKernel:
    bound = bound_from_json(obj.get("bound", {"type": "global", "M": float("inf")}))
    form = obj.get("form")
    if form == "banded-birth-death":
        return BandedKernel(obj["first"], obj["down"], obj.get("up"), bound)
    if form == "jump-to-base":
        return JumpToBaseKernel(obj["first"], obj["base"], obj.get("up"), bound)
    if form in ("dense-truncated", "expression-table"):
        entries = {}
        for key, text in obj["entries"].items():
            i_str, j_str = key.split(",")
            entries[(int(i_str), int(j_str))] = text
        return TableKernel(entries, bound, K=obj.get("K"), form=form)
    if form == "truncated":
        return TruncatedKernel(kernel_from_json(obj["base"]), int(obj["K"]))
    raise KernelError(f"unknown kernel form {form!r}")


def kernel_to_json(kernel: RateKernel):
    out = kernel.to_json()
    out["bound"] = kernel.bound.to_json()
    return out


# ---------------------------------------------------------------------------
# Constant-segment reduction (past-independent version of a kernel)
# ---------------------------------------------------------------------------

def point_version(expr: Expr, delay: float) -> Expr:
    """Segment expression evaluated as if phi were constantly equal to x.

    Substitutes SEG0 -> x, SEGR -> x, SUPNORM -> abs(x), INTABS -> delay *
    abs(x).  This is the reduction used to hand a past-dependent kernel to
    the elliptic solver, which only accepts past-independent rates.
    """
    from .expressions import Bin, Call, Neg, Num, Sym, Var, Expr as _Expr, POINT

    def sub(node):
        if isinstance(node, Num):
            return node
        if isinstance(node, Sym):
            if node.name == "SUPNORM":
                return Call("abs", (Var("x", None),))
            if node.name == "INTABS":
                return Bin("*", Num(delay), Call("abs", (Var("x", None),)))
            return node
        if isinstance(node, Var):
            if node.name in ("SEG0", "SEGR"):
                return Var("x", node.index)
            return node
        if isinstance(node, Neg):
            return Neg(sub(node.arg))
        if isinstance(node, Bin):
            return Bin(node.op, sub(node.left), sub(node.right))
        if isinstance(node, Call):
            return Call(node.func, tuple(sub(a) for a in node.args))
        raise TypeError(node)

    root = sub(expr.root)
    return _Expr(root=root, kind=POINT, text=str(root))
