"""Block structure of a constraint and the reduction to window kernels.

A constraint splits the slots ``1..l`` into ``b`` blocks separated by the
unbounded gaps.  Inside a block every gap is fixed (exact constraint), so the
block is determined by its first index and fits in a window of width
``M > D_sum``.  An exactly constrained U-statistic over ``x`` is then an
ordinary U-statistic of arity ``b`` over the windows
``Y_i = (x_i, ..., x_{i+M-1})``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import INF, Constraint, DEFAULT_BUDGET, exact_subconstraints, prepare, u_stat
from .errors import SequenceTooShort, WindowTooSmall
from .kernels import Kernel

__all__ = [
    "BlockStructure",
    "block_structure",
    "ReducedKernel",
    "reduced_kernel",
    "LiftedSequence",
    "lift",
    "reduced_u_stat",
    "lifted_dependence",
    "common_window",
]


@dataclass(frozen=True)
class BlockStructure:
    """Blocks of a constraint.  ``beta`` is 1-based and excludes the sentinel."""

    b: int
    beta: tuple
    ell_q: tuple
    t: tuple
    u: tuple
    v: tuple
    D_sum: int
    M: int

    @property
    def beta_sentinel(self) -> tuple:
        return self.beta + (sum(self.ell_q) + 1,)

    def slot_layout(self) -> list:
        """``(block, window position)`` for every slot, both 0-based."""
        out = []
        for q in range(self.b):
            for r in range(self.ell_q[q]):
                out.append((q, self.v[q] + self.t[q][r]))
        return out

    def to_json(self) -> dict:
        return {"b": self.b, "beta": list(self.beta), "ell_q": list(self.ell_q),
                "t": [list(x) for x in self.t], "u": list(self.u), "v": list(self.v),
                "D_sum": self.D_sum, "M": self.M}


def block_structure(D: Constraint, M: int | None = None) -> BlockStructure:
    """Blocks, offsets and the default window width ``D_sum + 1``."""
    ell = D.ell
    beta = [1] + [j + 1 for j in range(1, ell) if D.gaps[j - 1] == INF]
    bounds = beta + [ell + 1]
    ell_q, t, u = [], [], []
    for q in range(len(beta)):
        lq = bounds[q + 1] - bounds[q]
        offs = [0]
        for r in range(1, lq):
            # gap between slots beta_q + r - 1 and beta_q + r (1-based)
            offs.append(offs[-1] + D.gaps[bounds[q] + r - 2])
        ell_q.append(lq)
        t.append(tuple(offs))
        u.append(offs[-1])
    v = [sum(u[:q]) for q in range(len(u))]
    D_sum = D.D_sum
    if M is None:
        M = D_sum + 1
    if M <= D_sum:
        raise WindowTooSmall(f"window width {M} must exceed D_sum = {D_sum}")
    return BlockStructure(len(beta), tuple(beta), tuple(ell_q), tuple(t), tuple(u), tuple(v),
                          D_sum, int(M))


def lifted_dependence(m: int, M: int) -> int:
    """Dependence range of the window sequence built from an m-dependent one."""
    return m + M - 1


def common_window(constraints) -> int:
    """Single window width that serves every constraint in a joint analysis."""
    return max(D.D_sum for D in constraints) + 1


class ReducedKernel(Kernel):
    """Kernel ``g`` of arity ``b`` on windows of width ``M``.

    With ``exact=True`` it is ``g_{D=}``: slot ``i`` of ``f`` reads window
    position ``v_q + t_{q,r}`` of block ``q``.  With ``exact=False`` it is
    ``g_D``, the sum of ``g_{D'=}`` over the exact sub-constraints of ``D``,
    all on the same window width.
    """

    def __init__(self, f: Kernel, D: Constraint, M: int | None = None, exact: bool = True):
        if D.ell != f.arity:
            raise ValueError("constraint and kernel arity differ")
        self.base = f
        self.D = D
        self.exact = exact
        self.structure = block_structure(D, M)
        self.M = self.structure.M
        self.arity = self.structure.b
        self.alphabet = f.alphabet
        self.integer_valued = f.integer_valued
        self.order_based = f.order_based
        parts = [D] if exact else exact_subconstraints(D)
        self.layouts = []
        for Dp in parts:
            bs = block_structure(Dp, self.M)
            lay = bs.slot_layout()
            self.layouts.append((np.array([q for q, _ in lay]), np.array([p for _, p in lay])))

    def __repr__(self):
        kind = "exact" if self.exact else "bounded"
        return f"ReducedKernel({self.base!r}, D={self.D}, M={self.M}, {kind})"

    def batch(self, vals):
        vals = np.asarray(vals)  # (N, b, M, ...)
        out = None
        for blocks, pos in self.layouts:
            v = self.base.batch(vals[:, blocks, pos])
            out = v if out is None else out + v
        return out

    def table(self):
        raise TypeError("window kernels are not tabulated; use batch()")


def reduced_kernel(f: Kernel, D: Constraint, M: int | None = None, exact: bool = True) -> ReducedKernel:
    return ReducedKernel(f, D, M, exact)


@dataclass(frozen=True)
class LiftedSequence:
    """Windows of width ``M`` over a base sequence (a strided view, no copy).

    With ``pad > 0`` the base is extended by ``pad`` filler entries so that
    the last windows exist; filler is never read by a reduced kernel used
    with the matching index shift.
    """

    base: np.ndarray
    M: int
    pad: int = 0

    @property
    def windows(self) -> np.ndarray:
        x = self.base
        if self.pad:
            fill = np.zeros((self.pad,) + x.shape[1:], dtype=x.dtype)
            if x.dtype.kind == "f":
                fill[...] = np.nan
            x = np.concatenate([x, fill])
        w = sliding_window_view(x, self.M, axis=0)
        if x.ndim > 1:
            w = np.moveaxis(w, -1, 1)
        return w

    def __len__(self):
        return len(self.base) + self.pad - self.M + 1


def lift(xs, M: int, *, pad: int = 0) -> LiftedSequence:
    """Windows ``Y_i = (x_i..x_{i+M-1})``; ``n - M + 1`` of them (plus ``pad``)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if hasattr(xs, "data") and hasattr(xs, "alphabet"):
        x = xs.data
    elif isinstance(xs, str):
        x = np.array(list(xs))
    else:
        x = np.asarray(xs)
    if len(x) + pad < M:
        raise SequenceTooShort(f"sequence of length {len(x)} is shorter than window {M}")
    return LiftedSequence(x, int(M), int(pad))


def reduced_u_stat(f: Kernel, D: Constraint, xs, M: int | None = None, *, exact: bool = True,
                   budget: float = DEFAULT_BUDGET):
    """Evaluate the (exactly) constrained statistic through the window reduction.

    Sums ``U_{n - D'_sum}(g_{D'=}; Y)`` over the exact sub-constraints ``D'``
    (just ``D`` itself when ``exact``), with value 0 whenever ``n < D'_sum``.
    """
    x = prepare(f, xs)
    n = len(x)
    parts = [D] if exact else exact_subconstraints(D)
    M = block_structure(D, M).M
    total = 0 if f.integer_valued else 0.0
    for Dp in parts:
        g = ReducedKernel(f, Dp, M, exact=True)
        n_eff = n - Dp.D_sum
        if n_eff < g.arity:
            continue
        pad = max(0, n_eff + M - 1 - n)
        Y = lift(x, M, pad=pad).windows[:n_eff]
        total += u_stat(g, Y, budget=budget, encoded=True)
    return total
