"""Constraints and exact (naive) evaluation of U-statistics.

The evaluators here are reference oracles: they enumerate every admissible
index tuple, in vectorized chunks, and apply the kernel.  Faster counting
for product-form kernels lives in :mod:`custats.patterns`.

Indices are 0-based internally; the public semantics follow the usual
1-based description ``i_1 < ... < i_l <= n``.
"""
from __future__ import annotations

import itertools
import math
import numbers
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import BudgetExceeded, TieError
from .kernels import Kernel, as_alphabet, encode

__all__ = [
    "INF",
    "Constraint",
    "ObservationSequence",
    "u_stat",
    "u_stat_constrained",
    "u_stat_exact_constrained",
    "u_stat_gap_gt",
    "exact_subconstraints",
    "gap_gt_expansion",
    "admissible_count",
    "iter_tuples",
    "DEFAULT_BUDGET",
    "MAX_NAIVE_ARITY",
]

INF = math.inf
DEFAULT_BUDGET = 10**9
MAX_NAIVE_ARITY = 6
# elements (tuples * arity * obs width) materialized per chunk
_CHUNK_ELEMS = 1 << 22


def _parse_gap(g):
    if isinstance(g, str):
        s = g.strip().lower()
        if s in ("inf", "infinity", "oo", "∞"):
            return INF
        g = int(s)
    if isinstance(g, float) and math.isinf(g) and g > 0:
        return INF
    if isinstance(g, numbers.Integral) or (isinstance(g, float) and g.is_integer()):
        g = int(g)
        if g < 1:
            raise ValueError(f"finite gaps must be >= 1, got {g}")
        return g
    raise ValueError(f"invalid gap {g!r}")


@dataclass(frozen=True)
class Constraint:
    """Gap bounds ``D = (d_1, ..., d_{l-1})``; ``INF`` means unconstrained."""

    gaps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gaps", tuple(_parse_gap(g) for g in self.gaps))

    @classmethod
    def unconstrained(cls, ell: int) -> "Constraint":
        if ell < 1:
            raise ValueError("ell must be >= 1")
        return cls((INF,) * (ell - 1))

    @classmethod
    def parse(cls, text: str | Sequence | "Constraint" | None, ell: int | None = None) -> "Constraint":
        """Parse ``"1,inf,2"``; ``None``/``""`` means unconstrained of arity ``ell``."""
        if isinstance(text, Constraint):
            c = text
        elif text is None or (isinstance(text, str) and not text.strip()):
            if ell is None:
                raise ValueError("arity needed to build an unconstrained constraint")
            c = cls.unconstrained(ell)
        elif isinstance(text, str):
            c = cls(tuple(p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()))
        else:
            c = cls(tuple(text))
        if ell is not None and c.ell != ell:
            raise ValueError(f"constraint has arity {c.ell}, expected {ell}")
        return c

    @property
    def ell(self) -> int:
        return len(self.gaps) + 1

    @property
    def b(self) -> int:
        return 1 + sum(1 for g in self.gaps if g == INF)

    @property
    def D_sum(self) -> int:
        return sum(g for g in self.gaps if g != INF)

    @property
    def finite_product(self) -> int:
        return math.prod(g for g in self.gaps if g != INF)

    @property
    def is_vincular(self) -> bool:
        return all(g in (1, INF) for g in self.gaps)

    @property
    def is_unconstrained(self) -> bool:
        return all(g == INF for g in self.gaps)

    def __str__(self):
        return "(" + ",".join("inf" if g == INF else str(g) for g in self.gaps) + ")"

    def to_json(self):
        return ["inf" if g == INF else g for g in self.gaps]


@dataclass(frozen=True)
class ObservationSequence:
    """Immutable realization ``x_1..x_n``.

    ``data`` holds integer codes into ``alphabet`` for finite alphabets, or
    floats when ``alphabet`` is ``None``.  Real data with ties is rejected
    when ``distinct=True`` (the default for real data).
    """

    data: np.ndarray
    alphabet: tuple | None = None
    distinct: bool = field(default=False)

    def __post_init__(self):
        arr = np.array(self.data, copy=True)
        if self.alphabet is None:
            arr = arr.astype(float)
            if self.distinct and arr.ndim == 1 and len(np.unique(arr)) != len(arr):
                raise TieError("real observations must be pairwise distinct")
        else:
            arr = arr.astype(np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= len(self.alphabet)):
                raise ValueError("codes out of range for alphabet")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_symbols(cls, seq, alphabet) -> "ObservationSequence":
        alphabet = as_alphabet(alphabet)
        return cls(encode(alphabet, seq), alphabet)

    @classmethod
    def from_reals(cls, values) -> "ObservationSequence":
        return cls(np.asarray(values, dtype=float), None, distinct=True)

    @property
    def n(self) -> int:
        return len(self.data)

    def __len__(self):
        return len(self.data)

    def symbols(self) -> list:
        if self.alphabet is None:
            return self.data.tolist()
        return [self.alphabet[c] for c in self.data]


def prepare(f: Kernel, xs, encoded: bool = False) -> np.ndarray:
    """Coerce ``xs`` to the array representation ``f.batch`` expects.

    With ``encoded=True`` the input is taken to be codes (or floats) already,
    possibly with extra trailing window dimensions.
    """
    if encoded:
        x = np.asarray(xs)
    elif isinstance(xs, ObservationSequence):
        if f.alphabet is None:
            if xs.alphabet is not None:
                raise TypeError("kernel expects real observations")
            x = xs.data
        elif xs.alphabet == f.alphabet:
            x = xs.data
        else:
            x = f.encode(xs.symbols())
    else:
        x = f.encode(xs)
    if f.order_based:
        flat = x if x.ndim == 1 else None
        if flat is not None and len(np.unique(flat)) != len(flat):
            raise TieError("order-based kernel needs pairwise distinct observations")
    return x


# ---------------------------------------------------------------------------
# tuple enumeration

def _layer_bounds(ell: int, lows: Sequence[int], highs: Sequence[float]):
    lows = list(lows)
    highs = list(highs)
    if len(lows) != ell - 1 or len(highs) != ell - 1:
        raise ValueError("need one (low, high) gap bound per gap")
    # minimal span still needed after element k
    minrem = [0] * ell
    for k in range(ell - 2, -1, -1):
        minrem[k] = minrem[k + 1] + lows[k]
    return lows, highs, minrem


def _completion_counts(n: int, ell: int, lows, highs, minrem) -> list:
    """``comp[k][p]``: number of admissible completions with element k at p."""
    comp = [None] * ell
    comp[ell - 1] = np.ones(n, dtype=float)
    pos = np.arange(n)
    for k in range(ell - 2, -1, -1):
        nxt = comp[k + 1]
        cs = np.concatenate(([0.0], np.cumsum(nxt)))
        lo = pos + lows[k]
        hi = np.minimum(pos + highs[k], n - 1 - minrem[k + 1]) if highs[k] != INF \
            else np.full(n, n - 1 - minrem[k + 1])
        lo_c = np.minimum(lo, n)
        hi_c = np.minimum(np.maximum(hi + 1, 0), n)
        comp[k] = np.where(hi_c > lo_c, cs[hi_c] - cs[np.minimum(lo_c, hi_c)], 0.0)
    return comp


def _extend(part: np.ndarray, k: int, n: int, lows, highs, minrem) -> np.ndarray:
    """Append element ``k`` to every prefix in ``part`` (shape ``(K, k)``)."""
    last = part[:, -1]
    lo = last + lows[k - 1]
    cap = n - 1 - minrem[k]
    hi = np.minimum(last + highs[k - 1], cap) if highs[k - 1] != INF else np.full_like(last, cap)
    cnt = np.maximum(hi - lo + 1, 0)
    total = int(cnt.sum())
    rows = np.repeat(np.arange(len(part)), cnt)
    offsets = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    out = np.empty((total, k + 1), dtype=part.dtype)
    out[:, :k] = part[rows]
    out[:, k] = np.repeat(lo, cnt) + offsets
    return out


def iter_tuples(n: int, ell: int, lows, highs, chunk_tuples: int = 1 << 20) -> Iterator[np.ndarray]:
    """Yield all admissible 0-based index tuples in chunks of shape ``(N, ell)``.

    Element ``k+1`` ranges over ``[i_k + lows[k], i_k + highs[k]]`` (``highs[k]``
    may be ``INF``).  Every yielded chunk has at most ``chunk_tuples`` rows
    unless a single prefix cannot be split further.
    """
    if n < 1 or ell < 1:
        return
    lows, highs, minrem = _layer_bounds(ell, lows, highs)
    if minrem[0] > n - 1:
        return
    comp = _completion_counts(n, ell, lows, highs, minrem)
    first = np.nonzero(comp[0] > 0)[0].astype(np.int64)
    if len(first) == 0:
        return
    chunk_tuples = max(1, int(chunk_tuples))

    def walk(part: np.ndarray, k: int):
        # part: prefixes of length k
        counts = comp[k - 1][part[:, -1]]
        if counts.sum() <= chunk_tuples or k == ell:
            while k < ell:
                part = _extend(part, k, n, lows, highs, minrem)
                k += 1
            if len(part):
                yield part
            return
        if len(part) == 1:
            yield from walk(_extend(part, k, n, lows, highs, minrem), k + 1)
            return
        cum = np.cumsum(counts)
        groups = np.floor((cum - counts) / chunk_tuples).astype(np.int64)
        cuts = np.nonzero(np.diff(groups))[0] + 1
        if len(cuts) == 0:
            cuts = [len(part) // 2]
        for piece in np.split(part, cuts):
            yield from walk(piece, k)

    yield from walk(first[:, None], 1)


def admissible_count(n: int, ell: int, lows, highs) -> float:
    """Number of admissible tuples (as a float, used for budget checks)."""
    if n < 1:
        return 0.0
    lows, highs, minrem = _layer_bounds(ell, lows, highs)
    if minrem[0] > n - 1:
        return 0.0
    return float(_completion_counts(n, ell, lows, highs, minrem)[0].sum())


def _sum_kernel(f: Kernel, x: np.ndarray, lows, highs, budget: float, max_arity: int):
    ell = f.arity
    n = len(x)
    if ell > max_arity:
        raise BudgetExceeded(f"naive evaluation limited to arity <= {max_arity}, got {ell}")
    if n < ell:
        return 0 if f.integer_valued else 0.0
    terms = admissible_count(n, ell, lows, highs)
    if terms > budget:
        raise BudgetExceeded(f"{terms:.3g} index tuples exceed the budget {budget:.3g}")
    width = int(np.prod(x.shape[1:])) if x.ndim > 1 else 1
    chunk = max(1, _CHUNK_ELEMS // (ell * width))
    if f.integer_valued:
        total = 0
        for tup in iter_tuples(n, ell, lows, highs, chunk):
            vals = np.asarray(f.batch(x[tup]), dtype=np.int64)
            if len(vals) == 0:
                continue
            bound = int(np.abs(vals).max()) * len(vals)
            total += int(vals.sum()) if bound < 2**62 else int(vals.astype(object).sum())
        return total
    partial = []
    for tup in iter_tuples(n, ell, lows, highs, chunk):
        partial.append(float(np.sum(np.asarray(f.batch(x[tup]), dtype=float))))
    return math.fsum(partial)


def _check_constraint(f: Kernel, D: Constraint):
    if D.ell != f.arity:
        raise ValueError(f"constraint arity {D.ell} != kernel arity {f.arity}")


def u_stat(f: Kernel, xs, *, budget: float = DEFAULT_BUDGET, max_arity: int = MAX_NAIVE_ARITY,
           encoded: bool = False):
    """Sum of ``f`` over all increasing index tuples."""
    x = prepare(f, xs, encoded)
    ell = f.arity
    return _sum_kernel(f, x, [1] * (ell - 1), [INF] * (ell - 1), budget, max_arity)


def u_stat_constrained(f: Kernel, D: Constraint, xs, *, budget: float = DEFAULT_BUDGET,
                       max_arity: int = MAX_NAIVE_ARITY, encoded: bool = False):
    """Sum over tuples with ``i_{j+1} - i_j <= d_j`` for every finite ``d_j``."""
    _check_constraint(f, D)
    x = prepare(f, xs, encoded)
    return _sum_kernel(f, x, [1] * len(D.gaps), list(D.gaps), budget, max_arity)


def u_stat_exact_constrained(f: Kernel, D: Constraint, xs, *, budget: float = DEFAULT_BUDGET,
                             max_arity: int = MAX_NAIVE_ARITY, encoded: bool = False):
    """Sum over tuples with ``i_{j+1} - i_j = d_j`` for every finite ``d_j``."""
    _check_constraint(f, D)
    x = prepare(f, xs, encoded)
    lows = [1 if g == INF else g for g in D.gaps]
    return _sum_kernel(f, x, lows, list(D.gaps), budget, max_arity)


def u_stat_gap_gt(f: Kernel, m: int, xs, *, budget: float = DEFAULT_BUDGET,
                  max_arity: int = MAX_NAIVE_ARITY, encoded: bool = False):
    """Sum over tuples whose consecutive gaps all exceed ``m``."""
    if m < 0:
        raise ValueError("m must be >= 0")
    x = prepare(f, xs, encoded)
    ell = f.arity
    return _sum_kernel(f, x, [m + 1] * (ell - 1), [INF] * (ell - 1), budget, max_arity)


def exact_subconstraints(D: Constraint) -> list:
    """All ``D'`` with ``1 <= d'_j <= d_j`` on finite entries, ``INF`` kept."""
    ranges = [range(1, g + 1) if g != INF else (INF,) for g in D.gaps]
    return [Constraint(tuple(c)) for c in itertools.product(*ranges)]


def gap_gt_expansion(ell: int, m: int) -> list:
    """Signed constraints ``(sign, D_J)`` whose constrained sums give the gap > m sum.

    ``D_J`` has ``d_j = m`` for ``j`` in ``J`` and ``INF`` otherwise.  With
    ``m = 0`` every nonempty ``J`` contributes nothing and is dropped.
    """
    out = []
    for r in range(ell):
        if m == 0 and r > 0:
            break
        for J in itertools.combinations(range(ell - 1), r):
            gaps = tuple(m if j in J else INF for j in range(ell - 1))
            out.append(((-1) ** r, Constraint(gaps)))
    return out
