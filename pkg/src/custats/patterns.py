"""Fast counting of constrained word and permutation-pattern occurrences.

The word counter is a layered dynamic program: ``c_k(i)`` counts partial
occurrences of ``w_1..w_k`` ending at ``i``, and
``c_k(i) = 1{x_i = w_k} * sum_{i - d <= j < i} c_{k-1}(j)`` (window sums by
prefix sums; an unbounded gap uses the full prefix; an exact gap reads the
single position ``i - d``).  The same recursion with real weights
``h_k(x_i)`` in place of the indicator handles any product-form kernel, and
general finite kernels are sums of word indicators.

Batch versions work on a 2-D array of replicates and return the statistic
for every prefix length, which is what the simulation harness needs.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .core import INF, Constraint, ObservationSequence, u_stat_constrained, \
    u_stat_exact_constrained
from .errors import TieError
from .kernels import Kernel, PermPatternKernel, ProductKernel, WordKernel, as_alphabet, encode

__all__ = [
    "count_word_dp",
    "count_perm_pattern",
    "count_inversions",
    "word_asymptotics",
    "perm_asymptotics",
    "product_prefix_counts",
    "inversion_prefix_counts",
    "prefix_statistics",
    "supports_fast_prefix",
]

_INT_SAFE = 2**62


def _window_sums(c: np.ndarray, d, exact: bool) -> np.ndarray:
    """``out[..., i] = sum of c[..., j]`` over the admissible predecessors ``j`` of ``i``."""
    n = c.shape[-1]
    if d == INF:
        S = np.cumsum(c, axis=-1)
        out = np.zeros_like(c)
        out[..., 1:] = S[..., :-1]
        return out
    if exact:
        out = np.zeros_like(c)
        if d < n:
            out[..., d:] = c[..., :n - d]
        return out
    S = np.concatenate([np.zeros(c.shape[:-1] + (1,), dtype=c.dtype), np.cumsum(c, axis=-1)], axis=-1)
    idx = np.arange(n)
    lo = np.maximum(idx - d, 0)
    return S[..., idx] - S[..., lo]


def _product_layers(codes: np.ndarray, factors, gaps, exact: bool, dtype) -> np.ndarray:
    c = np.asarray(factors[0], dtype=dtype)[codes]
    for k in range(1, len(factors)):
        c = np.asarray(factors[k], dtype=dtype)[codes] * _window_sums(c, gaps[k - 1], exact)
    return c


def _safe_dtype(n: int, ell: int, factors, integer: bool):
    if not integer:
        return float
    peak = 1
    for h in factors:
        peak *= max(1, int(np.abs(np.asarray(h)).max()))
    return np.int64 if math.comb(max(n, ell), ell) * peak < _INT_SAFE else object


def _as_word_codes(w, alphabet):
    letters = list(w) if not isinstance(w, (list, tuple)) else list(w)
    return encode(alphabet, letters)


def count_word_dp(w, D: Constraint | None, text, mode: str = "bounded", alphabet=None) -> int:
    """Occurrences of the word ``w`` in ``text`` under the gap constraint ``D``.

    ``mode`` is ``"bounded"`` (gaps at most ``d_j``) or ``"exact"`` (gaps equal
    to ``d_j``).  Returns an exact Python integer.
    """
    if mode not in ("bounded", "exact"):
        raise ValueError("mode must be 'bounded' or 'exact'")
    letters = list(w)
    ell = len(letters)
    if ell == 0:
        raise ValueError("word must be nonempty")
    D = Constraint.unconstrained(ell) if D is None else D
    if D.ell != ell:
        raise ValueError("constraint arity differs from word length")
    if isinstance(text, ObservationSequence):
        if alphabet is None:
            alphabet = text.alphabet
        text = text.symbols()
    if alphabet is None:
        seen = list(text) if not isinstance(text, np.ndarray) else text.tolist()
        alphabet = sorted(set(map(str, letters)) | set(map(str, seen))) \
            if isinstance(text, str) else sorted(set(letters) | set(seen), key=str)
    alphabet = as_alphabet(alphabet)
    wc = _as_word_codes(letters, alphabet)
    codes = encode(alphabet, text)
    n = len(codes)
    if n < ell:
        return 0
    A = len(alphabet)
    factors = [np.eye(A, dtype=np.int64)[c] for c in wc]
    dtype = _safe_dtype(n, ell, factors, True)
    if dtype is object:
        factors = [np.array([int(v) for v in h], dtype=object) for h in factors]
    c = _product_layers(codes, factors, D.gaps, mode == "exact", dtype)
    return int(sum(c.tolist())) if dtype is object else int(c.sum())


def product_prefix_counts(codes: np.ndarray, factors, D: Constraint, *, exact: bool = False,
                          integer: bool = True) -> np.ndarray:
    """``U_k`` for every prefix length ``k = 1..n`` of every row of ``codes``.

    ``codes`` has shape ``(R, n)`` (or ``(n,)``).  Integer results are kept in
    int64 when they provably fit and fall back to float64 otherwise.
    """
    codes = np.asarray(codes)
    n = codes.shape[-1]
    dtype = _safe_dtype(n, len(factors), factors, integer)
    if dtype is object:
        dtype = float
    c = _product_layers(codes, factors, D.gaps, exact, dtype)
    return np.cumsum(c, axis=-1)


# ---------------------------------------------------------------------------
# permutations

def _ranks(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, axis=-1, kind="stable")
    r = np.empty_like(order)
    np.put_along_axis(r, order, np.arange(x.shape[-1])[None, :].repeat(x.shape[0], 0)
                      if x.ndim == 2 else np.arange(len(x)), axis=-1)
    return r


def count_inversions(x) -> int:
    """Number of pairs ``i < j`` with ``x_i > x_j`` (merge counting, exact)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if len(np.unique(x)) != n:
        raise TieError("inversion count needs pairwise distinct values")
    if n < 2:
        return 0
    r = _ranks(x).astype(np.int64)
    idx = np.arange(n)
    total = 0
    w = 1
    while w < n:
        block = idx // (2 * w)
        is_left = (idx // w) % 2 == 0
        key = block * n + r
        left_keys = np.sort(key[is_left])
        right = ~is_left
        rk = key[right]
        # left elements of the same block that exceed each right element
        block_end = np.searchsorted(left_keys, (block[right] + 1) * n, side="left")
        above = np.searchsorted(left_keys, rk, side="right")
        total += int((block_end - above).sum())
        w *= 2
    return total


def inversion_prefix_counts(x: np.ndarray) -> np.ndarray:
    """Inversion counts of every prefix, row-wise (vectorized Fenwick tree)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    R, n = x.shape
    r = _ranks(x).astype(np.int64) + 1  # 1-based ranks
    tree = np.zeros((R, n + 1), dtype=np.int64)
    rows = np.arange(R)
    greater_before = np.zeros((R, n), dtype=np.int64)
    for j in range(n):
        idx = r[:, j].copy()
        s = np.zeros(R, dtype=np.int64)
        while True:
            live = idx > 0
            if not live.any():
                break
            s += np.where(live, tree[rows, idx * live], 0)
            idx = np.where(live, idx - (idx & -idx), 0)
        greater_before[:, j] = j - s
        idx = r[:, j].copy()
        while True:
            live = idx <= n
            if not live.any():
                break
            tree[rows[live], idx[live]] += 1
            idx = np.where(live, idx + (idx & -idx), n + 1)
    return np.cumsum(greater_before, axis=1)


def count_perm_pattern(tau, D: Constraint | None, pi, *, budget: float = 1e9) -> int:
    """Occurrences of the pattern ``tau`` in the sequence ``pi`` under ``D``."""
    f = PermPatternKernel(tau)
    D = Constraint.unconstrained(f.arity) if D is None else D
    x = np.asarray(pi, dtype=float)
    if len(np.unique(x)) != len(x):
        raise TieError("permutation entries must be pairwise distinct")
    n = len(x)
    if f.arity == 1:
        return n
    if f.arity == 2 and D.is_unconstrained:
        inv = count_inversions(x)
        return inv if f.tau == (2, 1) else math.comb(n, 2) - inv
    return int(u_stat_constrained(f, D, x, budget=budget))


# ---------------------------------------------------------------------------
# closed forms

def word_asymptotics(w, D: Constraint | None, p=None, alphabet=None, *, exact_constraint=False):
    """``mu_D``, ``sigma2`` and ``b`` for word counts in i.i.d. strings."""
    from .models import IIDFinite
    from .moments import sigma2

    letters = list(w)
    if alphabet is None:
        alphabet = "01" if set(letters) <= {"0", "1"} else sorted(set(letters))
    alphabet = as_alphabet(alphabet)
    model = IIDFinite(alphabet, p)
    D = Constraint.unconstrained(len(letters)) if D is None else D
    wc = _as_word_codes(letters, alphabet)
    prob = math.prod((model.p_exact[c] for c in wc), start=Fraction(1))
    weight = 1 if exact_constraint else D.finite_product
    report = sigma2(WordKernel(letters, alphabet), D, model, exact_constraint=exact_constraint)
    if len(alphabet) >= 2 and not float(report.sigma2) > 0:
        raise ArithmeticError("word counts over two or more letters must be non-degenerate")
    return {"mu_D": prob * weight, "sigma2": report.sigma2, "b": D.b, "report": report}


def perm_asymptotics(tau, D: Constraint | None, *, exact_constraint=False):
    """``mu_D``, ``sigma2`` and ``b`` for pattern counts in random permutations."""
    from .models import IIDUniform01
    from .moments import sigma2

    f = PermPatternKernel(tau)
    D = Constraint.unconstrained(f.arity) if D is None else D
    weight = 1 if exact_constraint else D.finite_product
    mu_D = Fraction(weight, math.factorial(f.arity))
    report = sigma2(f, D, IIDUniform01(), exact_constraint=exact_constraint)
    if f.arity >= 2 and not float(report.sigma2) > 0:
        raise ArithmeticError("pattern counts of length >= 2 must be non-degenerate")
    return {"mu_D": mu_D, "sigma2": report.sigma2, "b": D.b, "report": report}


# ---------------------------------------------------------------------------
# batch prefix statistics used by the simulation harness

def _table_words(f: Kernel):
    T = np.asarray(f.table())
    A = f.A
    nz = np.argwhere(T != 0)
    eye = np.eye(A, dtype=np.int64 if T.dtype.kind in "iub" else float)
    return [(T[tuple(w)], [eye[c] for c in w]) for w in nz]


def supports_fast_prefix(f: Kernel, D: Constraint) -> bool:
    if f.alphabet is not None:
        return True
    if f.arity == 1:
        return True
    return isinstance(f, PermPatternKernel) and f.arity == 2 and D.is_unconstrained


def prefix_statistics(f: Kernel, D: Constraint | None, X: np.ndarray, *,
                      exact_constraint: bool = False, ns=None, budget: float = 1e9) -> np.ndarray:
    """Statistic for prefixes of every row of ``X`` (codes or reals).

    Returns shape ``(R, n)`` with column ``k - 1`` holding ``U_k``, or
    ``(R, len(ns))`` when ``ns`` is given.  Product kernels and finite tables
    use the layered DP, 2-patterns use a Fenwick tree, arity 1 is a cumulative
    sum; anything else falls back to naive evaluation at the requested ``ns``.
    """
    X = np.atleast_2d(np.asarray(X))
    R, n = X.shape
    D = Constraint.unconstrained(f.arity) if D is None else D
    full = None
    if f.arity == 1:
        vals = np.asarray(f.batch(X.reshape(-1, 1)), dtype=np.int64 if f.integer_valued else float)
        full = np.cumsum(vals.reshape(R, n), axis=1)
    elif isinstance(f, ProductKernel):
        full = product_prefix_counts(X, f.factors, D, exact=exact_constraint,
                                     integer=f.integer_valued)
    elif f.alphabet is not None:
        full = None
        for coef, factors in _table_words(f):
            part = product_prefix_counts(X, factors, D, exact=exact_constraint,
                                         integer=f.integer_valued)
            full = coef * part if full is None else full + coef * part
        if full is None:
            full = np.zeros((R, n), dtype=np.int64)
    elif isinstance(f, PermPatternKernel) and f.arity == 2 and D.is_unconstrained:
        inv = inversion_prefix_counts(X)
        if f.tau == (2, 1):
            full = inv
        else:
            k = np.arange(1, n + 1)
            full = k * (k - 1) // 2 - inv
    if full is not None:
        if ns is None:
            return full
        ns = np.asarray(ns, dtype=np.int64)
        out = np.zeros((R, len(ns)), dtype=full.dtype)
        pos = ns > 0
        out[:, pos] = full[:, ns[pos] - 1]
        return out
    if ns is None:
        ns = np.arange(1, n + 1)
    evaluator = u_stat_exact_constrained if exact_constraint else u_stat_constrained
    out = np.zeros((R, len(ns)), dtype=np.int64 if f.integer_valued else float)
    for r in range(R):
        for k, nn in enumerate(ns):
            out[r, k] = evaluator(f, D, X[r, :nn], budget=budget, encoded=True)
    return out
