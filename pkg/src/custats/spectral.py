"""Orthogonal decomposition of kernels over i.i.d. letters, and degenerate limits.

For letters with distribution ``p`` the space ``V`` of functions on ``A^l``
splits orthogonally into ``V_B`` (``B`` a subset of the slots): functions
that are centered in every slot of ``B`` and constant in the others.  The
projection onto ``V_B`` is the tensor product of the centering operator
``Q = I - 1 p^T`` on the slots in ``B`` and the averaging operator
``1 p^T`` on the others; ``Pi_k`` sums these over ``|B| = k``.

The variance exponent of ``U_n(f)`` is ``2l - k`` where ``k`` is the
lowest nonzero level of ``f - Pi_0 f``.  For ``k = l = 2`` the rescaled
limit is a weighted sum of centered chi-squares with weights given by the
eigenvalues of an integral operator on ``A x [0, 1]``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .core import u_stat
from .errors import BudgetExceeded
from .kernels import Kernel, TableKernel, as_alphabet
from .patterns import prefix_statistics

__all__ = [
    "FunctionSpaceBasis",
    "project",
    "project_all",
    "inner_v",
    "degeneracy_order",
    "level_dimension",
    "projection_rank",
    "variance_order",
    "VarianceOrder",
    "e21_identity_check",
    "integral_operator_eigs",
    "e4_table",
    "e4_operator_eigs",
    "e4_limit_mgf_check",
    "chi2_mixture_cdf_single",
]


def _probs(p, A):
    if p is None:
        return np.full(A, 1.0 / A)
    p = np.asarray(p, dtype=float)
    if p.shape != (A,) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
        raise ValueError("p must be a strictly positive distribution on the alphabet")
    return p


@dataclass
class FunctionSpaceBasis:
    """Orthonormal basis of ``W_0 = {h : E h(xi) = 0}`` under ``<u, v> = sum p u v``.

    Built by Gram-Schmidt on ``1{x=a} - p(a)`` for every ``a`` except the
    first letter.  ``W0`` has shape ``(A - 1, A)``.
    """

    alphabet: tuple
    p: np.ndarray
    ell: int
    W0: np.ndarray

    @classmethod
    def build(cls, alphabet, p=None, ell: int = 1) -> "FunctionSpaceBasis":
        alphabet = as_alphabet(alphabet)
        A = len(alphabet)
        p = _probs(p, A)
        vecs = []
        for a in range(1, A):
            v = np.eye(A)[a] - p[a]
            for u in vecs:
                v = v - np.sum(p * u * v) * u
            v = v / math.sqrt(np.sum(p * v * v))
            vecs.append(v)
        return cls(alphabet, p, ell, np.array(vecs).reshape(A - 1, A))

    def inner(self, u, v) -> float:
        return float(np.sum(self.p * np.asarray(u) * np.asarray(v)))

    def gram(self) -> np.ndarray:
        return (self.W0 * self.p) @ self.W0.T


def inner_v(f: np.ndarray, g: np.ndarray, p) -> float:
    """``<f, g>_V = E f(xi_1..xi_l) g(xi_1..xi_l)`` for independent letters."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    ops = [f * g, list(range(f.ndim))]
    for s in range(f.ndim):
        ops += [np.asarray(p, dtype=float), [s]]
    return float(np.einsum(*ops, []))


def _apply_axis(T: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(op, T, axes=([1], [axis])), 0, axis)


def _table_of(f) -> np.ndarray:
    if isinstance(f, Kernel):
        return np.asarray(f.table(), dtype=float)
    return np.asarray(f, dtype=float)


def project(f, k=None, *, B=None, p=None) -> np.ndarray:
    """``Pi_k f`` (sum over ``|B| = k``) or ``Pi_B f`` for a slot subset ``B`` (0-based)."""
    T = _table_of(f)
    ell = T.ndim
    A = T.shape[0] if ell else 1
    p = _probs(p, A)
    avg = np.outer(np.ones(A), p)
    cen = np.eye(A) - avg
    if B is not None:
        subsets = [tuple(B)]
    else:
        if k is None:
            raise ValueError("give k or B")
        subsets = list(itertools.combinations(range(ell), k))
    out = np.zeros_like(T)
    for S in subsets:
        P = T
        for ax in range(ell):
            P = _apply_axis(P, cen if ax in S else avg, ax)
        out = out + P
    return out


def project_all(f, p=None) -> list:
    """``[Pi_0 f, ..., Pi_l f]``."""
    T = _table_of(f)
    return [project(T, k, p=p) for k in range(T.ndim + 1)]


def level_dimension(A: int, ell: int, k: int) -> int:
    return math.comb(ell, k) * (A - 1) ** k


def projection_rank(A: int, ell: int, k: int, p=None, *, kernels: int | None = None,
                    seed: int = 0) -> int:
    """Rank of the image of ``Pi_k``, measured on random kernels (all of ``A^l`` by default)."""
    p = _probs(p, A)
    rng = np.random.default_rng(seed)
    count = kernels or A**ell
    rows = [project(rng.standard_normal((A,) * ell), k, p=p).ravel() for _ in range(count)]
    return int(np.linalg.matrix_rank(np.array(rows), tol=1e-9))


def degeneracy_order(f, p=None, tol: float = 1e-10):
    """Smallest ``k >= 1`` with ``||Pi_k f|| > tol``; ``None`` for constant ``f``."""
    T = _table_of(f)
    A = T.shape[0]
    p = _probs(p, A)
    for k in range(1, T.ndim + 1):
        P = project(T, k, p=p)
        if math.sqrt(max(inner_v(P, P, p), 0.0)) > tol:
            return k
    return None


@dataclass
class VarianceOrder:
    ns: list
    variances: list  # exact (Fraction) when p is uniform and f integer-valued
    slope: float
    degree: int | None
    expected_exponent: int | None


def _exact_moments(f: Kernel, n: int, p: np.ndarray, exact: bool, chunk: int = 1 << 15):
    A = f.A
    total = A**n
    s1 = 0 if exact else []
    s2 = 0 if exact else []
    digits_w = A ** np.arange(n - 1, -1, -1)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        X = (idx[:, None] // digits_w) % A
        U = prefix_statistics(f, None, X, ns=[n])[:, 0]
        if exact:
            U = U.astype(np.int64)
            s1 += int(U.sum())
            s2 += int((U.astype(object) ** 2).sum())
        else:
            w = np.prod(p[X], axis=1)
            s1.append(float(np.sum(w * U)))
            s2.append(float(np.sum(w * U * U)))
    if exact:
        m1 = Fraction(s1, total)
        return m1, Fraction(s2, total) - m1 * m1
    m1 = math.fsum(s1)
    return m1, math.fsum(s2) - m1 * m1


def variance_order(f: Kernel, ns, p=None, *, budget: int = 1 << 22) -> VarianceOrder:
    """Exact ``Var U_n`` by enumerating all strings, with fitted growth exponent.

    ``degree`` is the polynomial degree of ``n -> Var U_n`` read off exact
    finite differences (available when ``p`` is uniform and ``f`` is
    integer-valued; ``ns`` must then be consecutive).
    """
    A = f.A
    ns = [int(n) for n in ns]
    if A ** max(ns) > budget:
        raise BudgetExceeded(f"{A}^{max(ns)} strings exceed the budget {budget}")
    p_arr = _probs(p, A)
    exact = p is None and f.integer_valued
    variances = [_exact_moments(f, n, p_arr, exact)[1] for n in ns]
    vals = np.array([float(v) for v in variances])
    pos = vals > 0
    slope = float(np.polyfit(np.log(np.array(ns)[pos]), np.log(vals[pos]), 1)[0]) if pos.sum() >= 2 \
        else float("nan")
    degree = None
    if exact and ns == list(range(ns[0], ns[0] + len(ns))):
        diffs = list(variances)
        degree = -1
        for d in range(len(ns)):
            if any(v != 0 for v in diffs):
                degree = d
            diffs = [b - a for a, b in zip(diffs, diffs[1:])]
            if not diffs:
                break
        if degree == len(ns) - 1:
            degree = None  # not enough points to certify
    k = degeneracy_order(f, p_arr)
    expected = None if k is None else 2 * f.arity - k
    return VarianceOrder(ns, variances, slope, degree, expected)


def e21_identity_check(xs) -> bool:
    """``U_n`` of ``x y`` on a ``+-1`` string equals ``(sum x)^2 / 2 - n / 2``."""
    xs = [int(v) for v in xs]
    if any(v not in (-1, 1) for v in xs):
        raise ValueError("entries must be +1 or -1")
    f = TableKernel((-1, 1), np.array([[1, -1], [-1, 1]]))
    lhs = u_stat(f, xs)
    s = sum(xs)
    rhs = Fraction(s * s, 2) - Fraction(len(xs), 2)
    return lhs == rhs


def integral_operator_eigs(f_table, p=None, grid_size: int = 2000, k: int = 10):
    """Leading eigenvalues of ``h -> E int_0^t f(xi, x) h(xi, u) du + E int_t^1 f(x, xi) h(xi, u) du``.

    Nystrom discretization on the midpoint grid of ``[0, 1]`` with half
    weight on the diagonal; the discretized operator is symmetric and is
    applied matrix-free.  Returns eigenvalues sorted by decreasing modulus.
    """
    F = np.asarray(f_table, dtype=float)
    A = F.shape[0]
    p = _probs(p, A)
    G = int(grid_size)
    if G < 100:
        raise ValueError("grid_size must be >= 100")
    w = 1.0 / G
    # symmetrize with sqrt(p) so the matrix is symmetric in the Euclidean sense
    sq = np.sqrt(p)
    left = (F * sq[:, None] * sq[None, :]).T  # [x, y] -> f(y, x) sqrt(p_x p_y)
    right = F * sq[:, None] * sq[None, :]      # [x, y] -> f(x, y) sqrt(p_x p_y)

    def matvec(v):
        h = np.asarray(v, dtype=float).reshape(A, G)
        cs = np.cumsum(h, axis=1)
        below = (cs - 0.5 * h) * w  # int_0^t
        above = (cs[:, -1:] - cs + 0.5 * h) * w  # int_t^1
        return (left @ below + right @ above).ravel()

    op = LinearOperator((A * G, A * G), matvec=matvec, dtype=float)
    k = min(k, A * G - 2)
    vals = eigsh(op, k=k, which="LM", return_eigenvectors=False, tol=1e-12,
                 v0=np.random.default_rng(0).standard_normal(A * G))
    return np.array(sorted(vals, key=lambda x: -abs(x)))


def e4_table() -> np.ndarray:
    """``(1{x=a} - 1{x=b}) (1{y=c} - 1{y=d})`` over ``a, b, c, d``."""
    u = np.array([1, -1, 0, 0])
    v = np.array([0, 0, 1, -1])
    return np.outer(u, v)


def e4_operator_eigs(grid_size: int = 2000, k: int = 10) -> np.ndarray:
    return integral_operator_eigs(e4_table(), None, grid_size, k)


def e4_limit_mgf_check(R: int = 200_000, seed: int = 0, n_max: int = 200, s: float = 1.0,
                       chunk: int = 20_000) -> dict:
    """Empirical ``E exp(s Z)`` for the truncated series limit against ``cos(s/2)^{-1/2}``.

    ``Z = (1/(2 pi)) sum_{N < n_max} (zeta_N^2 - zeta'_N^2) / (2N + 1)``.
    """
    if not abs(s) < math.pi:
        raise ValueError("|s| must be below pi")
    if n_max < 50:
        raise ValueError("n_max must be >= 50")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xE4])))
    wts = 1.0 / (2 * np.arange(n_max) + 1)
    zs = []
    for start in range(0, R, chunk):
        m = min(chunk, R - start)
        a = rng.standard_normal((m, n_max))
        b = rng.standard_normal((m, n_max))
        zs.append(((a * a - b * b) @ wts) / (2 * math.pi))
    Z = np.concatenate(zs)
    ep = np.exp(s * Z)
    em = np.exp(-s * Z)
    return {"s": s, "R": R, "n_max": n_max,
            "mgf": float(ep.mean()), "se": float(ep.std(ddof=1) / math.sqrt(R)),
            "mgf_neg": float(em.mean()), "se_neg": float(em.std(ddof=1) / math.sqrt(R)),
            "analytic": 1.0 / math.sqrt(math.cos(s / 2))}


def chi2_mixture_cdf_single(t):
    """CDF of ``(zeta^2 - 1) / 2`` for standard normal ``zeta``."""
    from scipy.special import erf

    t = np.asarray(t, dtype=float)
    a = np.clip(2 * t + 1, 0, None)
    return erf(np.sqrt(a / 2))
