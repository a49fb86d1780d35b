"""Asymptotic means, Hoeffding projections and the asymptotic variance.

Three evaluation routes are used, chosen automatically:

``exact``
    finite-alphabet kernel on a finite model (i.i.d. or block factor): all
    expectations are finite sums, evaluated with ``numpy.einsum`` against the
    exact joint laws of the coordinates involved.
``ordering``
    order-based kernel (permutation patterns, sign kernel and their linear
    combinations) on i.i.d. uniform observations: every expectation of a
    product of kernel values is an average over the equally likely relative
    orders of the distinct variables involved, computed exactly as a
    rational number.
``mc``
    everything else, and anything whose state space exceeds the budget:
    Monte-Carlo estimates with standard errors.

For a constraint ``D`` the statistic is reduced to a kernel ``g`` of arity
``b`` on windows of width ``M`` (see :mod:`custats.blocks`) and the same
formulas are applied with ``l -> b`` and ``m -> m + M - 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from .blocks import ReducedKernel, block_structure
from .core import Constraint, exact_subconstraints
from .errors import BudgetExceeded, Inconclusive, NegativeVariance
from .kernels import Kernel, PermPatternKernel
from .models import DEFAULT_STATE_BUDGET, IIDUniform01, SequenceModel

__all__ = [
    "Estimate",
    "ProjectionTerm",
    "ProjectionTable",
    "GammaArray",
    "MomentReport",
    "DegeneracyVerdict",
    "mu",
    "mu_exact_constrained",
    "mu_constrained",
    "expected_un",
    "projections",
    "reduced_projections",
    "residual_table",
    "gamma_array",
    "beta_inner",
    "beta_matrix",
    "sigma2",
    "degeneracy_test",
    "var_z",
    "cov_partial_sums",
    "perm_projection_poly",
    "renewal_projections",
]

NEG_CLAMP = 1e-10
EXACT_TOL = 1e-10
MC_SAMPLES = 200_000
MAX_ORDER_VARS = 10


class Estimate(float):
    """A float that remembers how it was obtained.

    ``method`` is ``"exact"``, ``"ordering"``, ``"mc"`` or
    ``"leading-order"``; ``se`` is the Monte-Carlo standard error (0 for
    exact values); ``exact`` optionally holds a :class:`fractions.Fraction`.
    """

    def __new__(cls, value, method="exact", se=0.0, exact=None, note=""):
        obj = super().__new__(cls, float(value))
        obj.method = method
        obj.se = float(se)
        obj.exact = exact
        obj.note = note
        return obj

    def __repr__(self):
        if self.method in ("mc",):
            return f"Estimate({float(self)!r} ± {self.se:.3g}, mc)"
        return f"Estimate({float(self)!r}, {self.method})"


def _pick_route(f: Kernel, model: SequenceModel) -> str:
    if f.alphabet is not None and model.alphabet is not None:
        if tuple(f.alphabet) != tuple(model.alphabet):
            raise ValueError("kernel and model alphabets differ")
        return "exact"
    if f.order_based and isinstance(model, IIDUniform01):
        return "ordering"
    return "mc"


def _rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xC057])))


# ---------------------------------------------------------------------------
# ordering route helpers

@lru_cache(maxsize=8)
def _all_orders(K: int) -> np.ndarray:
    if math.factorial(K) > DEFAULT_STATE_BUDGET:
        raise BudgetExceeded(f"{K}! orderings exceed the budget")
    return np.array(list(itertools.permutations(range(K))), dtype=np.int8).reshape(-1, K)


def _ordering_mean(f: Kernel, ids: list, K: int) -> Fraction:
    """``E f(V_ids)`` for ``K`` i.i.d. continuous variables."""
    ranks = _all_orders(K)
    vals = f.batch(ranks[:, ids])
    return _exact_mean(vals, len(ranks), f.integer_valued)


def _ordering_product_mean(f: Kernel, ids_a: list, h: Kernel, ids_b: list, K: int):
    ranks = _all_orders(K)
    vals = f.batch(ranks[:, ids_a]) * h.batch(ranks[:, ids_b])
    return _exact_mean(vals, len(ranks), f.integer_valued and h.integer_valued)


def _exact_mean(vals, count, integer):
    if integer:
        return Fraction(int(np.asarray(vals, dtype=np.int64).astype(object).sum()), count)
    return Fraction(math.fsum(np.asarray(vals, dtype=float).tolist()) / count)


def _order_conditional(f: Kernel, free_slots: list) -> Callable:
    """Exact ``y -> E f(...)`` with ``free_slots`` fixed to ``y`` and the rest uniform.

    For fixed values ``y`` of the free slots the remaining ``l - k`` i.i.d.
    uniforms fall into the ``k + 1`` gaps between the sorted ``y``; an
    arrangement with ``c_s`` variables in gap ``s`` (in a given internal
    order) has probability ``prod_s L_s^{c_s} / c_s!``.
    """
    ell = f.arity
    k = len(free_slots)
    perms = np.array(list(itertools.permutations(range(ell))), dtype=np.int64)
    values = np.asarray(f.batch(perms), dtype=float)
    free = np.array(free_slots, dtype=np.int64)
    # free-slot order pattern and gap counts for every total order
    free_ranks = perms[:, free]
    pattern = np.argsort(free_ranks, axis=1)
    sorted_free = np.sort(free_ranks, axis=1)
    edges = np.concatenate([np.full((len(perms), 1), -1), sorted_free,
                            np.full((len(perms), 1), ell)], axis=1)
    counts = np.diff(edges, axis=1) - 1
    coef = values / np.prod([[math.factorial(c) for c in row] for row in counts], axis=1)
    groups: dict = {}
    for pat, cnt, c in zip(map(tuple, pattern), map(tuple, counts), coef):
        d = groups.setdefault(pat, {})
        d[cnt] = d.get(cnt, 0.0) + c

    def evaluate(y):
        y = np.asarray(y, dtype=float).reshape(len(y), k)
        order = np.argsort(y, axis=1)
        ys = np.take_along_axis(y, order, axis=1)
        L = np.diff(np.concatenate([np.zeros((len(y), 1)), ys, np.ones((len(y), 1))], axis=1), axis=1)
        out = np.zeros(len(y))
        keys = [tuple(r) for r in order]
        for pat, table in groups.items():
            rows = np.array([kk == pat for kk in keys], dtype=bool)
            if not rows.any():
                continue
            Lr = L[rows]
            acc = np.zeros(rows.sum())
            for cnt, c in table.items():
                acc += c * np.prod(Lr ** np.array(cnt), axis=1)
            out[rows] = acc
        return out

    return evaluate


def perm_projection_poly(tau, i: int) -> list:
    """Coefficients (ascending, exact) of ``f_i`` for the pattern ``tau``, slot ``i`` 1-based.

    ``f_i(x) = x^{t-1} (1-x)^{l-t} / ((t-1)! (l-t)!) - 1/l!`` with ``t = tau_i``.
    """
    tau = tuple(int(t) for t in tau)
    ell = len(tau)
    t = tau[i - 1]
    scale = Fraction(1, math.factorial(t - 1) * math.factorial(ell - t))
    coeffs = [Fraction(0)] * ell
    for k in range(ell - t + 1):
        coeffs[t - 1 + k] += scale * math.comb(ell - t, k) * (-1) ** k
    coeffs[0] -= Fraction(1, math.factorial(ell))
    return coeffs


def _poly_eval(coeffs, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c in reversed(coeffs):
        out = out * x + float(c)
    return out


# ---------------------------------------------------------------------------
# data containers

@dataclass
class ProjectionTerm:
    """One additive piece of a projection: reads window ``positions``.

    ``table`` is indexed by the symbol codes at those positions; ``func``
    maps an array of shape ``(N, len(positions))`` to values.
    """

    positions: tuple
    table: np.ndarray | None = None
    func: Callable | None = None

    def __call__(self, vals):
        vals = np.asarray(vals)
        if self.table is not None:
            return self.table[tuple(vals[:, k].astype(np.int64) for k in range(vals.shape[1]))]
        return self.func(vals)


@dataclass
class ProjectionTable:
    """Projections ``f_i`` (or ``g_i`` on windows of width ``M``), ``i = 1..L``."""

    terms: list
    M: int
    method: str
    polynomials: list | None = None

    @property
    def count(self) -> int:
        return len(self.terms)

    def evaluate(self, i: int, y) -> np.ndarray:
        """``f_i`` (``i`` 0-based) at windows ``y`` of shape ``(N, M)`` or ``(N,)``."""
        y = np.asarray(y)
        if y.ndim == 1:
            y = y[:, None]
        out = np.zeros(len(y))
        for term in self.terms[i]:
            out = out + term(y[:, list(term.positions)])
        return out

    def tables(self) -> list:
        """Dense tables (finite route, one-position terms only)."""
        out = []
        for ts in self.terms:
            if len(ts) != 1 or ts[0].table is None or len(ts[0].positions) != 1:
                raise TypeError("projection is not a single-symbol table")
            out.append(ts[0].table)
        return out


@dataclass
class GammaArray:
    """``values[i, j, r + m_eff] = Cov(f_i(X_k), f_j(X_{k+r}))``."""

    values: np.ndarray
    m_eff: int
    method: str
    se: np.ndarray | None = None
    exact: list | None = None

    def __call__(self, i, j, r):
        return self.values[i, j, r + self.m_eff]

    @property
    def B(self) -> np.ndarray:
        return self.values.sum(axis=2)


@dataclass
class DegeneracyVerdict:
    degenerate: bool
    tol: float
    max_abs_B: float
    B: np.ndarray
    method: str
    sigma2: float
    min_eig_B: float
    se_B: np.ndarray | None = None

    def __bool__(self):
        return self.degenerate

    def to_json(self):
        return {"degenerate": self.degenerate, "tol": self.tol, "max_abs_B": self.max_abs_B,
                "B": self.B.tolist(), "method": self.method, "sigma2": self.sigma2,
                "min_eig_B": self.min_eig_B,
                "se_B": None if self.se_B is None else self.se_B.tolist()}


@dataclass
class MomentReport:
    kernel: str
    constraint: Constraint
    exact_constraint: bool
    model: str
    b: int
    M: int
    m_eff: int
    mu: Estimate
    mu_D: Estimate
    mu_Dq: Estimate
    projections: ProjectionTable
    gamma: GammaArray
    beta: list
    sigma2: Estimate
    method: dict = field(default_factory=dict)
    verdict: DegeneracyVerdict | None = None

    @property
    def B(self) -> np.ndarray:
        return self.gamma.B

    @property
    def degenerate(self) -> bool:
        return bool(self.verdict.degenerate) if self.verdict is not None else None

    def gss_terms(self) -> list:
        """``(i, j, r, gamma_ijr, beta_ij, product)`` for every summand, 1-based ``i, j``."""
        L = self.b
        out = []
        for i in range(L):
            for j in range(L):
                bij = float(self.beta[i][j])
                for r in range(-self.m_eff, self.m_eff + 1):
                    g = float(self.gamma(i, j, r))
                    out.append((i + 1, j + 1, r, g, bij, g * bij))
        return out

    def to_json(self) -> dict:
        def est(e):
            return {"value": float(e), "method": e.method, "se": e.se,
                    "exact": None if e.exact is None else str(e.exact)}
        return {
            "kernel": self.kernel,
            "constraint": self.constraint.to_json(),
            "exact_constraint": self.exact_constraint,
            "model": self.model,
            "b": self.b, "M": self.M, "m_eff": self.m_eff,
            "mu": est(self.mu), "mu_D": est(self.mu_D), "mu_Dq": est(self.mu_Dq),
            "gamma": {"values": self.gamma.values.tolist(), "method": self.gamma.method,
                      "se": None if self.gamma.se is None else self.gamma.se.tolist(),
                      "r_range": [-self.m_eff, self.m_eff]},
            "B": self.B.tolist(),
            "beta": [[str(x) for x in row] for row in self.beta],
            "sigma2": est(self.sigma2),
            "method": self.method,
            "verdict": None if self.verdict is None else self.verdict.to_json(),
        }


# ---------------------------------------------------------------------------
# exact route internals

def _layouts(D: Constraint, M: int, exact: bool) -> list:
    """Per exact sub-constraint: list of blocks, each a list of (slot, window position)."""
    parts = [D] if exact else exact_subconstraints(D)
    out = []
    for Dp in parts:
        bs = block_structure(Dp, M)
        blocks = [[] for _ in range(bs.b)]
        for slot, (q, pos) in enumerate(bs.slot_layout()):
            blocks[q].append((slot, pos))
        out.append(blocks)
    return out


def _block_operands(model, block, budget):
    """einsum operands (array, slot ids) for the joint law of one block's slots."""
    slot_of = {pos: slot for slot, pos in block}
    ops = []
    for arr, coords in model.joint_factors([pos for _, pos in block], budget):
        ops += [arr, [slot_of[c] for c in coords]]
    return ops


def _exact_block_mean(T, model, blocks, budget, keep=None):
    """Contract ``T`` against the joint laws of every block except ``keep``."""
    ops = [T, list(range(T.ndim))]
    for q, block in enumerate(blocks):
        if q != keep:
            ops += _block_operands(model, block, budget)
    out = [slot for slot, _ in blocks[keep]] if keep is not None else []
    return np.einsum(*ops, out, optimize=True)


def _exact_gamma(proj: ProjectionTable, model, m_eff, budget):
    L = proj.count
    vals = np.zeros((L, L, 2 * m_eff + 1))
    for i in range(L):
        for j in range(L):
            for r in range(-m_eff, m_eff + 1):
                acc = 0.0
                for ta in proj.terms[i]:
                    for tc in proj.terms[j]:
                        ca = list(ta.positions)
                        cc = [p + r for p in tc.positions]
                        union = sorted(set(ca) | set(cc))
                        idx = {c: k for k, c in enumerate(union)}
                        ops = [ta.table, [idx[c] for c in ca], tc.table, [idx[c] for c in cc]]
                        for arr, coords in model.joint_factors(union, budget):
                            ops += [arr, [idx[c] for c in coords]]
                        acc += float(np.einsum(*ops, [], optimize=True))
                vals[i, j, r + m_eff] = acc
    return vals


# ---------------------------------------------------------------------------
# public: means

def mu(f: Kernel, model: SequenceModel, *, budget: int = DEFAULT_STATE_BUDGET,
       samples: int = MC_SAMPLES, seed: int = 0) -> Estimate:
    """Mean of ``f`` at independent copies of the marginal law."""
    route = _pick_route(f, model)
    if route == "exact":
        T = np.asarray(f.table(), dtype=float)
        p = model.marginal()
        ops = [T, list(range(f.arity))]
        for s in range(f.arity):
            ops += [p, [s]]
        return Estimate(np.einsum(*ops, [], optimize=True), "exact")
    if route == "ordering" and f.arity <= MAX_ORDER_VARS:
        val = _ordering_mean(f, list(range(f.arity)), f.arity)
        return Estimate(float(val), "ordering", exact=val)
    rng = _rng(seed)
    x = model.sample_batch(samples * f.arity, 1, rng)[:, 0].reshape(samples, f.arity)
    v = np.asarray(f.batch(x), dtype=float)
    return Estimate(v.mean(), "mc", v.std(ddof=1) / math.sqrt(samples))


def _mc_window_mean(g: ReducedKernel, model, samples, seed):
    rng = _rng(seed)
    b, M = g.arity, g.M
    Z = model.sample_batch(samples * b, M, rng).reshape((samples, b, M) + ())
    v = np.asarray(g.batch(Z), dtype=float)
    return Estimate(v.mean(), "mc", v.std(ddof=1) / math.sqrt(samples))


def mu_exact_constrained(f: Kernel, D: Constraint, model: SequenceModel, *,
                         budget: int = DEFAULT_STATE_BUDGET, samples: int = MC_SAMPLES,
                         seed: int = 0) -> Estimate:
    """Mean of the window kernel ``g_{D=}`` at far-apart windows."""
    if model.is_iid:
        return mu(f, model, budget=budget, samples=samples, seed=seed)
    route = _pick_route(f, model)
    if route == "exact":
        try:
            T = np.asarray(f.table(), dtype=float)
            (blocks,) = _layouts(D, None, True)
            return Estimate(_exact_block_mean(T, model, blocks, budget), "exact")
        except BudgetExceeded:
            pass
    g = ReducedKernel(f, D, exact=True)
    return _mc_window_mean(g, model, samples, seed)


def mu_constrained(f: Kernel, D: Constraint, model: SequenceModel, **kw) -> Estimate:
    """``mu_D``: sum of ``mu_{D'=}`` over the exact sub-constraints of ``D``."""
    if model.is_iid:
        m0 = mu(f, model, **kw)
        exact = None if m0.exact is None else m0.exact * D.finite_product
        return Estimate(float(m0) * D.finite_product, m0.method, m0.se * D.finite_product, exact)
    parts = [mu_exact_constrained(f, Dp, model, **kw) for Dp in exact_subconstraints(D)]
    method = "mc" if any(p.method == "mc" for p in parts) else parts[0].method
    se = math.sqrt(sum(p.se**2 for p in parts))
    return Estimate(math.fsum(parts), method, se)


def expected_un(f: Kernel, D: Constraint | None, n: int, model: SequenceModel, *,
                exact_constraint: bool = False, **kw) -> Estimate:
    """``E U_n``: exact binomial forms for i.i.d. models, leading term otherwise.

    The leading-order value carries ``note="O(n^(b-1))"``.
    """
    ell = f.arity
    D = Constraint.unconstrained(ell) if D is None else D
    if n < ell:
        return Estimate(0.0, "exact", exact=Fraction(0))
    if model.is_iid:
        m0 = mu(f, model, **kw)
        b = D.b
        parts = [D] if exact_constraint else exact_subconstraints(D)
        weight = sum(math.comb(n - Dp.D_sum, b) for Dp in parts if n - Dp.D_sum >= 0)
        exact = None if m0.exact is None else m0.exact * weight
        if exact is None and m0.method == "exact":
            exact = _to_fraction(m0) * weight
        return Estimate(float(m0) * weight if exact is None else float(exact), m0.method,
                        m0.se * weight, exact)
    b = D.b
    mD = mu_exact_constrained(f, D, model, **kw) if exact_constraint else mu_constrained(f, D, model, **kw)
    lead = float(mD) * n**b / math.factorial(b)
    return Estimate(lead, "leading-order", mD.se * n**b / math.factorial(b),
                    note=f"O(n^{b - 1})")


def _to_fraction(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10**9) if abs(Fraction(x).limit_denominator(10**9) - Fraction(x)) < 1e-15 else Fraction(x)


# ---------------------------------------------------------------------------
# public: projections

def reduced_projections(f: Kernel, D: Constraint | None, model: SequenceModel, *,
                        M: int | None = None, exact_constraint: bool = False,
                        budget: int = DEFAULT_STATE_BUDGET, samples: int = 4000,
                        seed: int = 0) -> ProjectionTable:
    """Projections ``g_i`` of the window kernel (``f_i`` when ``D`` is unconstrained)."""
    D = Constraint.unconstrained(f.arity) if D is None else D
    if M is None:
        M = D.D_sum + 1
    layouts = _layouts(D, M, exact_constraint)
    b = D.b
    route = _pick_route(f, model)
    if route == "exact":
        try:
            T = np.asarray(f.table(), dtype=float)
            terms = [[] for _ in range(b)]
            for blocks in layouts:
                m_part = _exact_block_mean(T, model, blocks, budget)
                for i in range(b):
                    tab = _exact_block_mean(T, model, blocks, budget, keep=i) - m_part
                    terms[i].append(ProjectionTerm(tuple(p for _, p in blocks[i]), table=tab))
            return ProjectionTable(terms, M, "exact")
        except BudgetExceeded:
            route = "mc"
    if route == "ordering":
        m0 = float(_ordering_mean(f, list(range(f.arity)), f.arity))
        terms = [[] for _ in range(b)]
        for blocks in layouts:
            for i in range(b):
                cond = _order_conditional(f, [s for s, _ in blocks[i]])
                terms[i].append(ProjectionTerm(tuple(p for _, p in blocks[i]),
                                               func=lambda v, c=cond: c(v) - m0))
        polys = None
        if isinstance(f, PermPatternKernel) and D.is_unconstrained:
            polys = [perm_projection_poly(f.tau, i + 1) for i in range(f.arity)]
        return ProjectionTable(terms, M, "ordering", polys)
    # Monte-Carlo conditional expectations, evaluated lazily
    g = ReducedKernel(f, D, M, exact=exact_constraint)
    mu_g = _mc_window_mean(g, model, MC_SAMPLES, seed)

    def make(i):
        def evaluate(y):
            rng = _rng(seed + 1 + i)
            y = np.asarray(y)
            out = np.empty(len(y))
            for k in range(len(y)):
                Z = model.sample_batch(samples * b, M, rng).reshape(samples, b, M)
                Z[:, i, :] = y[k]
                out[k] = np.mean(g.batch(Z)) - float(mu_g)
            return out
        return evaluate

    terms = [[ProjectionTerm(tuple(range(M)), func=make(i))] for i in range(b)]
    return ProjectionTable(terms, M, "mc")


def projections(f: Kernel, model: SequenceModel, **kw) -> ProjectionTable:
    """Unconstrained one-variable projections ``f_i(x) = E f(.., x at slot i, ..) - mu``."""
    return reduced_projections(f, None, model, **kw)


def residual_table(f: Kernel, model: SequenceModel) -> np.ndarray:
    """``f* = f - mu - sum_i f_i(x_i)`` as a table (finite alphabets)."""
    T = np.asarray(f.table(), dtype=float)
    out = T - float(mu(f, model))
    for i, tab in enumerate(projections(f, model).tables()):
        shape = [1] * f.arity
        shape[i] = -1
        out = out - tab.reshape(shape)
    return out


def renewal_projections(proj: ProjectionTable, mu_D: float, nu: float, h_table) -> ProjectionTable:
    """Projections of the renewal-adjusted kernel: ``g_j + mu_D - (mu_D/nu) h(y_1)``.

    ``h_table`` gives ``h`` on single symbols (finite alphabets only).
    """
    h = np.asarray(h_table, dtype=float)
    terms = []
    for ts in proj.terms:
        extra = ProjectionTerm((0,), table=mu_D - (mu_D / nu) * h)
        terms.append(list(ts) + [extra])
    return ProjectionTable(terms, proj.M, proj.method)


# ---------------------------------------------------------------------------
# public: covariances and variance

def gamma_array(proj: ProjectionTable, model: SequenceModel, m_eff: int, *,
                budget: int = DEFAULT_STATE_BUDGET) -> GammaArray:
    """``gamma_{i,j,r}`` for ``|r| <= m_eff`` from exact projection tables."""
    if proj.method != "exact":
        raise TypeError("gamma_array needs exact tables; use sigma2() for other routes")
    vals = _exact_gamma(proj, model, m_eff, budget)
    return GammaArray(vals, m_eff, "exact")


def _ordering_gamma(f: Kernel, D: Constraint, M: int, exact_constraint: bool):
    """Exact gamma for order kernels on i.i.d. continuous data.

    ``E[g_i(Y_0) g_j(Y_r)]`` is ``E f(A) f(B)`` where ``A`` has block ``i``
    on window ``0`` and ``B`` has block ``j`` on window ``r``; every other
    block is an independent fresh set of variables.
    """
    layouts = _layouts(D, M, exact_constraint)
    b = D.b
    m_eff = M - 1
    ell = f.arity
    m0 = _ordering_mean(f, list(range(ell)), ell)
    exact = [[[Fraction(0)] * (2 * m_eff + 1) for _ in range(b)] for _ in range(b)]
    for i in range(b):
        for j in range(b):
            for r in range(-m_eff, m_eff + 1):
                acc = Fraction(0)
                for la in layouts:
                    for lb in layouts:
                        ids_a = [0] * ell
                        ids_b = [0] * ell
                        pos_id = {}
                        nxt = 0
                        for slot, pos in la[i]:
                            pos_id[pos] = nxt
                            ids_a[slot] = nxt
                            nxt += 1
                        for slot, pos in lb[j]:
                            if pos + r in pos_id:
                                ids_b[slot] = pos_id[pos + r]
                            else:
                                ids_b[slot] = nxt
                                nxt += 1
                        for q, block in enumerate(la):
                            if q != i:
                                for slot, _ in block:
                                    ids_a[slot] = nxt
                                    nxt += 1
                        for q, block in enumerate(lb):
                            if q != j:
                                for slot, _ in block:
                                    ids_b[slot] = nxt
                                    nxt += 1
                        if nxt > MAX_ORDER_VARS:
                            raise BudgetExceeded(f"{nxt} variables exceed the ordering budget")
                        acc += _ordering_product_mean(f, ids_a, f, ids_b, nxt) - m0 * m0
                exact[i][j][r + m_eff] = acc
    vals = np.array([[[float(x) for x in row] for row in mat] for mat in exact])
    return vals, exact


def _mc_gamma(g: ReducedKernel, model, m_eff, beta, samples, seed, chunk=20_000):
    """Monte-Carlo gamma with common random numbers across ``i`` and ``r``.

    Per draw, ``A_i = g(Z with block i := Y_0)`` and ``C_{j,r} = g(Z' with
    block j := Y_r)`` for windows ``Y`` of one stationary span, and
    ``E_j = g(Z'' with block j := W)`` for an independent window ``W``.  The
    summand ``A_i C_{j,r} - A_i E_j`` is unbiased for ``gamma_{i,j,r}``.
    """
    rng = _rng(seed)
    b, M = g.arity, g.M
    R = 2 * m_eff + 1
    s1 = np.zeros((b, b, R))
    s2 = np.zeros((b, b, R))
    sB = np.zeros((b, b))
    sB2 = np.zeros((b, b))
    ssig = 0.0
    ssig2 = 0.0
    bet = np.array([[float(x) for x in row] for row in beta])
    done = 0
    while done < samples:
        N = min(chunk, samples - done)
        span = model.sample_batch(N, M + 2 * m_eff, rng)
        W = model.sample_batch(N, M, rng)
        Z = [model.sample_batch(N * b, M, rng).reshape((N, b, M)) for _ in range(3)]
        A = np.empty((b, N))
        C = np.empty((b, R, N))
        E = np.empty((b, N))
        Y0 = span[:, m_eff:m_eff + M]
        for i in range(b):
            Zi = Z[0].copy()
            Zi[:, i] = Y0
            A[i] = g.batch(Zi)
            Zw = Z[2].copy()
            Zw[:, i] = W
            E[i] = g.batch(Zw)
            for r in range(-m_eff, m_eff + 1):
                Zr = Z[1].copy()
                Zr[:, i] = span[:, m_eff + r:m_eff + r + M]
                C[i, r + m_eff] = g.batch(Zr)
        X = A[:, None, None, :] * (C[None, :, :, :] - E[None, :, None, :])
        s1 += X.sum(axis=3)
        s2 += (X**2).sum(axis=3)
        Bs = X.sum(axis=2)
        sB += Bs.sum(axis=2)
        sB2 += (Bs**2).sum(axis=2)
        sig = np.einsum("ij,ijn->n", bet, Bs)
        ssig += sig.sum()
        ssig2 += (sig**2).sum()
        done += N
    n = samples
    mean = s1 / n
    se = np.sqrt(np.maximum(s2 / n - mean**2, 0) / (n - 1))
    Bm = sB / n
    Bse = np.sqrt(np.maximum(sB2 / n - Bm**2, 0) / (n - 1))
    sm = ssig / n
    sse = math.sqrt(max(ssig2 / n - sm**2, 0) / (n - 1))
    return mean, se, Bse, sse


def beta_inner(i: int, j: int, ell: int) -> Fraction:
    """``int_0^1 psi_i psi_j dt`` as an exact rational (``1 <= i, j <= ell``)."""
    if not (1 <= i <= ell and 1 <= j <= ell):
        raise ValueError("indices must lie in 1..ell")
    F = math.factorial
    num = F(i + j - 2) * F(2 * ell - i - j)
    den = F(i - 1) * F(j - 1) * F(ell - i) * F(ell - j) * F(2 * ell - 1)
    return Fraction(num, den)


def beta_matrix(ell: int) -> list:
    return [[beta_inner(i, j, ell) for j in range(1, ell + 1)] for i in range(1, ell + 1)]


def _clamp(s: float, se: float = 0.0) -> float:
    if s < 0:
        if s >= -NEG_CLAMP:
            return 0.0
        if se > 0 and s >= -3 * se:
            return 0.0
        raise NegativeVariance(f"asymptotic variance {s!r} is negative beyond round-off")
    return s


def sigma2(f: Kernel, D: Constraint | None, model: SequenceModel, *,
           exact_constraint: bool = False, M: int | None = None,
           budget: int = DEFAULT_STATE_BUDGET, samples: int = MC_SAMPLES, seed: int = 0,
           tol: float | None = None, route: str | None = None) -> MomentReport:
    """Asymptotic variance of ``n^{1/2 - b} U_n(f; D)`` with every intermediate.

    ``D=None`` means unconstrained.  With ``exact_constraint`` the finite gaps
    are equalities.  ``route="mc"`` forces the Monte-Carlo estimator for
    gamma (used to cross-check it against the exact routes).
    """
    D = Constraint.unconstrained(f.arity) if D is None else D
    if D.ell != f.arity:
        raise ValueError("constraint and kernel arity differ")
    if M is None:
        M = D.D_sum + 1
    b = D.b
    m_eff = model.m + M - 1
    beta = beta_matrix(b)
    bet = np.array([[float(x) for x in row] for row in beta])
    kw = dict(budget=budget, seed=seed)
    route = route or _pick_route(f, model)

    m0 = mu(f, model, samples=samples, **kw)
    mDq = mu_exact_constrained(f, D, model, samples=samples, **kw)
    mD = mu_constrained(f, D, model, samples=samples, **kw)

    proj = None
    gam = None
    if route == "exact":
        try:
            proj = reduced_projections(f, D, model, M=M, exact_constraint=exact_constraint, **kw)
            if proj.method == "exact":
                gam = gamma_array(proj, model, m_eff, budget=budget)
        except BudgetExceeded:
            proj = None
    elif route == "ordering":
        try:
            vals, exact = _ordering_gamma(f, D, M, exact_constraint)
            gam = GammaArray(vals, m_eff, "ordering", exact=exact)
            proj = reduced_projections(f, D, model, M=M, exact_constraint=exact_constraint, **kw)
        except BudgetExceeded:
            gam = None
    if gam is not None:
        if gam.exact is not None:
            s_exact = sum(beta[i][j] * sum(gam.exact[i][j]) for i in range(b) for j in range(b))
            s = Estimate(_clamp(float(s_exact)), gam.method, exact=s_exact)
        else:
            s = Estimate(_clamp(float(np.sum(bet * gam.B))), gam.method)
    else:
        g = ReducedKernel(f, D, M, exact=exact_constraint)
        mean, se, Bse, sse = _mc_gamma(g, model, m_eff, beta, samples, seed)
        gam = GammaArray(mean, m_eff, "mc", se=se)
        gam.B_se = Bse
        s = Estimate(_clamp(float(np.sum(bet * gam.B)), sse), "mc", sse)
        if proj is None:
            proj = ProjectionTable([[] for _ in range(b)], M, "mc")
    report = MomentReport(
        kernel=repr(f), constraint=D, exact_constraint=exact_constraint, model=repr(model),
        b=b, M=M, m_eff=m_eff, mu=m0, mu_D=mD, mu_Dq=mDq, projections=proj, gamma=gam,
        beta=beta, sigma2=s,
        method={"mu": m0.method, "gamma": gam.method, "sigma2": s.method, "route": route},
    )
    try:
        report.verdict = degeneracy_test(report, tol)
    except Inconclusive:
        report.verdict = None
    return report


def degeneracy_test(report: MomentReport, tol: float | None = None) -> DegeneracyVerdict:
    """Degenerate iff every ``b_ij = sum_r gamma_ijr`` vanishes.

    Exact routes compare ``max |b_ij|`` with ``tol`` (default ``1e-10``).  The
    Monte-Carlo route declares non-degeneracy when some ``|b_ij|`` exceeds
    three standard errors, degeneracy when all ``|b_ij| + 3 SE <= tol``, and
    raises :class:`Inconclusive` otherwise.
    """
    B = report.B
    Bs = (B + B.T) / 2
    min_eig = float(np.linalg.eigvalsh(Bs).min()) if Bs.size else 0.0
    max_abs = float(np.abs(B).max()) if B.size else 0.0
    s2 = float(report.sigma2)
    if report.gamma.method != "mc":
        t = EXACT_TOL if tol is None else tol
        return DegeneracyVerdict(max_abs <= t, t, max_abs, B, report.gamma.method, s2, min_eig)
    se = getattr(report.gamma, "B_se", None)
    if se is None:
        se = np.zeros_like(B)
    t = 1e-3 if tol is None else tol
    if np.any(np.abs(B) > 3 * se):
        return DegeneracyVerdict(False, t, max_abs, B, "mc", s2, min_eig, se)
    if np.all(np.abs(B) + 3 * se <= t):
        return DegeneracyVerdict(True, t, max_abs, B, "mc", s2, min_eig, se)
    raise Inconclusive(f"max |b_ij| = {max_abs:.3g} is within 3 SE (max SE {se.max():.3g})")


def var_z(t: float, sigma2_value: float, b: int) -> float:
    """Variance of the limit process at time ``t``: ``t^(2b-1) sigma^2``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return t ** (2 * b - 1) * sigma2_value


def cov_partial_sums(gamma: GammaArray, n: int) -> np.ndarray:
    """``Cov(S_in, S_jn) = sum_r (n - |r|) gamma_ijr`` with ``S_in = sum_k f_i(X_k)``."""
    m = gamma.m_eff
    w = np.array([max(n - abs(r), 0) for r in range(-m, m + 1)], dtype=float)
    return np.einsum("ijr,r->ij", gamma.values, w)
