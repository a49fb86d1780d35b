import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from custats.core import (INF, Constraint, ObservationSequence, exact_subconstraints,
                          gap_gt_expansion, u_stat, u_stat_constrained, u_stat_exact_constrained,
                          u_stat_gap_gt)
from custats.errors import BudgetExceeded, TieError
from custats.kernels import FunctionKernel, PermPatternKernel, TableKernel, WordKernel
from custats.named import e0_kernel
from oracles import brute_gap_gt, brute_u, table_func


# -- constraint algebra ------------------------------------------------------

def test_constraint_parse_and_fields():
    D = Constraint.parse("1,inf,2")
    assert D.gaps == (1, INF, 2)
    assert (D.ell, D.b, D.D_sum, D.finite_product) == (4, 2, 3, 2)
    assert str(D) == "(1,inf,2)"
    assert Constraint.parse(None, 3).is_unconstrained


@pytest.mark.parametrize("bad", ["0", "-1", "x", "1.5"])
def test_constraint_rejects_bad_gaps(bad):
    with pytest.raises(ValueError):
        Constraint.parse(bad)


@given(st.lists(st.one_of(st.integers(1, 5), st.just(INF)), max_size=6))
def test_constraint_invariants(gaps):
    D = Constraint(tuple(gaps))
    assert 1 <= D.b <= D.ell
    assert D.D_sum >= 0
    assert (D.D_sum == 0) == D.is_unconstrained


def test_exact_subconstraints_examples():
    assert exact_subconstraints(Constraint((2, INF))) == [Constraint((1, INF)), Constraint((2, INF))]
    assert exact_subconstraints(Constraint((INF, INF))) == [Constraint((INF, INF))]
    assert len(exact_subconstraints(Constraint((2, 3)))) == 6


# -- evaluator examples ------------------------------------------------------

def test_u_stat_examples():
    prod = FunctionKernel(lambda x, y: x * y, 2)
    assert u_stat(prod, [1.0, 1.0, 1.0]) == 3
    assert u_stat(WordKernel("01"), "0011") == 4
    assert u_stat(WordKernel("011"), "01") == 0


def test_u_stat_constrained_examples():
    assert u_stat_constrained(WordKernel("101"), Constraint((1, INF)), "10101") == 3
    assert u_stat_constrained(e0_kernel(), Constraint((1, INF)), "110") == 0
    f = WordKernel("01")
    assert u_stat_constrained(f, Constraint((INF,)), "010011") == u_stat(f, "010011")


def test_u_stat_exact_constrained_examples():
    assert u_stat_exact_constrained(WordKernel("11"), Constraint((2,)), "1011") == 1
    assert u_stat_exact_constrained(WordKernel("111"), Constraint((2, 2)), "1111") == 0


def test_u_stat_gap_gt_examples():
    one = FunctionKernel(lambda x, y: np.ones_like(x), 2, integer_valued=True)
    assert u_stat_gap_gt(one, 1, [0.1, 0.2, 0.3, 0.4]) == 3
    f = WordKernel("01")
    assert u_stat_gap_gt(f, 0, "0101100") == u_stat(f, "0101100")


def test_ties_rejected_for_order_kernels():
    with pytest.raises(TieError):
        u_stat(PermPatternKernel("21"), [0.3, 0.1, 0.3])


def test_budget_guard():
    with pytest.raises(BudgetExceeded):
        u_stat(WordKernel("111"), "1" * 100, budget=1000)


def test_integer_counts_are_exact_python_ints():
    n = 3000
    c = u_stat(WordKernel("11"), "1" * n)
    assert isinstance(c, int) and c == math.comb(n, 2)


def test_observation_sequence():
    obs = ObservationSequence.from_symbols("abca", "abc")
    assert obs.n == 4 and obs.symbols() == ["a", "b", "c", "a"]
    with pytest.raises(TieError):
        ObservationSequence.from_reals([0.1, 0.1])


# -- properties against the brute-force oracle --------------------------------

gap = st.one_of(st.integers(1, 4), st.just(INF))


@st.composite
def table_case(draw, max_ell=4, max_n=14):
    A = draw(st.integers(1, 3))
    ell = draw(st.integers(1, max_ell))
    vals = draw(st.lists(st.integers(-3, 3), min_size=A**ell, max_size=A**ell))
    table = np.array(vals).reshape((A,) * ell)
    xs = draw(st.lists(st.integers(0, A - 1), max_size=max_n))
    gaps = draw(st.lists(gap, min_size=ell - 1, max_size=ell - 1))
    return TableKernel(tuple(range(A)), table), table.tolist(), xs, Constraint(tuple(gaps))


@given(table_case())
def test_evaluators_match_oracle(case):
    f, table, xs, D = case
    func = table_func(table)
    ell = f.arity
    assert u_stat(f, xs) == brute_u(func, xs, ell)
    assert u_stat_constrained(f, D, xs) == brute_u(func, xs, ell, D.gaps, "bounded")
    assert u_stat_exact_constrained(f, D, xs) == brute_u(func, xs, ell, D.gaps, "exact")


@given(table_case(), st.integers(0, 3))
def test_gap_gt_matches_oracle_and_inclusion_exclusion(case, m):
    f, table, xs, _ = case
    direct = u_stat_gap_gt(f, m, xs)
    assert direct == brute_gap_gt(table_func(table), xs, f.arity, m)
    ie = sum(s * u_stat_constrained(f, DJ, xs) for s, DJ in gap_gt_expansion(f.arity, m))
    assert ie == direct


@given(table_case())
def test_decomposition_into_exact_constraints(case):
    f, _, xs, D = case
    parts = sum(u_stat_exact_constrained(f, Dp, xs) for Dp in exact_subconstraints(D))
    assert parts == u_stat_constrained(f, D, xs)


@given(table_case(), table_case())
def test_linearity(c1, c2):
    f1, _, xs, D = c1
    f2 = c2[0]
    if f2.arity != f1.arity or f2.alphabet != f1.alphabet:
        return
    comb = 2 * f1 - f2
    assert u_stat_constrained(comb, D, xs) == 2 * u_stat_constrained(f1, D, xs) - \
        u_stat_constrained(f2, D, xs)


@given(table_case())
def test_monotonicity_for_nonnegative_kernels(case):
    f, table, xs, D = case
    g = TableKernel(f.alphabet, np.abs(np.array(table)))
    assert u_stat_exact_constrained(g, D, xs) <= u_stat_constrained(g, D, xs) <= u_stat(g, xs)


@given(table_case())
def test_vincular_bounded_equals_exact(case):
    f, _, xs, D = case
    V = Constraint(tuple(1 if g != INF else INF for g in D.gaps))
    assert u_stat_exact_constrained(f, V, xs) == u_stat_constrained(f, V, xs)


def test_real_kernel_uses_float_accumulation():
    f = FunctionKernel(lambda x, y: x - y, 2)
    xs = [0.5, 0.25, 0.125]
    assert u_stat(f, xs) == pytest.approx((0.25) + (0.375) + (0.125))
