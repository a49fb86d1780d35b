import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from custats.errors import BudgetExceeded
from custats.kernels import TableKernel, WordKernel, constant_kernel
from custats.models import IIDFinite
from custats.moments import degeneracy_test, sigma2
from custats.named import e4_kernel, e21_kernel
from custats.spectral import (FunctionSpaceBasis, degeneracy_order, e4_limit_mgf_check,
                              e4_operator_eigs, e21_identity_check, inner_v,
                              integral_operator_eigs, level_dimension, project, project_all,
                              projection_rank, variance_order)


def test_w0_basis_is_orthonormal_and_centered():
    B = FunctionSpaceBasis.build("abc", [0.2, 0.3, 0.5])
    assert B.W0.shape == (2, 3)
    assert B.gram() == pytest.approx(np.eye(2), abs=1e-14)
    assert B.W0 @ B.p == pytest.approx([0, 0], abs=1e-14)


def test_constant_kernel_projections():
    T = constant_kernel(3, 3, "ab").table()
    parts = project_all(T)
    assert np.array_equal(parts[0], T)
    assert all(np.all(P == 0) for P in parts[1:])


def test_e21_kernel_lives_at_level_two():
    parts = project_all(e21_kernel())
    assert np.all(parts[0] == 0) and np.all(parts[1] == 0)
    assert np.array_equal(parts[2], e21_kernel().table())


def test_e4_kernel_has_no_low_levels():
    parts = project_all(e4_kernel())
    assert np.all(parts[0] == 0) and np.all(parts[1] == 0)


def test_first_level_is_sum_of_projections():
    rng = np.random.default_rng(0)
    T = rng.normal(size=(3, 3, 3))
    p = np.array([0.2, 0.3, 0.5])
    f = TableKernel("abc", T)
    rep = sigma2(f, None, IIDFinite("abc", p))
    tabs = rep.projections.tables()
    want = tabs[0][:, None, None] + tabs[1][None, :, None] + tabs[2][None, None, :]
    assert project(T, 1, p=p) == pytest.approx(want, abs=1e-12)
    assert project(T, 0, p=p) == pytest.approx(np.full_like(T, float(rep.mu)), abs=1e-12)


@pytest.mark.parametrize("A,ell", [(2, 2), (2, 3), (3, 2), (3, 3)])
def test_dimension_audit(A, ell):
    dims = [projection_rank(A, ell, k) for k in range(ell + 1)]
    assert dims == [math.comb(ell, k) * (A - 1) ** k for k in range(ell + 1)]
    assert dims == [level_dimension(A, ell, k) for k in range(ell + 1)]
    assert sum(dims) == A**ell


@st.composite
def random_kernel(draw):
    A = draw(st.integers(2, 3))
    ell = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(A)) * 0.9 + 0.1 / A
    return rng.normal(size=(A,) * ell), p


@settings(max_examples=40)
@given(random_kernel())
def test_orthogonality_completeness_parseval(case):
    T, p = case
    parts = project_all(T, p)
    assert sum(parts) == pytest.approx(T, abs=1e-12)
    for j, k in itertools.combinations(range(len(parts)), 2):
        assert abs(inner_v(parts[j], parts[k], p)) < 1e-10
    assert inner_v(T, T, p) == pytest.approx(sum(inner_v(P, P, p) for P in parts), abs=1e-10)


@settings(max_examples=40)
@given(random_kernel())
def test_projection_is_idempotent(case):
    T, p = case
    for k in range(T.ndim + 1):
        P = project(T, k, p=p)
        assert project(P, k, p=p) == pytest.approx(P, abs=1e-12)


def test_degeneracy_order_examples():
    assert degeneracy_order(WordKernel("01")) == 1
    assert degeneracy_order(e21_kernel()) == 2
    rng = np.random.default_rng(1)
    assert degeneracy_order(project(rng.normal(size=(3, 3, 3)), 2)) == 2
    assert degeneracy_order(constant_kernel(2, 2, "ab")) is None


@settings(max_examples=30)
@given(random_kernel(), st.booleans())
def test_first_level_vanishing_matches_degeneracy_test(case, kill_first):
    T, p = case
    if kill_first:
        T = T - project(T, 1, p=p)
    alphabet = "abc"[: T.shape[0]]
    rep = sigma2(TableKernel(alphabet, T), None, IIDFinite(alphabet, p))
    first_zero = degeneracy_order(T, p) != 1
    assert degeneracy_test(rep).degenerate == first_zero == (float(rep.sigma2) <= 1e-10)


def test_variance_order():
    vo = variance_order(e21_kernel(), range(8, 17))
    assert vo.degree == 2 and vo.expected_exponent == 2
    assert vo.slope == pytest.approx(2, abs=0.15)
    vo = variance_order(WordKernel("01"), range(8, 17))
    assert vo.degree == 3 and vo.expected_exponent == 3
    assert vo.slope == pytest.approx(3, abs=0.2)
    vo = variance_order(constant_kernel(1, 2, "01"), range(4, 8))
    assert all(v == 0 for v in vo.variances)


def test_variance_order_budget():
    with pytest.raises(BudgetExceeded):
        variance_order(e21_kernel(), [30])


def test_e21_identity_examples():
    assert e21_identity_check([1, 1, -1])
    assert e21_identity_check([1, 1, 1, 1])
    with pytest.raises(ValueError):
        e21_identity_check([1, 0])


def test_e21_identity_exhaustive():
    assert all(e21_identity_check(s) for s in itertools.product([-1, 1], repeat=12))


def test_e21_operator_has_single_unit_eigenvalue():
    ev = integral_operator_eigs(e21_kernel().table(), None, 400, 3)
    assert ev[0] == pytest.approx(1.0, abs=1e-3)
    assert np.all(np.abs(ev[1:]) < 1e-8)


def test_e4_eigenvalues():
    ev = e4_operator_eigs(2000, k=8)
    mags = np.sort(np.unique(np.round(np.abs(ev), 9)))[::-1]
    for N, lam in enumerate(mags[:3]):
        assert lam == pytest.approx(1 / ((2 * N + 1) * math.pi), abs=1e-3)
    # each value appears once with each sign and distinct values are separated
    pos = np.sort(ev[ev > 0])[::-1]
    assert np.all(np.diff(pos) < -1e-4)
    assert np.sort(-ev[ev < 0]) == pytest.approx(np.sort(pos), abs=1e-6)


def test_e4_mgf():
    zero = e4_limit_mgf_check(1000, seed=0, s=0.0)
    assert zero["mgf"] == 1.0 and zero["mgf_neg"] == 1.0
    out = e4_limit_mgf_check(200_000, seed=1, s=1.0)
    assert out["analytic"] == pytest.approx(1 / math.sqrt(math.cos(0.5)), rel=1e-12)
    assert abs(out["mgf"] - out["analytic"]) < 3 * out["se"]
    assert abs(out["mgf"] - out["mgf_neg"]) < 3 * math.hypot(out["se"], out["se_neg"])


def test_e4_mgf_preconditions():
    with pytest.raises(ValueError):
        e4_limit_mgf_check(10, s=4.0)
    with pytest.raises(ValueError):
        e4_limit_mgf_check(10, n_max=10)
