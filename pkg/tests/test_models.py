import numpy as np
import pytest

from custats.models import BlockFactor, IIDFinite, IIDUniform01, uniform_binary, xor_factor
from custats.simulate import generate, replicate_rng


def test_iid_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        IIDFinite("ab", [0.5, 0.6])
    with pytest.raises(ValueError):
        IIDFinite("ab", [1.0, 0.0])


def test_generate_is_deterministic():
    a = generate(uniform_binary(), 5, seed=11)
    b = generate(uniform_binary(), 5, seed=11)
    assert a.symbols() == b.symbols() and a.n == 5


def test_block_factor_length_and_prefix_property():
    model = xor_factor()
    long = model.sample(50, replicate_rng(3, 0))
    short = model.sample(20, replicate_rng(3, 0))
    assert len(short) == 20 and np.array_equal(long[:20], short)
    assert model.base_draws(20) == 21


def test_xor_marginal_exact_and_empirical():
    model = xor_factor([0.3, 0.7])
    exact = model.marginal()
    assert exact == pytest.approx([0.58, 0.42], abs=1e-15)
    R = 100_000
    x = model.sample_batch(R, 1, replicate_rng(5, 0))[:, 0]
    phat = np.mean(x == 1)
    se = np.sqrt(exact[1] * exact[0] / R)
    assert abs(phat - exact[1]) < 3 * se


def test_joint_pmf_factorizes_beyond_range():
    model = xor_factor([0.3, 0.7])
    near = model.joint_pmf([0, 1])
    far = model.joint_pmf([0, 2])
    p = model.marginal()
    assert far == pytest.approx(np.outer(p, p))
    assert not np.allclose(near, np.outer(p, p))  # a biased base keeps neighbours correlated
    assert near.sum() == pytest.approx(1.0)


def test_joint_pmf_matches_base_enumeration():
    base = IIDFinite("01", [0.2, 0.8])
    model = BlockFactor(base, lambda w: (w[..., 0] + w[..., 1] + w[..., 2]) % 2, 2, "01")
    pmf = model.joint_pmf([0, 1, 3])
    want = np.zeros((2, 2, 2))
    import itertools
    for xi in itertools.product([0, 1], repeat=6):
        w = np.prod([base.p[c] for c in xi])
        x = [(xi[k] + xi[k + 1] + xi[k + 2]) % 2 for k in range(4)]
        want[x[0], x[1], x[3]] += w
    assert pmf == pytest.approx(want, abs=1e-14)


def test_uniform_model_has_no_pmf():
    with pytest.raises(TypeError):
        IIDUniform01().marginal()
