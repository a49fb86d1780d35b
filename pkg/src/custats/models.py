"""Stationary m-dependent sequence models.

Three variants are provided:

* :class:`IIDFinite` -- i.i.d. letters with distribution ``p`` over a finite alphabet.
* :class:`IIDUniform01` -- i.i.d. uniform(0, 1) reals (the continuous model for
  permutation patterns).
* :class:`BlockFactor` -- ``X_i = h(xi_i, ..., xi_{i+m})`` over an i.i.d. base.

Sampling consumes exactly one uniform per base variable, in order, so a
sequence of length ``n`` drawn from a generator is a prefix of the sequence
of length ``n' > n`` drawn from an identically seeded generator.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetExceeded
from .kernels import as_alphabet

__all__ = ["SequenceModel", "IIDFinite", "IIDUniform01", "BlockFactor", "uniform_binary",
           "xor_factor", "DEFAULT_STATE_BUDGET"]

DEFAULT_STATE_BUDGET = 10**7


class SequenceModel:
    """Base class.  ``m`` is the dependence range, ``alphabet`` is ``None`` for reals."""

    m: int = 0
    alphabet: tuple | None = None

    @property
    def is_iid(self) -> bool:
        return self.m == 0

    @property
    def is_finite(self) -> bool:
        return self.alphabet is not None

    def sample_batch(self, R: int, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_batch(1, n, rng)[0]

    def base_draws(self, n: int) -> int:
        """Number of uniforms consumed for a sequence of length ``n``."""
        return n + self.m

    def from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Map base uniforms of shape ``(..., n + m)`` to observations ``(..., n)``."""
        raise NotImplementedError

    def marginal(self) -> np.ndarray:
        raise NotImplementedError

    def joint_factors(self, coords: Sequence[int], budget: int = DEFAULT_STATE_BUDGET) -> list:
        """Joint law of ``(X_c)_{c in coords}`` as independent factors.

        Returns a list of ``(pmf array, coords tuple)``; the product of the
        factors is the joint pmf.  Coordinates more than ``m`` apart fall into
        separate factors.
        """
        raise NotImplementedError

    def joint_pmf(self, coords: Sequence[int], budget: int = DEFAULT_STATE_BUDGET) -> np.ndarray:
        """Dense joint pmf of shape ``(A,) * len(coords)`` in the given order."""
        coords = list(coords)
        if len(set(coords)) != len(coords):
            raise ValueError("coordinates must be distinct")
        factors = self.joint_factors(coords, budget)
        operands = []
        for arr, cs in factors:
            operands += [arr, [coords.index(c) for c in cs]]
        return np.einsum(*operands, list(range(len(coords))))

    def to_json(self) -> dict:
        raise NotImplementedError


class IIDFinite(SequenceModel):
    """i.i.d. letters with probabilities ``p`` (all strictly positive)."""

    def __init__(self, alphabet, p=None):
        self.alphabet = as_alphabet(alphabet)
        A = len(self.alphabet)
        if p is None:
            p = [Fraction(1, A)] * A
        p_exact = [Fraction(x).limit_denominator(10**12) if not isinstance(x, Fraction) else x
                   for x in p]
        self.p_exact = tuple(p_exact)
        self.p = np.array([float(x) for x in p], dtype=float)
        if len(self.p) != A:
            raise ValueError("one probability per letter required")
        if np.any(self.p <= 0):
            raise ValueError("letter probabilities must be strictly positive")
        if abs(self.p.sum() - 1.0) > 1e-12:
            raise ValueError("letter probabilities must sum to 1")
        self.m = 0
        self._cum = np.cumsum(self.p)
        self._cum[-1] = 1.0

    def __repr__(self):
        return f"IIDFinite({self.alphabet!r}, p={self.p.tolist()})"

    def from_uniforms(self, u):
        return np.searchsorted(self._cum, u, side="right").astype(np.int64)

    def sample_batch(self, R, n, rng):
        return self.from_uniforms(rng.random((R, n)))

    def marginal(self):
        return self.p.copy()

    def joint_factors(self, coords, budget=DEFAULT_STATE_BUDGET):
        return [(self.p, (c,)) for c in coords]

    def to_json(self):
        return {"type": "iid", "alphabet": list(self.alphabet), "p": self.p.tolist()}


def uniform_binary() -> IIDFinite:
    return IIDFinite("01")


class IIDUniform01(SequenceModel):
    """i.i.d. uniform(0, 1) observations."""

    alphabet = None
    m = 0

    def __repr__(self):
        return "IIDUniform01()"

    def from_uniforms(self, u):
        return np.asarray(u, dtype=float)

    def sample_batch(self, R, n, rng):
        return rng.random((R, n))

    def marginal(self):
        raise TypeError("continuous model has no finite marginal")

    def joint_factors(self, coords, budget=DEFAULT_STATE_BUDGET):
        raise TypeError("continuous model has no finite joint pmf")

    def to_json(self):
        return {"type": "uniform01"}


class BlockFactor(SequenceModel):
    """``X_i = h(xi_i, ..., xi_{i+m})`` for an i.i.d. base sequence ``xi``.

    ``h`` receives an array of shape ``(..., m + 1)`` (base codes for a finite
    base, floats for a uniform base) and returns observations of shape
    ``(...)``: integer codes into ``alphabet`` when ``alphabet`` is given,
    floats otherwise.
    """

    def __init__(self, base: SequenceModel, h: Callable, m: int, alphabet=None, name: str = ""):
        if not base.is_iid:
            raise ValueError("base sequence must be i.i.d.")
        if m < 0:
            raise ValueError("m must be >= 0")
        self.base = base
        self.h = h
        self.m = int(m)
        self.alphabet = None if alphabet is None else as_alphabet(alphabet)
        self.name = name

    def __repr__(self):
        return f"BlockFactor({self.base!r}, m={self.m}, {self.name or self.h!r})"

    def from_uniforms(self, u):
        xi = self.base.from_uniforms(u)
        win = np.lib.stride_tricks.sliding_window_view(xi, self.m + 1, axis=-1)
        out = np.asarray(self.h(win))
        return out.astype(np.int64) if self.alphabet is not None else out.astype(float)

    def sample_batch(self, R, n, rng):
        return self.from_uniforms(rng.random((R, n + self.m)))

    def _cluster_pmf(self, cluster: list, budget: int) -> np.ndarray:
        if self.alphabet is None or not self.base.is_finite:
            raise TypeError("exact joint law needs finite base and output alphabets")
        lo = cluster[0]
        span = cluster[-1] - lo + self.m + 1
        Ab = len(self.base.alphabet)
        states = Ab**span
        if states > budget:
            raise BudgetExceeded(f"{states} base states exceed the budget {budget}")
        A = len(self.alphabet)
        k = len(cluster)
        pmf = np.zeros(A**k)
        rel = np.array([c - lo for c in cluster])
        logp = self.base.p
        chunk = max(1, (1 << 20) // span)
        for start in range(0, states, chunk):
            idx = np.arange(start, min(states, start + chunk))
            digits = (idx[:, None] // Ab ** np.arange(span - 1, -1, -1)) % Ab
            w = np.prod(logp[digits], axis=1)
            win = np.lib.stride_tricks.sliding_window_view(digits, self.m + 1, axis=1)[:, rel]
            xs = np.asarray(self.h(win)).astype(np.int64)
            flat = np.ravel_multi_index(tuple(xs[:, j] for j in range(k)), (A,) * k)
            pmf += np.bincount(flat, weights=w, minlength=A**k)
        return pmf.reshape((A,) * k)

    def joint_factors(self, coords, budget=DEFAULT_STATE_BUDGET):
        cs = sorted(coords)
        clusters, cur = [], [cs[0]] if cs else []
        for c in cs[1:]:
            if c - cur[-1] > self.m:
                clusters.append(cur)
                cur = [c]
            else:
                cur.append(c)
        if cur:
            clusters.append(cur)
        return [(self._cluster_pmf(cl, budget), tuple(cl)) for cl in clusters]

    def marginal(self):
        return self._cluster_pmf([0], DEFAULT_STATE_BUDGET)

    def to_json(self):
        return {"type": "block_factor", "m": self.m, "name": self.name,
                "base": self.base.to_json(),
                "alphabet": None if self.alphabet is None else list(self.alphabet)}


def xor_factor(p=None) -> BlockFactor:
    """``X_i = xi_i XOR xi_{i+1}`` over i.i.d. binary letters (1-dependent)."""
    return BlockFactor(IIDFinite("01", p), lambda w: w[..., 0] ^ w[..., 1], 1, "01", name="xor")
