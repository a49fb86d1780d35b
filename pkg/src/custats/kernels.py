"""Kernel families for (constrained) U-statistics.

A kernel is a real function of ``arity`` observations.  Kernels over a finite
alphabet work on integer symbol codes internally (``0..A-1``); kernels over
real observations (permutation patterns, the sign kernel, arbitrary
functions) work on floats.

Every kernel implements :meth:`Kernel.batch`, which evaluates the kernel on a
stack of argument tuples of shape ``(N, arity, ...)`` and returns an array of
length ``N``.  The trailing dimensions are empty for plain observations and
``(M,)`` for lifted windows (see :mod:`custats.blocks`).
"""
from __future__ import annotations

import itertools
import json
import numbers
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AlphabetMismatch

__all__ = [
    "Kernel",
    "TableKernel",
    "ProductKernel",
    "WordKernel",
    "PermPatternKernel",
    "SignKernel",
    "FunctionKernel",
    "LinearCombination",
    "constant_kernel",
    "as_alphabet",
]


def as_alphabet(alphabet) -> tuple:
    """Normalize an alphabet (string of letters or iterable) to a tuple."""
    if isinstance(alphabet, str):
        symbols = tuple(alphabet)
    else:
        symbols = tuple(alphabet)
    if len(set(symbols)) != len(symbols):
        raise ValueError(f"alphabet has repeated symbols: {symbols!r}")
    if not symbols:
        raise ValueError("alphabet must be nonempty")
    return symbols


def encode(alphabet: tuple, seq) -> np.ndarray:
    """Map a sequence of symbols to integer codes, rejecting unknown symbols."""
    if isinstance(seq, str):
        seq = list(seq)
    arr = np.asarray(seq, dtype=object if not isinstance(seq, np.ndarray) else None)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    lookup = {s: i for i, s in enumerate(alphabet)}
    uniq, inv = np.unique(arr.astype(object) if arr.dtype.kind == "O" else arr, return_inverse=True)
    codes = np.empty(len(uniq), dtype=np.int64)
    for k, u in enumerate(uniq.tolist()):
        try:
            codes[k] = lookup[u]
        except KeyError:
            # numeric alphabets may be declared as strings and vice versa
            alt = str(u)
            if alt in lookup:
                codes[k] = lookup[alt]
            else:
                raise AlphabetMismatch(f"symbol {u!r} not in alphabet {alphabet!r}") from None
    return codes[inv.reshape(arr.shape)]


class Kernel:
    """Base class.  Subclasses set ``arity``, ``alphabet`` and implement ``batch``."""

    arity: int
    alphabet: tuple | None = None
    integer_valued: bool = False
    order_based: bool = False

    @property
    def is_finite(self) -> bool:
        return self.alphabet is not None

    @property
    def A(self) -> int:
        return len(self.alphabet) if self.alphabet is not None else 0

    def batch(self, vals: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode(self, seq) -> np.ndarray:
        if self.alphabet is None:
            return np.asarray(seq, dtype=float)
        return encode(self.alphabet, seq)

    def __call__(self, *args):
        if len(args) != self.arity:
            raise TypeError(f"kernel of arity {self.arity} called with {len(args)} arguments")
        vals = self.encode(list(args))[None, :]
        out = self.batch(vals)[0]
        return int(out) if self.integer_valued else float(out)

    def table(self) -> np.ndarray:
        """Values on all of ``A^arity`` as an array of shape ``(A,)*arity``."""
        if self.alphabet is None:
            raise TypeError("table() needs a finite alphabet")
        A, ell = self.A, self.arity
        grid = np.indices((A,) * ell).reshape(ell, -1).T
        return self.batch(grid).reshape((A,) * ell)

    # linear structure -------------------------------------------------
    def __add__(self, other: "Kernel") -> "LinearCombination":
        return LinearCombination([(1, self), (1, other)])

    def __sub__(self, other: "Kernel") -> "LinearCombination":
        return LinearCombination([(1, self), (-1, other)])

    def __rmul__(self, c) -> "LinearCombination":
        return LinearCombination([(c, self)])

    def __neg__(self) -> "LinearCombination":
        return LinearCombination([(-1, self)])


class TableKernel(Kernel):
    """Arbitrary kernel over a finite alphabet given by its full value table."""

    def __init__(self, alphabet, values):
        self.alphabet = as_alphabet(alphabet)
        values = np.asarray(values)
        A = len(self.alphabet)
        ell = values.ndim
        if values.shape != (A,) * ell:
            raise ValueError(f"table shape {values.shape} does not match alphabet size {A}")
        if not np.all(np.isfinite(values)):
            raise ValueError("table values must be finite")
        if values.dtype.kind in "iub":
            values = values.astype(np.int64)
            self.integer_valued = True
        else:
            values = values.astype(float)
        values.setflags(write=False)
        self.values = values
        self.arity = ell

    def __repr__(self):
        flat = ",".join(format(v, ".17g") if isinstance(v, float) else str(v)
                        for v in self.values.ravel().tolist())
        return f"TableKernel({''.join(map(str, self.alphabet))!r}, arity={self.arity}, [{flat}])"

    @classmethod
    def from_flat(cls, alphabet, arity: int, flat: Sequence) -> "TableKernel":
        alphabet = as_alphabet(alphabet)
        A = len(alphabet)
        flat = list(flat)
        if len(flat) != A**arity:
            raise ValueError(f"expected {A**arity} values, got {len(flat)}")
        if all(isinstance(v, numbers.Integral) for v in flat):
            arr = np.array(flat, dtype=np.int64)
        else:
            arr = np.array(flat, dtype=float)
        return cls(alphabet, arr.reshape((A,) * arity))

    @classmethod
    def from_json(cls, doc) -> "TableKernel":
        """Load ``{"alphabet": [...], "arity": l, "values": [...]}`` (row-major)."""
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        extra = set(doc) - {"alphabet", "arity", "values"}
        if extra:
            raise ValueError(f"unknown table fields: {sorted(extra)}")
        return cls.from_flat(doc["alphabet"], int(doc["arity"]), doc["values"])

    @classmethod
    def from_function(cls, alphabet, arity: int, func: Callable) -> "TableKernel":
        alphabet = as_alphabet(alphabet)
        vals = [func(*w) for w in itertools.product(alphabet, repeat=arity)]
        return cls.from_flat(alphabet, arity, vals)

    def to_json(self) -> dict:
        flat = self.values.reshape(-1).tolist()
        return {"alphabet": list(self.alphabet), "arity": self.arity, "values": flat}

    def batch(self, vals):
        vals = np.asarray(vals)
        return self.values[tuple(vals[:, k] for k in range(self.arity))]

    def table(self):
        return self.values


class ProductKernel(Kernel):
    """Product-form kernel ``f(x_1..x_l) = prod_k h_k(x_k)`` over a finite alphabet."""

    def __init__(self, alphabet, factors):
        self.alphabet = as_alphabet(alphabet)
        fs = [np.asarray(h) for h in factors]
        for h in fs:
            if h.shape != (len(self.alphabet),):
                raise ValueError("each factor must have one value per letter")
        self.integer_valued = all(h.dtype.kind in "iub" for h in fs)
        self.factors = tuple(h.astype(np.int64 if self.integer_valued else float) for h in fs)
        self.arity = len(fs)

    def __repr__(self):
        return f"ProductKernel({''.join(map(str, self.alphabet))!r}, {[h.tolist() for h in self.factors]})"

    def batch(self, vals):
        vals = np.asarray(vals)
        out = np.ones(vals.shape[0], dtype=np.int64 if self.integer_valued else float)
        for k, h in enumerate(self.factors):
            out = out * h[vals[:, k]]
        return out

    def table(self):
        out = np.ones((), dtype=self.factors[0].dtype if self.factors else np.int64)
        for h in self.factors:
            out = np.multiply.outer(out, h)
        return out


class WordKernel(ProductKernel):
    """Indicator that ``(x_1..x_l)`` spells the word ``w``.

    If ``alphabet`` is omitted, binary words default to ``"01"``; other words
    default to their sorted set of letters.
    """

    def __init__(self, word, alphabet=None):
        letters = tuple(word)
        if not letters:
            raise ValueError("word must be nonempty")
        if alphabet is None:
            alphabet = "01" if set(letters) <= {"0", "1"} else sorted(set(letters))
        alphabet = as_alphabet(alphabet)
        self.word = letters
        self.codes = encode(alphabet, list(letters))
        A = len(alphabet)
        factors = [np.eye(A, dtype=np.int64)[c] for c in self.codes]
        super().__init__(alphabet, factors)

    def __repr__(self):
        return f"WordKernel({''.join(map(str, self.word))!r})"

    def batch(self, vals):
        vals = np.asarray(vals)
        return np.all(vals == self.codes, axis=1).astype(np.int64)


def _check_perm(tau) -> tuple:
    tau = tuple(int(t) for t in tau)
    if sorted(tau) != list(range(1, len(tau) + 1)):
        raise ValueError(f"{tau} is not a permutation of 1..{len(tau)}")
    return tau


class PermPatternKernel(Kernel):
    """Indicator that ``(x_1..x_l)`` is order-isomorphic to the pattern ``tau``."""

    order_based = True
    integer_valued = True

    def __init__(self, tau):
        if isinstance(tau, str):
            tau = [int(c) for c in tau]
        self.tau = _check_perm(tau)
        self.arity = len(self.tau)

    def __repr__(self):
        return f"PermPatternKernel({''.join(map(str, self.tau))!r})"

    def batch(self, vals):
        vals = np.asarray(vals)
        out = np.ones(vals.shape[0], dtype=bool)
        t = self.tau
        for i in range(self.arity):
            for j in range(i + 1, self.arity):
                out &= (vals[:, i] < vals[:, j]) == (t[i] < t[j])
        return out.astype(np.int64)


class SignKernel(Kernel):
    """Sign of the permutation given by the relative order of the arguments."""

    order_based = True
    integer_valued = True

    def __init__(self, ell: int):
        if ell < 1:
            raise ValueError("ell must be >= 1")
        self.arity = int(ell)

    def __repr__(self):
        return f"SignKernel({self.arity})"

    def batch(self, vals):
        vals = np.asarray(vals)
        inv = np.zeros(vals.shape[0], dtype=np.int64)
        for i in range(self.arity):
            for j in range(i + 1, self.arity):
                inv += vals[:, i] > vals[:, j]
        return 1 - 2 * (inv & 1)


class FunctionKernel(Kernel):
    """Wrap a Python callable ``func(x_1, ..., x_l)``.

    With ``vectorized=True`` the callable receives one numpy column per
    argument; otherwise it is called once per tuple.  For finite alphabets the
    arguments are the symbols themselves, not their codes.
    """

    def __init__(self, func: Callable, arity: int, alphabet=None, *, vectorized=True,
                 integer_valued=False, order_based=False):
        self.func = func
        self.arity = int(arity)
        self.alphabet = None if alphabet is None else as_alphabet(alphabet)
        self.vectorized = vectorized
        self.integer_valued = integer_valued
        self.order_based = order_based

    def __repr__(self):
        name = getattr(self.func, "__name__", type(self.func).__name__)
        return f"FunctionKernel({name}, arity={self.arity})"

    def batch(self, vals):
        vals = np.asarray(vals)
        if self.alphabet is not None:
            vals = np.asarray(self.alphabet, dtype=object)[vals]
        N = vals.shape[0]
        dtype = np.int64 if self.integer_valued else float
        if self.vectorized:
            try:
                out = np.asarray(self.func(*[vals[:, k] for k in range(self.arity)]))
                if out.shape in ((N,), ()):
                    return np.broadcast_to(out, (N,)).astype(dtype)
            except Exception:  # fall back to scalar calls
                pass
        return np.fromiter((self.func(*row) for row in vals), dtype=dtype, count=N)


def constant_kernel(c, arity: int, alphabet=None) -> FunctionKernel:
    integer = isinstance(c, numbers.Integral)
    return FunctionKernel(lambda *xs: np.full(len(xs[0]) if xs else 1, c), arity, alphabet,
                          integer_valued=integer)


class LinearCombination(Kernel):
    """``sum_k c_k f_k`` for kernels sharing arity and domain."""

    def __init__(self, terms: Iterable):
        flat = []
        for c, k in terms:
            if isinstance(k, LinearCombination):
                flat.extend((c * c2, k2) for c2, k2 in k.terms)
            else:
                flat.append((c, k))
        if not flat:
            raise ValueError("empty linear combination")
        arities = {k.arity for _, k in flat}
        alphabets = {k.alphabet for _, k in flat}
        if len(arities) != 1 or len(alphabets) != 1:
            raise ValueError("terms must share arity and alphabet")
        self.terms = tuple(flat)
        self.arity = arities.pop()
        self.alphabet = alphabets.pop()
        self.integer_valued = all(
            isinstance(c, numbers.Integral) and k.integer_valued for c, k in flat)
        self.order_based = all(k.order_based for _, k in flat)

    def __repr__(self):
        return " + ".join(f"{c}*{k!r}" for c, k in self.terms)

    def batch(self, vals):
        out = None
        for c, k in self.terms:
            v = c * k.batch(vals)
            out = v if out is None else out + v
        return out

    def table(self):
        out = None
        for c, k in self.terms:
            v = c * k.table()
            out = v if out is None else out + v
        return out

