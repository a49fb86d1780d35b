"""Pre-wired worked cases: kernel, constraint, model and per-example checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Constraint
from .kernels import Kernel, PermPatternKernel, TableKernel, WordKernel
from .models import IIDFinite, IIDUniform01, SequenceModel, uniform_binary
from .spectral import e4_table

__all__ = ["NamedExample", "EXAMPLES", "get_example", "e0_kernel", "e21_kernel", "e4_kernel",
           "e0_closed_form"]


def e0_kernel() -> TableKernel:
    """``f(x, y, z) = (x - y) z`` on binary letters; paired with ``D = (1, inf)``."""
    x, y, z = np.indices((2, 2, 2))
    return TableKernel("01", (x - y) * z)


def e0_closed_form(x) -> int:
    """``x_1 sum_{j>=3} x_j - sum_{j>=3} x_{j-1} x_j`` for a 0/1 sequence."""
    x = np.asarray(x, dtype=np.int64)
    if len(x) < 3:
        return 0
    return int(x[0] * x[2:].sum() - (x[1:-1] * x[2:]).sum())


def e21_kernel() -> TableKernel:
    """``(1{x=1} - 1{x=0}) (1{y=1} - 1{y=0})`` on binary letters."""
    s = np.array([-1, 1])
    return TableKernel("01", np.outer(s, s))


def e4_kernel() -> TableKernel:
    """``(1{x=a} - 1{x=b}) (1{y=c} - 1{y=d})`` on four letters."""
    return TableKernel("abcd", e4_table())


@dataclass
class NamedExample:
    name: str
    kernel: Kernel
    constraint: Constraint
    model: SequenceModel
    description: str
    identity: Callable | None = None
    notes: dict = field(default_factory=dict)


def _build(name: str) -> NamedExample:
    if name == "e0":
        return NamedExample("e0", e0_kernel(), Constraint((1, "inf")), uniform_binary(),
                            "(x-y)z with gaps (1, inf): degenerate, n^-1 U_n -> (X_1 - 1/2)/2",
                            identity=lambda x, u: e0_closed_form(x) == int(round(u)))
    if name == "e21":
        return NamedExample("e21", e21_kernel(), Constraint.unconstrained(2), uniform_binary(),
                            "signed product on binary letters: U_n = (sum)^2/2 - n/2")
    if name == "e4":
        return NamedExample("e4", e4_kernel(), Constraint.unconstrained(2), IIDFinite("abcd"),
                            "four-letter degenerate kernel with eigenvalues 1/((2N+1) pi)")
    if name == "inversions":
        return NamedExample("inversions", PermPatternKernel("21"), Constraint.unconstrained(2),
                            IIDUniform01(), "pattern 21 in random permutations")
    if name == "word-101":
        return NamedExample("word-101", WordKernel("101"), Constraint.unconstrained(3),
                            uniform_binary(), "word 101 in uniform binary strings")
    raise KeyError(name)


EXAMPLES = ("e0", "e21", "e4", "inversions", "word-101")


def get_example(name: str) -> NamedExample:
    if name not in EXAMPLES:
        raise ValueError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    return _build(name)
