"""Asymmetric and gap-constrained U-statistics over m-dependent sequences.

Exact evaluation, asymptotic means and variances, degeneracy diagnostics, a
Monte-Carlo harness for the limit theorems, and pattern counting in random
strings and permutations.
"""
from .core import (INF, Constraint, ObservationSequence, exact_subconstraints, gap_gt_expansion,
                   u_stat, u_stat_constrained, u_stat_exact_constrained, u_stat_gap_gt)
from .blocks import BlockStructure, block_structure, lift, reduced_kernel, reduced_u_stat
from .errors import (AlphabetMismatch, BudgetExceeded, ConditioningImpossible, CustatsError,
                     DegenerateTarget, Inconclusive, NegativeVariance, NonpositiveDrift,
                     SequenceTooShort, TieError, WindowTooSmall)
from .kernels import (FunctionKernel, Kernel, LinearCombination, PermPatternKernel, ProductKernel,
                      SignKernel, TableKernel, WordKernel, constant_kernel)
from .models import BlockFactor, IIDFinite, IIDUniform01, SequenceModel, uniform_binary, xor_factor
from .moments import degeneracy_test, expected_un, mu, mu_constrained, mu_exact_constrained, sigma2
from .patterns import (count_inversions, count_perm_pattern, count_word_dp, perm_asymptotics,
                       word_asymptotics)

__version__ = "0.1.0"

__all__ = [
    "INF",
    "Constraint",
    "ObservationSequence",
    "exact_subconstraints",
    "gap_gt_expansion",
    "u_stat",
    "u_stat_constrained",
    "u_stat_exact_constrained",
    "u_stat_gap_gt",
    "BlockStructure",
    "block_structure",
    "lift",
    "reduced_kernel",
    "reduced_u_stat",
    "AlphabetMismatch",
    "BudgetExceeded",
    "ConditioningImpossible",
    "CustatsError",
    "DegenerateTarget",
    "Inconclusive",
    "NegativeVariance",
    "NonpositiveDrift",
    "SequenceTooShort",
    "TieError",
    "WindowTooSmall",
    "FunctionKernel",
    "Kernel",
    "LinearCombination",
    "PermPatternKernel",
    "ProductKernel",
    "SignKernel",
    "TableKernel",
    "WordKernel",
    "constant_kernel",
    "BlockFactor",
    "IIDFinite",
    "IIDUniform01",
    "SequenceModel",
    "uniform_binary",
    "xor_factor",
    "degeneracy_test",
    "expected_un",
    "mu",
    "mu_constrained",
    "mu_exact_constrained",
    "sigma2",
    "count_inversions",
    "count_perm_pattern",
    "count_word_dp",
    "perm_asymptotics",
    "word_asymptotics",
]
