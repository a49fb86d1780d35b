"""Exception hierarchy shared by all modules."""


class CustatsError(Exception):
    """Base class for every error raised by this package."""


class BudgetExceeded(CustatsError):
    """A naive enumeration or exact state space is larger than the allowed budget."""


class TieError(CustatsError, ValueError):
    """Order-based kernel applied to a sequence with repeated values."""


class AlphabetMismatch(CustatsError, ValueError):
    """A symbol is not part of the declared alphabet."""


class WindowTooSmall(CustatsError, ValueError):
    """Window width M must exceed the constraint's total finite gap."""


class SequenceTooShort(CustatsError, ValueError):
    """Sequence shorter than the requested window width."""


class NegativeVariance(CustatsError, ArithmeticError):
    """Asymptotic variance came out negative beyond round-off."""


class Inconclusive(CustatsError):
    """Monte-Carlo standard error is too large to decide degeneracy."""


class DegenerateTarget(CustatsError, ValueError):
    """Normal comparison requested for a target variance of zero."""


class NonpositiveDrift(CustatsError, ValueError):
    """Renewal stopping needs E h(X_1) > 0."""


class ConditioningImpossible(CustatsError):
    """The conditioning event S_{N_-(x)} = x has probability zero (or too small)."""
