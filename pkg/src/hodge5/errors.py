"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError -> 3,
InvariantViolation -> 4. Plain argument misuse raises ValueError.
"""


class Hodge5Error(Exception):
    """Base class for package-specific errors."""


class MetricError(Hodge5Error, ValueError):
    """Input is not a valid (symmetric positive-definite) metric."""


class ZeroModeError(Hodge5Error, ValueError):
    """Operation undefined at a degenerate input (zero mode, zero eigenvalue)."""


class ContractError(Hodge5Error):
    """A documented precondition was violated (bad eigenfield residual,
    non-orthonormal basis, non-invariant subspace, field support outside mask)."""


class NumericalError(Hodge5Error):
    """A solver failed to converge, or a spectral window captured the wrong
    number of eigenvalues (gap too small). Carries diagnostics in args."""


class InvariantViolation(Hodge5Error):
    """A mathematically guaranteed identity failed beyond tolerance.

    Signals an implementation bug or an unresolvably coarse discretization,
    never an expected runtime condition."""


class ConfigError(Hodge5Error):
    """Malformed experiment configuration."""
