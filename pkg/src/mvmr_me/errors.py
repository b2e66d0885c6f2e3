"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: InputError -> 2, EstimationError -> 3,
anything else -> 4.
"""


class MvmrError(Exception):
    """Base class for all package errors."""


class InputError(MvmrError, ValueError):
    """Malformed or contract-violating input (files, matrices, options)."""


class EstimationError(MvmrError, RuntimeError):
    """An estimator could not produce a result (singularity, degeneracy)."""
