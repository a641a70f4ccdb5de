"""Exception types shared across the package."""
from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the region where the operation is defined."""


class ContractError(ValueError):
    """A precondition on a kernel or path family is violated."""


class SolverError(RuntimeError):
    """A root search or bisection could not be bracketed or did not converge."""


class SizeError(MemoryError):
    """An exact construction would exceed the configured state-space cap."""


class PositivityError(ValueError):
    """An operator expected to be positive semidefinite has a negative eigenvalue."""


class PartitionError(RuntimeError):
    """A state-space decomposition found more modes than the landscape allows."""


class CapError(RuntimeError):
    """An iteration hit its configured step cap before converging."""
