"""Exception hierarchy shared by all weylkit modules."""


class WeylkitError(Exception):
    """Base class for every error raised by weylkit."""

    #: short machine-readable tag used by the CLI error JSON
    kind = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.kind, "message": str(self)}
        for key, val in self.details.items():
            out[key] = val
        return out


class InvalidInputError(WeylkitError, ValueError):
    kind = "invalid-input"


class DomainError(WeylkitError, ValueError):
    """Argument outside the domain of an operation (e.g. real z)."""

    kind = "domain"


class SingularityError(WeylkitError, ArithmeticError):
    """A matrix that must be invertible (or positive definite) is not."""

    kind = "singularity"


class BranchPointError(SingularityError):
    kind = "branch-point"


class TransformSingularityError(SingularityError):
    kind = "transform-singularity"


class ConvergenceError(WeylkitError, RuntimeError):
    """An iterative or limiting procedure did not reach its tolerance."""

    kind = "convergence"


class ResolutionError(WeylkitError, RuntimeError):
    """A discretization is too coarse for the requested accuracy."""

    kind = "resolution"


class ReducibleError(WeylkitError):
    """Raised by diagonalize when the pair (A, N) is not simple.

    ``cyclic_basis`` spans the Krylov space generated by N (invariant under A),
    ``complement_basis`` spans its orthogonal complement.
    """

    kind = "reducible"

    def __init__(self, message, cyclic_basis, complement_basis, **details):
        super().__init__(message, **details)
        self.cyclic_basis = cyclic_basis
        self.complement_basis = complement_basis


class InvariantError(WeylkitError, AssertionError):
    """An internal consistency check failed."""

    kind = "invariant"
