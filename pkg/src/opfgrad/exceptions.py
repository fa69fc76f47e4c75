"""Exception hierarchy for opfgrad."""


class OPFError(Exception):
    """Base class for all errors raised by opfgrad."""


class CaseError(OPFError, ValueError):
    """A case file or network violates its schema or invariants.

    ``path`` names the offending field (e.g. ``edges[3].b``) when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DimensionError(CaseError):
    pass


class InfeasibleError(OPFError):
    """The OPF has no feasible point for the given load."""


class MultipleOptima(OPFError):
    """The OPF optimum is not unique, so the operator is set valued here."""


class DependentSets(OPFError):
    """A binding combination has linearly dependent constraint gradients."""


class SingularCombo(DependentSets):
    pass


class ConstructionFailed(OPFError):
    pass


class RegionBoundary(OPFError):
    """The binding set changes inside the finite-difference stencil."""


class NotOptimal(OPFError):
    pass


class SingularM(OPFError):
    def __init__(self, message, condition=None):
        self.condition = condition
        super().__init__(message)


class BudgetExceeded(OPFError):
    pass
