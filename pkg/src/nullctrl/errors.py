"""Exception hierarchy shared by every module of the package."""


class NullCtrlError(Exception):
    """Base class for all package errors."""


# geometry
class NonPositiveDimension(NullCtrlError, ValueError):
    pass


class TooCoarse(NullCtrlError, ValueError):
    pass


class SubdomainError(NullCtrlError, ValueError):
    """Subdomain outside the domain or resolved by too few grid nodes."""


class MarginTooSmall(NullCtrlError, ValueError):
    pass


# coupling
class CyclicCoupling(NullCtrlError, ValueError):
    pass


class SelfLoop(NullCtrlError, ValueError):
    pass


# weights
class SubdomainTouchesBoundary(NullCtrlError, ValueError):
    pass


class EvalAtSingularTime(NullCtrlError, ValueError):
    pass


# pde
class SingularStep(NullCtrlError, ArithmeticError):
    pass


class NonFiniteState(NullCtrlError, ArithmeticError):
    pass


class NewtonDiverged(NullCtrlError, ArithmeticError):
    pass


# hum
class CGStalled(NullCtrlError, ArithmeticError):
    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class InconsistentOptimality(NullCtrlError, ArithmeticError):
    pass


# carleman
class DegenerateSample(NullCtrlError, ArithmeticError):
    pass


class PowerIterationStalled(NullCtrlError, ArithmeticError):
    def __init__(self, msg, quotients=None):
        super().__init__(msg)
        self.quotients = quotients or []


# nonlinear
class RangeExceeded(NullCtrlError, ValueError):
    pass


class FixedPointFailure(NullCtrlError, ArithmeticError):
    """Base for fixed-point loop failures; carries the partial trace."""

    status = "failed"

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class ClassMembershipLost(FixedPointFailure):
    status = "class_membership_lost"


class NoConvergence(FixedPointFailure):
    status = "no_convergence"


# scenario loading
class ParseError(NullCtrlError, ValueError):
    pass


class SchemaError(NullCtrlError, ValueError):
    pass


class ValidationFailed(NullCtrlError, ValueError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report
