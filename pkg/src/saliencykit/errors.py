"""Exception hierarchy shared by every module in the package."""


class SaliencyError(ValueError):
    """Base class for all errors raised by saliencykit."""


class AllZeroMap(SaliencyError):
    pass


class EmptyFixations(SaliencyError):
    pass


class EmptyNegatives(SaliencyError):
    pass


class ShapeMismatch(SaliencyError):
    pass


class WrongState(SaliencyError):
    pass


class ConstantMap(SaliencyError):
    pass


class GridTooLarge(SaliencyError):
    pass


class SingularCovariance(SaliencyError):
    pass


class LengthMismatch(SaliencyError):
    pass


class MissingFixations(SaliencyError):
    pass


class IncompatibleScenario(SaliencyError):
    pass


class SchemaError(SaliencyError):
    pass


class ParseError(SaliencyError):
    pass
