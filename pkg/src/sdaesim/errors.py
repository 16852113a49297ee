"""Exception hierarchy shared by all modules."""


class SdaeError(Exception):
    """Base class for every domain error raised by this package.

    Errors raised while integrating carry the failing step index in ``step``.
    """

    step = None


class NonFiniteMatrix(SdaeError):
    pass


class RankChange(SdaeError):
    pass


class InvalidResolution(SdaeError):
    pass


class GridMismatch(SdaeError):
    pass


class InvalidSpec(SdaeError):
    pass


class NonFiniteCoefficient(SdaeError):
    pass


class SingularIterationMatrix(SdaeError):
    pass


class SingularConstraintMatrix(SdaeError):
    pass


class Overflow(SdaeError):
    pass
