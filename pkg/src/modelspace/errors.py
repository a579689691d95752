"""Exception hierarchy shared by all modelspace modules."""


class ModelSpaceError(Exception):
    """Base class for every domain error raised by this package."""


class ShapeMismatch(ModelSpaceError):
    def __init__(self, where, expected, got):
        self.where = where
        self.expected = expected
        self.got = got
        super().__init__(f"{where}: expected {expected}, got {got}")


class NonFiniteValue(ModelSpaceError):
    pass


class ParseError(ModelSpaceError):
    pass


class ChecksumMismatch(ModelSpaceError):
    pass


class UnsupportedChannels(ModelSpaceError):
    pass


class DecodeError(ModelSpaceError):
    pass


class EmptyProbe(ModelSpaceError):
    pass


class BadSampleSize(ModelSpaceError):
    pass


class UnitOutOfRange(ModelSpaceError):
    pass


class ExactModeTooLarge(ModelSpaceError):
    def __init__(self, dim, cap):
        self.dim = dim
        self.cap = cap
        super().__init__(
            f"exact attribution needs one pass per representation unit; "
            f"D={dim} exceeds the configured cap of {cap}"
        )


class ProbeMismatch(ModelSpaceError):
    pass


class MethodMismatch(ModelSpaceError):
    pass


class UnknownModel(ModelSpaceError):
    pass


class DegenerateSubspace(ModelSpaceError):
    pass


class BadK(ModelSpaceError):
    pass


class EmptyRelevant(ModelSpaceError):
    pass


class ZeroVariance(ModelSpaceError):
    pass


class IncompleteTable(ModelSpaceError):
    pass


class IdMismatch(ModelSpaceError):
    pass


class TooFewModels(ModelSpaceError):
    pass
