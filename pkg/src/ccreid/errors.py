"""Exception hierarchy shared by every module."""


class ReidError(Exception):
    """Base class for all toolkit errors."""


class ZeroVectorError(ReidError, ValueError):
    pass


class ShapeMismatchError(ReidError, ValueError):
    pass


class StaleCacheError(ReidError, ValueError):
    pass


class LabelOutOfRangeError(ReidError, ValueError):
    pass


class EmptyTripletSetError(ReidError, ValueError):
    pass


class NoValidAnchorError(ReidError, ValueError):
    pass


class InsufficientIdentitiesError(ReidError, ValueError):
    pass


class DivergedLossError(ReidError, FloatingPointError):
    pass


class NoDiscriminativeDirectionError(ReidError, ValueError):
    pass


class SingularCovarianceError(ReidError, ValueError):
    pass


class NonFiniteDistanceError(ReidError, ValueError):
    pass


class NoRelevantTargetError(ReidError, ValueError):
    pass


class InvalidConfigError(ReidError, ValueError):
    pass


class TooFewIdentitiesError(ReidError, ValueError):
    pass


class SingleClothesIdentityError(ReidError, ValueError):
    pass


class KTooLargeError(ReidError, ValueError):
    pass


class DanglingLinkError(ReidError, LookupError):
    pass


class BadMagicError(ReidError, ValueError):
    pass


class TruncatedFileError(ReidError, ValueError):
    pass


class NonFiniteValueError(ReidError, ValueError):
    pass


class UsageError(ReidError):
    pass


class MalformedManifestError(ReidError, ValueError):
    pass
