"""Exception types raised across the package."""


class PoloptError(Exception):
    pass


class SingularSystem(PoloptError):
    pass


class NonErgodicChain(PoloptError):
    pass


class EmptyBatch(PoloptError, ValueError):
    pass


class UnsupportedAction(PoloptError):
    pass


class DegenerateGradient(PoloptError):
    pass


class UnstableGains(PoloptError):
    def __init__(self, msg, gains=None):
        super().__init__(msg)
        self.gains = gains


class SingularCovariance(PoloptError):
    pass


class NonFiniteValue(PoloptError):
    pass


class TooLarge(PoloptError):
    pass


class ValidationError(PoloptError, ValueError):
    pass
