"""Exception hierarchy shared by all modules."""


class NqcsError(Exception):
    """Base class for toolkit errors."""


class InvalidArguments(NqcsError, ValueError):
    pass


class ConfigurationError(NqcsError, ValueError):
    pass


class IntegrationDiverged(NqcsError, ArithmeticError):
    """A state component became non-finite during flow integration."""

    def __init__(self, message, last_t=None, last_state=None):
        super().__init__(message)
        self.last_t = last_t
        self.last_state = last_state


class InvalidInitialState(NqcsError, ValueError):
    pass


class ZenoDetected(NqcsError, RuntimeError):
    pass


class SaturationError(NqcsError, RuntimeError):
    """A quantizer input left its range set."""

    def __init__(self, message, node=None, time=None, value=None):
        super().__init__(message)
        self.node = node
        self.time = time
        self.value = value


class UnsupportedCombination(NqcsError, ValueError):
    pass


class InvalidWeighting(NqcsError, ValueError):
    pass


class WrongPhase(NqcsError, ValueError):
    pass


class NumericalFailure(NqcsError, ArithmeticError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class CertificationDomainError(NqcsError, ValueError):
    pass
