class FeINFNError(Exception):
    pass


class ConfigError(FeINFNError, ValueError):
    pass


class DataError(FeINFNError):
    pass


class NumericalError(FeINFNError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NonFiniteLossError(NumericalError):
    pass
