"""Exception hierarchy. The CLI maps each class to an exit code."""


class CovxError(Exception):
    exit_code = 1


class ConfigError(CovxError, ValueError):
    """Invalid configuration; carries an optional JSON pointer."""

    exit_code = 2

    def __init__(self, message: str, pointer: str = ""):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}" if pointer else message)


class DataError(CovxError, ValueError):
    exit_code = 3


class NumericalError(CovxError, RuntimeError):
    exit_code = 4
