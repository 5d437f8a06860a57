"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class PSLError(Exception):
    exit_code = 1


class ConfigError(PSLError):
    exit_code = 1


class DataError(PSLError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class EmptyDatasetError(DataError):
    pass


class SamplingError(DataError):
    pass


class NumericError(PSLError):
    exit_code = 3


class TrainingError(NumericError):
    pass


class VerificationError(PSLError):
    exit_code = 4
