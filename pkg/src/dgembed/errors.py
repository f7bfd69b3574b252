"""Exception hierarchy shared across the package."""


class DgembedError(Exception):
    """Base class; ``code`` is the machine-readable tag used by the CLI."""

    code = "error"


class DimensionError(DgembedError, ValueError):
    code = "dimension"


class ConfigurationError(DgembedError, ValueError):
    code = "config"


class ContractError(DgembedError, ValueError):
    code = "contract"


class DataError(DgembedError, ValueError):
    code = "data"


class ParseError(DataError):
    code = "parse"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SamplingError(DgembedError, RuntimeError):
    code = "sampling"


class TrainingError(DgembedError, RuntimeError):
    code = "training"

    def __init__(self, message, epoch=None, timestamp=None):
        self.epoch = epoch
        self.timestamp = timestamp
        super().__init__(f"{message} (epoch={epoch}, timestamp={timestamp})")
