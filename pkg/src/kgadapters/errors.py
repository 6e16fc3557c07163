"""Exception taxonomy mapped to CLI exit codes (1/2/3)."""


class ConfigError(ValueError):
    """Invalid configuration or input data (exit code 1)."""


class DataError(ConfigError):
    """Malformed or inconsistent data file; message carries the location."""


class ContractViolation(RuntimeError):
    """A frozen parameter group changed during a stage (exit code 3)."""
