"""Exceptions shared across the package, with the CLI exit code map."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_HASH_MISMATCH = 4
EXIT_RESOURCE_CAP = 5


class MpiSimError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(MpiSimError):
    """Invalid configuration value or inconsistent parameter combination."""

    exit_code = EXIT_CONFIG


class UnsupportedTopologyError(ConfigError):
    """Operation requires a specific built-in topology the model does not have."""


class MissingInputError(MpiSimError):
    """A required input artifact does not exist."""

    exit_code = EXIT_MISSING_INPUT


class HashMismatchError(MpiSimError):
    """Stored artifact was produced under a different configuration."""

    exit_code = EXIT_HASH_MISMATCH


class ResourceCapError(MpiSimError):
    """Estimated resource usage exceeds the configured cap."""

    exit_code = EXIT_RESOURCE_CAP
