"""Exception types shared across the package (CLI maps them to exit codes)."""


class ConfigError(Exception):
    """Invalid or missing configuration; message names the offending field."""


class NumericError(Exception):
    """Non-finite values or numeric divergence with diagnostic context."""


class DataIOError(Exception):
    """Malformed, missing, or corrupted on-disk artifacts."""
