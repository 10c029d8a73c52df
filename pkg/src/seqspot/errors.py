"""Exception types shared across the package."""


class DataError(Exception):
    """Malformed or inconsistent input data (files, manifests, formats)."""


class NumericError(Exception):
    """Non-finite values detected where the math contract forbids them."""
