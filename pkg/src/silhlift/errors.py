"""Exception types shared across the package."""


class SilhliftError(Exception):
    """Base class for errors raised by this package."""


class InputDataError(SilhliftError):
    """Bad user-supplied input: manifests, schemas, file formats, CLI
    arguments. The CLI maps these to exit code 2."""
