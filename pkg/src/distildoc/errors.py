"""Exception types shared across the package."""


class DistilDocError(Exception):
    """Base class for every contract violation raised by distildoc."""


class DomainError(DistilDocError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ConfigurationError(DistilDocError, ValueError):
    """A run configuration is inconsistent (e.g. a KD method without a teacher)."""


class ParseError(DistilDocError, ValueError):
    """An input file does not match its schema.

    ``location`` is a record index or byte offset, whichever applies.
    """

    def __init__(self, message: str, location: str | int | None = None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)
