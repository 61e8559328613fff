"""Exception classes shared across the toolkit."""


class FormatError(ValueError):
    """A model, lattice or corpus file could not be parsed.

    ``lineno`` is 1-based when known.
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = "line {}: {}".format(lineno, message)
        super().__init__(message)
        self.lineno = lineno


class NumericError(ArithmeticError):
    """A computation produced a non-finite value where one was not allowed."""
