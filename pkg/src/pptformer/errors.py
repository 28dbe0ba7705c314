"""Error taxonomy shared across the package.

Maps onto the CLI exit codes: invalid arguments -> 2, missing files /
io failures -> 3 (builtin FileNotFoundError / OSError), numeric
failures -> 4.
"""


class InvalidArgumentError(ValueError):
    """Caller passed arguments that violate an operation's contract."""


class NumericError(ArithmeticError):
    """A numeric-domain failure: non-finite inputs or a NaN loss."""
