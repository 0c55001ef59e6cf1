"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``category`` which the CLI
prints on failure.
"""


class QLMError(Exception):
    category = "error"


class InvalidArgumentError(QLMError, ValueError):
    category = "invalid-argument"


class StructureMismatchError(QLMError, ValueError):
    category = "structure-mismatch"


class ParseError(QLMError, ValueError):
    category = "parse-error"


class DegenerateDataError(QLMError, ValueError):
    category = "degenerate-data"


class ConfigurationError(QLMError, ValueError):
    category = "configuration"


class ArtifactMismatchError(QLMError, ValueError):
    category = "artifact-mismatch"


class IntegrationError(QLMError, ArithmeticError):
    category = "integration"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
