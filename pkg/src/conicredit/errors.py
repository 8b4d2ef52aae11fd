"""Exception hierarchy shared across the library.

Everything derives from ConicreditError so the CLI can map failures to
exit codes in one place: usage problems are raised as ConfigError,
validation-suite failures as ValidationFailure, and anything numeric
(domain violations, failed root searches, non-finite states) as a
NumericError subclass.
"""


class ConicreditError(Exception):
    """Base class for all library errors."""


class ConfigError(ConicreditError):
    """Bad user input: malformed config file, missing key, bad flag value."""


class ParseError(ConfigError):
    """Malformed market-data input; message names the offending line."""


class ValidationFailure(ConicreditError):
    """A model-validation suite reported at least one failed check."""


class NumericError(ConicreditError):
    """Numerical failure during pricing or simulation."""


class DomainError(NumericError):
    """Arguments outside the mathematical domain of an operation."""


class BootstrapError(NumericError):
    """No admissible hazard rate reproduces a CDS quote."""


class CalibrationError(NumericError):
    """Calibration target is unreachable for the given model."""
