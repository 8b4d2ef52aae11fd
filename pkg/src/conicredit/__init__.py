"""Credit-risk pricing engine built around survival-probability dynamics.

Three default models calibrated to one bootstrapped CDS curve:

* a bounded-martingale model in which the conditional survival curve is a
  Gaussian process mapped through the standard normal CDF (closed-form laws
  and an exact simulation scheme),
* a shifted jump-CIR intensity model (deterministic shift, positivity
  enforced at calibration),
* a time-changed CIR intensity model (deterministic clock, positive by
  construction).

On top sit CVA for interest-rate-swap exposure with wrong-way risk and CDS
option pricing with Black implied volatilities.
"""

from .errors import (
    BootstrapError,
    CalibrationError,
    ConfigError,
    ConicreditError,
    DomainError,
    NumericError,
    ParseError,
    ValidationFailure,
)

__version__ = "0.1.0"
