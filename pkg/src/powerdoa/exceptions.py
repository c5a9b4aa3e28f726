"""Exception types raised by powerdoa.

Every error carries a short machine-readable ``code`` that the command line
front end maps onto exit codes and JSON error payloads.
"""


class PowerDoaError(Exception):
    """Base class for all library errors."""

    code = "error"


class InvalidInputError(PowerDoaError, ValueError):
    """Malformed input: wrong shape, non-finite values, bad config."""

    code = "invalid_input"


class NoSignalError(PowerDoaError):
    """The noise-compensated observation is indistinguishable from the noise floor."""

    code = "no_signal"


class UnidentifiableDirectionError(PowerDoaError):
    """The estimator objective is flat, so no direction can be preferred."""

    code = "unidentifiable_direction"


class ModelDegenerateError(PowerDoaError):
    """The model predicts zero compensated power at some angle."""

    code = "model_degenerate"


class OrderSelectionError(PowerDoaError):
    """Every candidate order failed to fit.

    ``reports`` maps order -> the failure (a FitReport or an exception).
    """

    code = "order_selection_failed"

    def __init__(self, message, reports=None):
        super().__init__(message)
        self.reports = dict(reports or {})
