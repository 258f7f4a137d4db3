"""Exception hierarchy shared by every module, with process exit codes."""

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class PretrainkitError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class SpecError(PretrainkitError):
    """Invalid model spec, config file, or CLI flag combination."""

    exit_code = EXIT_SPEC


class ShapeError(SpecError):
    """Tensor shape contract violation; message names the offending shapes."""


class DataError(PretrainkitError):
    """Malformed corpus / dataset input."""

    exit_code = EXIT_DATA


class CheckpointError(PretrainkitError):
    """Unreadable, truncated, or incompatible checkpoint file."""

    exit_code = EXIT_DATA


class NumericError(PretrainkitError):
    """Non-finite loss or other numeric abort during training."""

    exit_code = EXIT_NUMERIC


class EmptyLossError(PretrainkitError):
    """Every candidate position in the batch was ignored.

    Targets convert this into a skip-batch signal instead of letting it
    surface as NaN.
    """
