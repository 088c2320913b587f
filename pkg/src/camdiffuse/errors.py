"""Exception hierarchy.

Everything a caller can trigger with bad input derives from ``InputError``;
the CLI maps those to exit code 2 and anything else to exit code 1.
"""


class InputError(ValueError):
    """Base class for contract violations caused by the caller's data."""


# array-io
class MalformedHeader(InputError):
    pass


class UnsupportedDtype(InputError):
    pass


class TruncatedData(InputError):
    pass


class InvalidShape(InputError):
    pass


class IoFailure(InputError):
    pass


class ManifestError(InputError):
    pass


# cam-core
class ClassOutOfRange(InputError):
    pass


class ChannelMismatch(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class InvalidAttention(InputError):
    pass


class InvalidTarget(InputError):
    pass


# coneighbor / diffusion / rw-refine
class NonFiniteInput(InputError):
    pass


class KOutOfRange(InputError):
    pass


class GridMismatch(InputError):
    pass


# mask-eval
class DimensionMismatch(InputError):
    pass


class DuplicateClass(InputError):
    pass


class EmptyEvaluation(InputError):
    pass


# synth
class OracleSizeExceeded(InputError):
    pass
