"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front-end can map a
failure class to a distinct process status.
"""


class FlowDepthError(Exception):
    exit_code = 1


# geometry


class DegenerateRay(FlowDepthError, ValueError):
    """The pixel has no usable parallax (epipole or zero baseline)."""

    exit_code = 4


class DimensionMismatch(FlowDepthError, ValueError):
    exit_code = 4


# optimisation


class NonFiniteObjective(FlowDepthError, FloatingPointError):
    exit_code = 5


# fusion / evaluation


class NoValidSource(FlowDepthError, LookupError):
    exit_code = 6

    def __init__(self, direction, message=None):
        self.direction = direction
        super().__init__(message or f"no source frame beyond threshold ({direction})")


class EmptyInput(FlowDepthError, ValueError):
    exit_code = 6


class AllInvalid(FlowDepthError, ValueError):
    exit_code = 6


class NoGroundTruth(FlowDepthError, ValueError):
    exit_code = 6


class EmptyScene(FlowDepthError, ValueError):
    exit_code = 6


# file formats


class MalformedFile(FlowDepthError, ValueError):
    exit_code = 3


class BadMagic(MalformedFile):
    pass


class TruncatedFile(MalformedFile):
    pass


class TrailingData(MalformedFile):
    pass


class DimensionOverflow(MalformedFile):
    pass


class BadHeader(MalformedFile):
    pass


class UnknownExtension(MalformedFile):
    pass


class BadLine(MalformedFile):
    def __init__(self, line_no, message=None):
        self.line_no = line_no
        super().__init__(message or f"line {line_no}: malformed")


class NonRigidRotation(MalformedFile):
    pass


class BadConfig(MalformedFile):
    pass
