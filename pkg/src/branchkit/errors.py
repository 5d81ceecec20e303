"""Exception types raised across branchkit."""


class BranchkitError(Exception):
    """Base class; the CLI maps it to exit code 2 (bad input)."""


class DegenerateSkeleton(BranchkitError):
    pass


class OutOfRange(BranchkitError):
    pass


class EmptyView(BranchkitError):
    pass


class InvalidParams(BranchkitError):
    pass


class EmptyCloud(BranchkitError):
    pass


class EmptySkeleton(BranchkitError):
    pass


class TooFewPoints(BranchkitError):
    pass


class TooSparse(BranchkitError):
    pass


class LengthMismatch(BranchkitError):
    pass


class ZeroGroundTruth(BranchkitError):
    pass


class DuplicateBranchId(BranchkitError):
    pass


class UnknownBranchId(BranchkitError):
    pass


class Divergence(BranchkitError):
    """Numerical failure during optimisation (CLI exit code 3)."""


class IoError(BranchkitError):
    """Unreadable, malformed or unwritable file."""
