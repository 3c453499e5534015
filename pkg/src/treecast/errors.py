"""Exception hierarchy shared by all treecast modules."""


class TreecastError(Exception):
    """Base class for every error raised by this package."""


class NonStochastic(TreecastError, ValueError):
    """A transition matrix row does not sum to one."""


class NegativeEntry(TreecastError, ValueError):
    """A transition matrix has a negative entry."""


class NotErgodic(TreecastError, ValueError):
    """The operation needs an irreducible, aperiodic chain."""


class DomainError(TreecastError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class DegenerateChannel(TreecastError, ValueError):
    """No contraction vector exists (e.g. the channel is rank one)."""


class SingularChannel(TreecastError, ValueError):
    """The second eigenvalue vanishes, so count statistics are undefined."""


class SizeOverflow(TreecastError, ValueError):
    """An enumeration or allocation would exceed its configured cap."""


class GroupingFailure(TreecastError, RuntimeError):
    """Thresholded sibling statistics did not split into groups of size d."""


class RangeError(TreecastError, ValueError):
    """A statistical query returned values outside [0, 1]."""
