"""Exception hierarchy shared by all sublevy modules."""


class SublevyError(Exception):
    pass


class ConfigurationError(SublevyError):
    """Invalid user input: bad grid sizes, malformed files, out-of-range parameters."""


class ConsistencyError(SublevyError):
    """A computed quantity violated an internal invariant; signals a bug, not bad input."""


class BudgetError(SublevyError):
    """A computation exceeded its hard iteration budget (e.g. pathological series length)."""
