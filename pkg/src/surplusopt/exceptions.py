"""Exception hierarchy shared by the library and the command line runner."""


class ConfigurationError(ValueError):
    """A configuration violates one of the convergence conditions.

    Parameters
    ----------
    message : str
        Human readable description, always naming the violated condition.
    condition : str
        Short machine readable key, e.g. ``"strong_connectivity"``.
    node : int or None
        1-based index of the offending agent, when the condition is per node.
    """

    def __init__(self, message, condition="configuration", node=None):
        super().__init__(message)
        self.condition = condition
        self.node = node


class DivergenceError(RuntimeError):
    """The iteration produced non-finite values or left the state guard."""

    def __init__(self, message, k):
        super().__init__(message)
        self.k = k


class VerificationError(RuntimeError):
    """Local and stacked engines disagreed during a lockstep run."""

    def __init__(self, message, k, deviation):
        super().__init__(message)
        self.k = k
        self.deviation = deviation


class OracleError(RuntimeError):
    """The centralized solver failed to certify an optimum."""


class UnsupportedProjectionError(NotImplementedError):
    """Projection onto a possibly non-singleton optimal set was requested."""
