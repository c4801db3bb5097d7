"""Input validation helpers used by the estimator front end."""

import numbers

import numpy as np

from .graph import WeightedDigraph, validate_strong_connectivity
from .exceptions import ConfigurationError
from .objective import ObjectiveFamily


def check_graph(graph):
    """Coerce an adjacency matrix or graph and require strong connectivity."""
    g = graph if isinstance(graph, WeightedDigraph) else WeightedDigraph(np.asarray(graph, dtype=float))
    if not validate_strong_connectivity(g):
        raise ConfigurationError(
            "strong connectivity assumption violated: the communication graph is not strongly connected",
            "strong_connectivity")
    return g


def check_family(family, n_agents):
    if not isinstance(family, ObjectiveFamily):
        raise TypeError(f"expected an ObjectiveFamily, got {type(family).__name__}")
    if family.n != n_agents:
        raise ValueError(f"objective family has {family.n} members but the graph has {n_agents} agents")
    return family


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not value > 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_positions(r, n, s):
    """Return ``r`` as a finite ``(n, s)`` float array."""
    r = np.asarray(r, dtype=float)
    if r.ndim == 1 and s == 1:
        r = r[:, None]
    if r.shape != (n, s):
        raise ValueError(f"initial positions must have shape {(n, s)}, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("initial positions must be finite")
    return r
