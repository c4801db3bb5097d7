"""Directed communication graphs and the matrices derived from them.

Edge convention: ``weights[i, j] > 0`` means agent ``j`` transmits to agent
``i``. All public indices in edge lists are 1-based; arrays are 0-based.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError

STOCHASTIC_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    """Weighted directed graph on agents ``0..n-1``.

    Parameters
    ----------
    weights : array-like, shape (n, n)
        Nonnegative adjacency weights with a zero diagonal. ``weights[i, j]``
        is the gain agent ``i`` applies to information received from ``j``.
    """

    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.weights, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"weights must be a nonempty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("weights must be finite")
        if np.any(a < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise ValueError("self-loop weights are not allowed (diagonal must be zero)")
        object.__setattr__(self, "weights", _frozen(a))
        object.__setattr__(self, "_in_degree_col", _frozen(a.sum(axis=1)[:, None]))

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def in_degree(self):
        """Weighted in-degree ``sum_j a_ij`` of every agent."""
        return self._in_degree_col[:, 0]

    def in_neighbors(self, i):
        return np.flatnonzero(self.weights[i] > 0)

    def out_neighbors(self, i):
        return np.flatnonzero(self.weights[:, i] > 0)

    def edges(self):
        """List of ``(j, i, a_ij)`` triples, 1-based, sender first."""
        rows, cols = np.nonzero(self.weights > 0)
        order = np.lexsort((rows, cols))
        return [(int(cols[t]) + 1, int(rows[t]) + 1, float(self.weights[rows[t], cols[t]]))
                for t in order]

    def is_balanced(self, tol=1e-12):
        return bool(np.allclose(self.weights.sum(axis=1), self.weights.sum(axis=0), atol=tol, rtol=0))

    def __eq__(self, other):
        if not isinstance(other, WeightedDigraph):
            return NotImplemented
        return self.weights.shape == other.weights.shape and bool(np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash(self.weights.tobytes())


@dataclass(frozen=True, eq=False)
class SurplusMatrix:
    """Column-stochastic mixing matrix for the surplus variables."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    @property
    def n(self):
        return self.matrix.shape[0]


def laplacian(g):
    """Graph Laplacian ``L = diag(A 1) - A``; every row sums to zero."""
    a = g.weights
    lap = -a.copy()
    lap[np.diag_indices_from(lap)] = a.sum(axis=1)
    return lap


def strongly_connected_components(g):
    """Tarjan's algorithm, iterative so deep graphs do not hit the recursion limit.

    Returns
    -------
    list of list of int
        Components in reverse topological order, 0-based node ids.
    """
    n = g.n
    succ = [np.flatnonzero(g.weights[:, v] > 0).tolist() for v in range(n)]
    index = [-1] * n
    lowlink = [0] * n
    on_stack = [False] * n
    stack = []
    components = []
    counter = 0

    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                index[v] = lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            recurse = False
            for t in range(pos, len(succ[v])):
                w = succ[v][t]
                if index[w] == -1:
                    work.append((v, t + 1))
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    lowlink[v] = min(lowlink[v], index[w])
            if recurse:
                continue
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                components.append(sorted(comp))
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
    return components


def validate_strong_connectivity(g):
    """True iff every agent reaches every other agent along directed edges."""
    return len(strongly_connected_components(g)) == 1


def build_surplus_matrix(g, scheme="uniform"):
    """Column-stochastic matrix ``B`` supported on out-edges plus the diagonal.

    Parameters
    ----------
    g : WeightedDigraph
    scheme : {"uniform"} or array-like of shape (n, n)
        ``"uniform"`` gives ``b_ij = 1 / (|N_j^out| + 1)`` on the support.
        An explicit matrix supplies the off-diagonal weights; the diagonal is
        completed to make each column sum to one and must come out strictly
        positive. A nonzero diagonal in the explicit matrix must already be
        consistent with that completion.
    """
    n = g.n
    support = g.weights > 0  # support[i, j]: i receives from j, i.e. i is an out-neighbor of j
    if isinstance(scheme, str):
        if scheme != "uniform":
            raise ValueError(f"unknown surplus weight scheme {scheme!r}")
        b = np.zeros((n, n))
        for j in range(n):
            members = np.flatnonzero(support[:, j])
            share = 1.0 / (members.size + 1)
            b[members, j] = share
            b[j, j] = share
        return SurplusMatrix(b)

    given = np.array(scheme, dtype=float)
    if given.shape != (n, n):
        raise ValueError(f"explicit surplus weights must have shape {(n, n)}, got {given.shape}")
    off = given.copy()
    off[np.diag_indices(n)] = 0.0
    if np.any(off < 0) or not np.all(np.isfinite(off)):
        raise ValueError("explicit surplus weights must be finite and nonnegative")
    if not np.array_equal(off > 0, support):
        raise ValueError("explicit surplus weights must be positive exactly on out-neighbor pairs")
    diag = 1.0 - off.sum(axis=0)
    bad = np.flatnonzero(diag <= 0)
    if bad.size:
        j = int(bad[0])
        raise ValueError(
            f"column {j + 1}: out-neighbor weights sum to {off[:, j].sum():.17g}, "
            "leaving no strictly positive self weight"
        )
    given_diag = np.diag(given)
    if np.any(given_diag != 0) and not np.allclose(given_diag, diag, atol=STOCHASTIC_TOL, rtol=0):
        raise ValueError("explicit surplus weights are not column stochastic")
    off[np.diag_indices(n)] = diag
    return SurplusMatrix(off)


def max_epsilon(g, T):
    """Upper bound on the surplus coupling gain for sampling time ``T``.

    Returns ``min_i (1/T - sum_j a_ij)``. Raises ``ConfigurationError`` naming
    the first offending node when that bound is not positive.
    """
    if not T > 0:
        raise ConfigurationError(f"sampling time must be positive, got {T}", "sampling_time")
    slack = 1.0 / T - g.in_degree
    i = int(np.argmin(slack))
    if slack[i] <= 0:
        raise ConfigurationError(
            f"sampling-time condition fails at node {i + 1}: "
            f"1/T - sum_j a_ij = {slack[i]:.6g} <= 0 (T = {T} is too large for this graph)",
            "sampling_time",
            node=i + 1,
        )
    return float(slack[i])


def ring(n, weight=1.0):
    """Directed cycle ``1 -> 2 -> ... -> n -> 1``.

    ``weight`` is a scalar or a length-``n`` sequence giving the weight of
    edge ``k -> k+1`` (receiver ``k+1``) in that order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    w = np.broadcast_to(np.asarray(weight, dtype=float), (n,)) if np.ndim(weight) == 0 \
        else np.asarray(weight, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"ring needs one weight per edge ({n}), got {w.shape[0]}")
    if np.any(w <= 0):
        raise ValueError("ring weights must be positive")
    a = np.zeros((n, n))
    if n > 1:
        for k in range(n):
            a[(k + 1) % n, k] = w[k]
    return WeightedDigraph(a)


def random_unbalanced(n, p, seed=None, weight_range=(0.1, 0.5)):
    """Random digraph with edge probability ``p`` plus a random Hamiltonian cycle.

    The embedded cycle makes the result strongly connected by construction.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < p <= 1:
        raise ValueError(f"edge probability must lie in (0, 1], got {p}")
    lo, hi = weight_range
    if not 0 < lo <= hi:
        raise ValueError("weight_range must satisfy 0 < low <= high")
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    if n > 1:
        perm = rng.permutation(n)
        mask[np.roll(perm, -1), perm] = True
    a = np.where(mask, rng.uniform(lo, hi, size=(n, n)), 0.0)
    return WeightedDigraph(a)


def from_edge_list(edges, n=None):
    """Build a graph from 1-based ``(j, i, a_ij)`` triples (j sends to i)."""
    triples = []
    for e in edges:
        if len(e) != 3:
            raise ValueError(f"edge must be a (j, i, a_ij) triple, got {e!r}")
        j, i, w = e
        if int(j) != j or int(i) != i:
            raise ValueError(f"edge endpoints must be integers, got {e!r}")
        triples.append((int(j), int(i), float(w)))
    size = n if n is not None else max([max(j, i) for j, i, _ in triples], default=0)
    if size < 1:
        raise ValueError("cannot infer a positive node count from an empty edge list")
    a = np.zeros((size, size))
    seen = set()
    for j, i, w in triples:
        if not (1 <= j <= size and 1 <= i <= size):
            raise ValueError(f"edge ({j}, {i}) out of range 1..{size}")
        if i == j:
            raise ValueError(f"self-loop at node {i}")
        if not (w > 0 and np.isfinite(w)):
            raise ValueError(f"edge ({j}, {i}) has nonpositive weight {w}")
        if (j, i) in seen:
            raise ValueError(f"duplicate edge ({j}, {i})")
        seen.add((j, i))
        a[i - 1, j - 1] = w
    return WeightedDigraph(a)


def parse_edge_list(text):
    """Parse the ``j i a_ij`` text format (one edge per line, ``#`` comments)."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'j i a_ij', got {raw.strip()!r}")
        try:
            j, i, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        edges.append((j, i, w))
    return edges


def read_edge_list(path, n=None):
    return from_edge_list(parse_edge_list(Path(path).read_text()), n=n)


def format_edge_list(g):
    lines = [f"# {g.n} agents, j i a_ij (j sends to i)"]
    lines += [f"{j} {i} {w!r}" for j, i, w in g.edges()]
    return "\n".join(lines) + "\n"


def generate(kind, n, params=None, seed=None):
    """Dispatch to a graph generator by name.

    Parameters
    ----------
    kind : {"ring", "random_unbalanced", "from_edge_list"}
    n : int
        Agent count (optional for ``from_edge_list``, pass ``None`` to infer).
    params : dict, optional
        ``ring``: ``weight`` (scalar or per-edge list).
        ``random_unbalanced``: ``p``, ``weight_range``.
        ``from_edge_list``: ``edges`` (triples) or ``path``.
    seed : int, optional
    """
    params = dict(params or {})
    if kind == "ring":
        return ring(n, params.get("weight", 1.0))
    if kind == "random_unbalanced":
        return random_unbalanced(n, params["p"], seed=seed,
                                 weight_range=tuple(params.get("weight_range", (0.1, 0.5))))
    if kind == "from_edge_list":
        if "edges" in params:
            return from_edge_list(params["edges"], n=n)
        return read_edge_list(params["path"], n=n)
    raise ValueError(f"unknown graph kind {kind!r}")
