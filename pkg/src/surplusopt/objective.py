"""Private objectives, their sum, and a centralized reference solver."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import OracleError, UnsupportedProjectionError

CLOSED_FORM_TOL = 1e-10


class Quadratic:
    """``f(x) = 0.5 (x - c)^T Q (x - c)`` with symmetric positive definite ``Q``."""

    kind = "quadratic"
    unique_optimum = True

    def __init__(self, Q, c):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        s = c.shape[0]
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 0 or Q.size == 1 and s == 1:
            Q = Q.reshape(1, 1)
        elif Q.ndim == 1 and Q.size == s * s:
            Q = Q.reshape(s, s)
        if Q.shape != (s, s):
            raise ValueError(f"Q must be {s}x{s} to match c, got shape {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=0):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be positive definite so the minimizer set is bounded")
        self.Q = Q
        self.c = c

    @property
    def dim(self):
        return self.c.shape[0]

    def value(self, x):
        d = x - self.c
        return 0.5 * float(d @ self.Q @ d)

    def grad(self, x):
        return self.Q @ (x - self.c)

    def to_dict(self):
        return {"Q": self.Q.ravel().tolist(), "c": self.c.tolist()}


class Quartic:
    """``f(x) = sum_d (x_d - c_d)^4``; convex with an unbounded gradient."""

    kind = "quartic"
    unique_optimum = True

    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))

    @property
    def dim(self):
        return self.c.shape[0]

    def value(self, x):
        return float(np.sum((x - self.c) ** 4))

    def grad(self, x):
        return 4.0 * (x - self.c) ** 3

    def to_dict(self):
        return {"c": self.c.tolist()}


class Custom:
    """User supplied convex differentiable function.

    Coercivity (bounded minimizer set) cannot be checked numerically and
    remains the caller's obligation. Set ``unique_optimum=True`` only when the
    team objective is known to have a single minimizer; projections onto the
    optimal set are refused otherwise.
    """

    kind = "custom"

    def __init__(self, value, grad, dim, unique_optimum=False):
        self._value = value
        self._grad = grad
        self._dim = int(dim)
        self.unique_optimum = unique_optimum

    @property
    def dim(self):
        return self._dim

    def value(self, x):
        return float(self._value(x))

    def grad(self, x):
        return np.asarray(self._grad(x), dtype=float).reshape(self._dim)


def _central_difference(member, x, h):
    x = np.asarray(x, dtype=float)
    est = np.empty_like(x)
    for d in range(x.shape[0]):
        e = np.zeros_like(x)
        e[d] = h
        est[d] = (member.value(x + e) - member.value(x - e)) / (2 * h)
    return est


def _register_custom(member, rng, n_points=20, box=3.0):
    s = member.dim
    for _ in range(n_points):
        x = rng.uniform(-box, box, s)
        err = np.max(np.abs(_central_difference(member, x, 1e-5) - member.grad(x)))
        scale = max(1.0, float(np.max(np.abs(member.grad(x)))))
        if err > 1e-5 * scale:
            raise ValueError(f"custom objective gradient disagrees with finite differences (error {err:.3g})")
        y = rng.uniform(-box, box, s)
        mid = member.value((x + y) / 2)
        chord = (member.value(x) + member.value(y)) / 2
        if mid > chord + 1e-12 * max(1.0, abs(chord)):
            raise ValueError("custom objective failed the midpoint convexity check")


@dataclass(frozen=True)
class ObjectiveFamily:
    """The ``n`` private objectives whose sum is minimized.

    Parameters
    ----------
    members : sequence
        One objective per agent, each exposing ``value``, ``grad`` and ``dim``.
    seed : int
        Seed for the registration-time checks of custom members.
    """

    members: tuple
    seed: int = 0
    kind: str = field(init=False)
    dim: int = field(init=False)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an objective family needs at least one member")
        dims = {m.dim for m in members}
        if len(dims) != 1:
            raise ValueError(f"members disagree on dimension: {sorted(dims)}")
        kinds = {m.kind for m in members}
        rng = np.random.default_rng(self.seed)
        for m in members:
            if m.kind == "custom":
                _register_custom(m, rng)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "kind", kinds.pop() if len(kinds) == 1 else "custom")
        object.__setattr__(self, "dim", dims.pop())
        if self.kind == "quadratic":
            object.__setattr__(self, "_Q", np.stack([m.Q for m in members]))
            object.__setattr__(self, "_C", np.stack([m.c for m in members]))
        elif self.kind == "quartic":
            object.__setattr__(self, "_C", np.stack([m.c for m in members]))

    @classmethod
    def quadratic(cls, Qs, cs):
        return cls(tuple(Quadratic(Q, c) for Q, c in zip(Qs, cs, strict=True)))

    @classmethod
    def quartic(cls, cs):
        return cls(tuple(Quartic(c) for c in cs))

    @property
    def n(self):
        return len(self.members)

    @property
    def unique_optimum(self):
        return all(m.unique_optimum for m in self.members)

    def _check(self, i, x):
        if not 0 <= i < self.n:
            raise IndexError(f"agent index {i} out of range for {self.n} agents")
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        return x

    def eval(self, i, x):
        """Value of the private objective of agent ``i`` (0-based) at ``x``."""
        return self.members[i].value(self._check(i, x))

    def grad(self, i, x):
        return self.members[i].grad(self._check(i, x))

    def grad_all(self, X):
        """Row ``i`` holds the gradient of member ``i`` at ``X[i]``."""
        if self.kind == "quadratic":
            return np.einsum("nij,nj->ni", self._Q, X - self._C)
        if self.kind == "quartic":
            return 4.0 * (X - self._C) ** 3
        return np.stack([m.grad(X[i]) for i, m in enumerate(self.members)])

    def team_value(self, x):
        x = np.asarray(x, dtype=float)
        return float(sum(m.value(x) for m in self.members))

    def team_grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum([m.grad(x) for m in self.members], axis=0)

    def to_dict(self):
        if self.kind == "quadratic":
            return {"kind": "quadratic", "Q": [m.to_dict()["Q"] for m in self.members],
                    "c": [m.c.tolist() for m in self.members]}
        if self.kind == "quartic":
            return {"kind": "quartic", "c": [m.c.tolist() for m in self.members]}
        raise ValueError("custom objectives cannot be serialized")


def finite_diff_check(family, i, x, h=1e-5):
    """Max abs deviation between central differences and the analytic gradient."""
    x = family._check(i, x)
    member = family.members[i]
    return float(np.max(np.abs(_central_difference(member, x, h) - member.grad(x))))


@dataclass(frozen=True)
class OptimalityOracle:
    x_star: np.ndarray
    f_star: float
    method: str
    tolerance: float
    grad_norm: float
    iterations: int = 0


def _gradient_descent(family, x0, tol, max_iter, memory=10):
    # Barzilai-Borwein steps under a nonmonotone Armijo test. The slack term
    # keeps the test meaningful once the decrease drops below rounding of f.
    x = np.array(x0, dtype=float)
    f = family.team_value(x)
    g = family.team_grad(x)
    history = [f]
    t = 1.0
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return x, it, gn
        ref = max(history)
        slack = 8 * np.finfo(float).eps * max(1.0, abs(ref))
        while True:
            x_new = x - t * g
            f_new = family.team_value(x_new)
            if f_new <= ref - 1e-4 * t * gn * gn + slack:
                break
            t *= 0.5
            if t < 1e-30:
                raise OracleError("backtracking line search stalled")
        g_new = family.team_grad(x_new)
        step, change = x_new - x, g_new - g
        curv = float(step @ change)
        t = min(float(step @ step) / curv, 1e12) if curv > 0 else min(2.0 * t, 1e6)
        x, f, g = x_new, f_new, g_new
        history = (history + [f])[-memory:]
    gn = float(np.linalg.norm(g))
    if gn <= tol:
        return x, max_iter, gn
    raise OracleError(
        f"centralized gradient descent reached |grad f| = {gn:.3g} > {tol:g} "
        f"after {max_iter} iterations"
    )


def centralized_optimum(family, tol=CLOSED_FORM_TOL, max_iter=200_000, method=None):
    """Minimize the team objective directly.

    Quadratic families use the closed form ``(sum Q_i)^-1 sum Q_i c_i``; all
    others, or ``method="iterative"``, run gradient descent with backtracking
    until ``|grad f| <= tol``. Failure to certify the tolerance raises
    ``OracleError`` rather than returning an approximate point.
    """
    method = method or ("closed_form" if family.kind == "quadratic" else "iterative")
    if method == "closed_form":
        if family.kind != "quadratic":
            raise ValueError("closed form optimum is only available for quadratic families")
        H = np.sum([m.Q for m in family.members], axis=0)
        rhs = np.sum([m.Q @ m.c for m in family.members], axis=0)
        x = np.linalg.solve(H, rhs)
        x = x - np.linalg.solve(H, family.team_grad(x))  # one refinement sweep
        gn = float(np.linalg.norm(family.team_grad(x)))
        if gn > CLOSED_FORM_TOL:
            raise OracleError(f"closed form solve left |grad f| = {gn:.3g}")
        return OptimalityOracle(x, family.team_value(x), "closed_form", CLOSED_FORM_TOL, gn)
    if method != "iterative":
        raise ValueError(f"unknown oracle method {method!r}")
    x0 = np.mean([getattr(m, "c", np.zeros(family.dim)) for m in family.members], axis=0)
    x, iters, gn = _gradient_descent(family, x0, tol, max_iter)
    return OptimalityOracle(x, family.team_value(x), "iterative", tol, gn, iters)


def project_optimal(oracle, family, x):
    """Euclidean projection onto the optimal set; only singleton sets are supported."""
    if not family.unique_optimum:
        raise UnsupportedProjectionError(
            "projection needs a unique minimizer; register custom members with unique_optimum=True"
        )
    if np.shape(x) != oracle.x_star.shape:
        raise ValueError(f"expected a point of shape {oracle.x_star.shape}, got {np.shape(x)}")
    return oracle.x_star.copy()
