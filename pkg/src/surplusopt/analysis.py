"""Diagnostics computed from swarm states, system matrices and trajectories."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .objective import _gradient_descent, project_optimal


@dataclass(frozen=True)
class MetricsRecord:
    """Snapshot of the quantities tracked at one recorded iteration.

    ``optimality_gap`` and ``dist_sq_opt`` are ``None`` when no oracle was
    supplied (or the optimal set is not a singleton).
    """

    k: int
    consensus_error: float
    surplus_norm: float
    velocity_norm: float
    zbar: np.ndarray
    optimality_gap: float | None
    dist_sq_opt: float | None
    conservation_residual: float = 0.0


def max_pairwise_distance(x):
    diff = x[:, None, :] - x[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))


def compute_metrics(state, family, oracle=None, conservation_residual=0.0):
    """Evaluate a :class:`MetricsRecord` for ``state``.

    ``zbar`` is the mass average ``(sum_i x_i + sum_i y_i) / n`` with
    ``x_i = r_i + q_i``.
    """
    x = state.r + state.q
    y, q = state.y, state.q
    n = x.shape[0]
    zbar = (x.sum(axis=0) + y.sum(axis=0)) / n
    gap = dist = None
    if oracle is not None:
        gap = family.team_value(zbar) - oracle.f_star
        if family.unique_optimum:
            p = project_optimal(oracle, family, zbar)
            dist = float(np.sum((zbar - p) ** 2))
    return MetricsRecord(
        k=int(state.k),
        consensus_error=max_pairwise_distance(x),
        surplus_norm=float(np.max(np.linalg.norm(y, axis=1))),
        velocity_norm=float(np.max(np.linalg.norm(q, axis=1))),
        zbar=zbar,
        optimality_gap=gap,
        dist_sq_opt=dist,
        conservation_residual=float(conservation_residual),
    )


def limit_matrix(n):
    """Limit of ``M^k``: averaging block on the top row, zeros below."""
    out = np.zeros((2 * n, 2 * n))
    out[:n, :] = 1.0 / n
    return out


def second_eigenvalue_modulus(M):
    """Largest eigenvalue modulus after removing the eigenvalue closest to one."""
    ev = np.linalg.eigvals(np.asarray(M, dtype=float))
    drop = int(np.argmin(np.abs(ev - 1.0)))
    rest = np.delete(ev, drop)
    return float(np.max(np.abs(rest))) if rest.size else 0.0


@dataclass(frozen=True)
class DecayEstimate:
    """Fitted envelope ``Gamma_hat * gamma_hat**k`` of ``|M^k - M_inf|``."""

    gamma_hat: float
    Gamma_hat: float
    ks: np.ndarray
    errors: np.ndarray
    errors_frobenius: np.ndarray
    residuals: np.ndarray
    norm: str = "spectral"
    exact: bool = False

    @property
    def bounds(self):
        return self.Gamma_hat * self.gamma_hat ** self.ks.astype(float)

    def rows(self):
        return [(int(k), float(e), float(b)) for k, e, b in zip(self.ks, self.errors, self.bounds)]


def estimate_decay(M, k_max=200):
    """Estimate the geometric rate at which ``M^k`` approaches its limit.

    The deviations ``e_k = |M^k - M_inf|_2`` are generated by repeated
    multiplication of ``D = M - M_inf``; the identities ``M M_inf = M_inf M =
    M_inf^2 = M_inf`` give ``D^k = M^k - M_inf`` for ``k >= 1`` while avoiding
    the cancellation floor of subtracting two nearly equal matrices. When the
    identities do not hold the powers of ``M`` are used directly.

    A least-squares line through ``log e_k`` over the second half of the
    samples gives ``gamma_hat``; ``Gamma_hat`` is the fitted intercept raised
    just enough that the envelope covers every sample.
    """
    if k_max < 20:
        raise ValueError("k_max must be at least 20")
    M = np.asarray(getattr(M, "matrix", M), dtype=float)
    n = M.shape[0] // 2
    Minf = limit_matrix(n)
    D = M - Minf
    invariant = (np.allclose(M @ Minf, Minf, atol=1e-10, rtol=0)
                 and np.allclose(Minf @ M, Minf, atol=1e-10, rtol=0))
    ks = np.arange(1, k_max + 1)
    spec = np.empty(k_max)
    frob = np.empty(k_max)
    P = np.eye(2 * n)
    for t in range(k_max):
        P = P @ (D if invariant else M)
        E = P if invariant else P - Minf
        spec[t] = np.linalg.norm(E, 2)
        frob[t] = np.linalg.norm(E, "fro")

    if np.all(spec == 0):
        return DecayEstimate(0.0, 0.0, ks, spec, frob, np.zeros(k_max), exact=True)

    usable = spec > 1e-280
    tail = usable & (ks >= (k_max + 1) // 2)
    if tail.sum() < 2:
        tail = usable
    if tail.sum() < 2:
        return DecayEstimate(0.0, float(spec.max()), ks, spec, frob, np.full(k_max, np.nan), exact=False)
    slope, intercept = np.polyfit(ks[tail], np.log(spec[tail]), 1)
    gamma = float(np.exp(slope))
    if gamma >= 1.0:
        raise ConfigurationError(
            f"spectral guard: fitted decay ratio {gamma:.6g} is not below one; "
            "reduce the coupling gain or the sampling time",
            "spectral_guard",
        )
    with np.errstate(divide="ignore"):
        logs = np.where(usable, np.log(np.where(usable, spec, 1.0)), -np.inf)
    residuals = np.where(usable, logs - (intercept + slope * ks), np.nan)
    log_gamma_cap = max(intercept, float(np.max(logs[usable] - slope * ks[usable])))
    return DecayEstimate(gamma, float(np.exp(log_gamma_cap)), ks, spec, frob, residuals)


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    k_consensus: int | None
    k_surplus: int | None
    k_velocity: int | None
    final_gap: float | None
    x_star_hat: np.ndarray
    tolerances: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "converged": self.converged,
            "k_consensus": self.k_consensus,
            "k_surplus": self.k_surplus,
            "k_velocity": self.k_velocity,
            "final_gap": self.final_gap,
            "x_star_hat": [float(v) for v in self.x_star_hat],
            "tolerances": dict(self.tolerances),
        }


def _sustained_from(values, tol):
    """Index of the first sample after which every value stays within ``tol``."""
    above = np.flatnonzero(np.asarray(values) > tol)
    if above.size == 0:
        return 0
    start = int(above[-1]) + 1
    return start if start < len(values) else None


def convergence_report(trajectory, tol_c=1e-3, tol_y=1e-3, tol_q=1e-3):
    """Summarize a trajectory (or a list of records) with sustained crossings.

    A metric counts as converged when it stays below its tolerance from some
    record on, and that record falls no later than the start of the final 10%
    of the recorded iterations.
    """
    records = getattr(trajectory, "records", trajectory)
    if not records:
        raise ValueError("trajectory has no records")
    N = len(records)
    tail_start = min(int(np.floor(0.9 * N)), N - 1)
    crossings = {}
    for name, tol in (("consensus_error", tol_c), ("surplus_norm", tol_y), ("velocity_norm", tol_q)):
        idx = _sustained_from([getattr(r, name) for r in records], tol)
        crossings[name] = idx
    converged = all(idx is not None and idx <= tail_start for idx in crossings.values())

    def k_of(idx):
        return None if idx is None else records[idx].k

    last = records[-1]
    return ConvergenceReport(
        converged=converged,
        k_consensus=k_of(crossings["consensus_error"]),
        k_surplus=k_of(crossings["surplus_norm"]),
        k_velocity=k_of(crossings["velocity_norm"]),
        final_gap=last.optimality_gap,
        x_star_hat=np.array(last.zbar),
        tolerances={"tol_c": tol_c, "tol_y": tol_y, "tol_q": tol_q},
    )


def stationary_distribution(g, T):
    """Left Perron vector of the row-stochastic consensus matrix ``I - L T``."""
    from .graph import laplacian

    W = np.eye(g.n) - laplacian(g) * T
    ev, vecs = np.linalg.eig(W.T)
    pi = np.real(vecs[:, int(np.argmin(np.abs(ev - 1.0)))])
    return pi / pi.sum()


class _Weighted:
    def __init__(self, family, weights):
        self.family = family
        self.weights = weights

    def team_value(self, x):
        return float(sum(w * m.value(x) for w, m in zip(self.weights, self.family.members)))

    def team_grad(self, x):
        return np.sum([w * m.grad(x) for w, m in zip(self.weights, self.family.members)], axis=0)


def baseline_fixed_point(g, T, family, tol=1e-12, max_iter=200_000):
    """Point the surplus-free scheme settles at: the minimizer of ``sum_i pi_i f_i``.

    Without surplus variables the consensus matrix is only row stochastic, so
    gradients are averaged with the weights ``pi`` of its stationary
    distribution instead of uniformly.
    """
    pi = stationary_distribution(g, T)
    if family.kind == "quadratic":
        H = np.sum([p * m.Q for p, m in zip(pi, family.members)], axis=0)
        rhs = np.sum([p * m.Q @ m.c for p, m in zip(pi, family.members)], axis=0)
        return np.linalg.solve(H, rhs)
    x0 = np.mean([getattr(m, "c", np.zeros(family.dim)) for m in family.members], axis=0)
    x, _, _ = _gradient_descent(_Weighted(family, pi), x0, tol, max_iter)
    return x
