"""The surplus-based second-order optimization protocol.

Each agent ``i`` holds a position ``r_i``, a velocity ``q_i`` and a surplus
``y_i``. Per round it receives ``(r_j, q_j)`` and the weighted surplus
``b_ij y_j`` from its in-neighbors and applies

    u_i = -q_i + sum_j a_ij [(r_j - r_i) + (q_j - q_i)] + eps y_i
    r_i <- r_i + T q_i
    q_i <- q_i + T u_i
    y_i <- -T sum_j a_ij [(r_j - r_i) + (q_j - q_i)] + sum_j b_ij y_j
           - eps T y_i - alpha_k T d_i

where ``d_i`` is the gradient of ``f_i`` at ``w_i = r_i + q_i + sum_j b_ij y_j``,
zeroed whenever its squared norm exceeds ``alpha_k ** -0.5``.

In aggregate coordinates ``x_i = r_i + q_i`` the same recursion is the linear
system ``Z <- (M kron I) Z - alpha_k T grad_F`` with
``M = [[I - L T, eps T I], [L T, B - eps T I]]``; :func:`stacked_step` runs
that form and serves as an independent cross-check of :func:`local_step`.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .analysis import compute_metrics, limit_matrix
from .exceptions import ConfigurationError, DivergenceError, VerificationError
from .graph import build_surplus_matrix, laplacian

SPECTRAL_MARGIN = 1e-9


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing gradient gains ``alpha_k = alpha0 / (k + 1) ** exponent``.

    ``kind="harmonic"`` fixes the exponent at one. Exponents outside
    ``(0.5, 1]`` are rejected: they break either ``sum alpha_k = inf`` or
    ``sum alpha_k**2 < inf``.
    """

    kind: str = "harmonic"
    alpha0: float = 1.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in ("harmonic", "power"):
            raise ConfigurationError(f"unknown step schedule {self.kind!r}", "step_size")
        if not self.alpha0 > 0:
            raise ConfigurationError(
                f"step-size assumption: alpha0 must be positive, got {self.alpha0}", "step_size")
        if self.kind == "harmonic" and self.exponent != 1.0:
            raise ConfigurationError("harmonic schedule has exponent 1", "step_size")
        if not 0.5 < self.exponent <= 1.0:
            raise ConfigurationError(
                f"step-size assumption: exponent {self.exponent} must lie in (0.5, 1] so that "
                "the gains sum to infinity while their squares stay summable",
                "step_size",
            )

    def __call__(self, k):
        return step_size(self, k)

    def to_dict(self):
        return {"kind": self.kind, "alpha0": self.alpha0, "exponent": self.exponent}


def step_size(schedule, k):
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    if schedule.kind == "harmonic":
        return schedule.alpha0 / (k + 1)
    return schedule.alpha0 / (k + 1) ** schedule.exponent


@dataclass(frozen=True)
class ProtocolParams:
    T: float
    epsilon: float
    schedule: StepSchedule = field(default_factory=StepSchedule)
    surplus_enabled: bool = True


def check_params(g, params):
    """Reject parameters outside the region where convergence is guaranteed.

    Requires ``1/T - sum_j a_ij > 0`` and ``0 < eps < 1/T - sum_j a_ij`` at
    every node. The error names the first failing node (1-based).
    """
    if not params.T > 0:
        raise ConfigurationError(f"sampling time must be positive, got {params.T}", "sampling_time")
    slack = 1.0 / params.T - g.in_degree
    for i, s in enumerate(slack):
        if s <= 0:
            raise ConfigurationError(
                f"sampling-time condition fails at node {i + 1}: 1/T - sum_j a_ij = {s:.6g} <= 0",
                "sampling_time", node=i + 1)
    if not params.surplus_enabled:
        return
    if not params.epsilon > 0:
        raise ConfigurationError(
            f"coupling gain must be positive, got {params.epsilon}", "coupling_gain")
    for i, s in enumerate(slack):
        if params.epsilon >= s:
            raise ConfigurationError(
                f"coupling-gain condition fails at node {i + 1}: eps = {params.epsilon:.6g} "
                f">= 1/T - sum_j a_ij = {s:.6g}",
                "coupling_gain", node=i + 1)


class AgentState(NamedTuple):
    r: np.ndarray
    q: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class SwarmState:
    """States of all agents, one row per agent, at iteration ``k``."""

    r: np.ndarray
    q: np.ndarray
    y: np.ndarray
    k: int = 0

    @classmethod
    def _unchecked(cls, r, q, y, k):
        obj = object.__new__(cls)
        object.__setattr__(obj, "r", r)
        object.__setattr__(obj, "q", q)
        object.__setattr__(obj, "y", y)
        object.__setattr__(obj, "k", k)
        return obj

    def __post_init__(self):
        shapes = {np.shape(self.r), np.shape(self.q), np.shape(self.y)}
        if len(shapes) != 1 or len(np.shape(self.r)) != 2:
            raise ValueError(f"r, q, y must share one (n, s) shape, got {sorted(shapes)}")

    @classmethod
    def initial(cls, r, q=None, y=None):
        r = np.array(r, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        q = np.zeros_like(r) if q is None else np.array(q, dtype=float).reshape(r.shape)
        y = np.zeros_like(r) if y is None else np.array(y, dtype=float).reshape(r.shape)
        return cls(r, q, y, 0)

    @property
    def n(self):
        return self.r.shape[0]

    @property
    def dim(self):
        return self.r.shape[1]

    @property
    def x(self):
        return self.r + self.q

    @property
    def theta(self):
        return self.r + self.q + self.y

    def w(self, B):
        return self.r + self.q + np.asarray(getattr(B, "matrix", B)) @ self.y

    def agent(self, i):
        return AgentState(self.r[i], self.q[i], self.y[i])


def to_stacked(state):
    """Stack ``x_1..x_n, y_1..y_n`` as the rows of a ``(2n, s)`` array."""
    return np.vstack([state.x, state.y])


@dataclass(frozen=True, eq=False)
class SystemMatrix:
    """Linear part of the stacked iteration together with its gains."""

    matrix: np.ndarray
    T: float
    epsilon: float
    surplus_enabled: bool = True

    @property
    def n(self):
        return self.matrix.shape[0] // 2

    @property
    def limit(self):
        return limit_matrix(self.n)


def build_system_matrix(g, B, params):
    """Assemble ``M = [[I - L T, eps T I], [L T, B - eps T I]]``.

    With the surplus disabled the lower blocks and the coupling vanish and the
    gradient enters the upper block instead (see :func:`gradient_blocks`).
    """
    check_params(g, params)
    n, T, eps = g.n, params.T, params.epsilon
    Bm = np.asarray(getattr(B, "matrix", B), dtype=float)
    LT = laplacian(g) * T
    eye = np.eye(n)
    if params.surplus_enabled:
        M = np.block([[eye - LT, eps * T * eye], [LT, Bm - eps * T * eye]])
    else:
        M = np.zeros((2 * n, 2 * n))
        M[:n, :n] = eye - LT
    M.setflags(write=False)
    return SystemMatrix(M, T, eps if params.surplus_enabled else 0.0, params.surplus_enabled)


def check_spectral_guard(M):
    """Spectral radius of ``M - M_inf``; rejects values within 1e-9 of one."""
    rho = float(np.max(np.abs(np.linalg.eigvals(M.matrix - M.limit))))
    if rho >= 1.0 - SPECTRAL_MARGIN:
        raise ConfigurationError(
            f"spectral guard: spectral radius of M - M_inf is {rho:.12g}, not below one; "
            "reduce the coupling gain", "spectral_guard")
    return rho


def clipped_gradient(family, i, w, alpha_k):
    """Gradient of agent ``i`` at ``w``, or zero when its squared norm exceeds ``alpha_k**-0.5``."""
    g = family.grad(i, w)
    if 1.0 / np.sqrt(alpha_k) < float(g @ g):
        return np.zeros_like(g)
    return g


def _row_sq_norms(X):
    return np.einsum("ij,ij->i", X, X)


def _clip_rows(G, alpha_k):
    clipped = 1.0 / np.sqrt(alpha_k) < _row_sq_norms(G)
    if clipped.any():
        G = np.where(clipped[:, None], 0.0, G)
    return G, clipped


def gradient_blocks(d, surplus_enabled=True):
    """Lay out per-agent clipped gradients in the ``(2n, s)`` stacked format."""
    zeros = np.zeros_like(d)
    return np.vstack([zeros, d]) if surplus_enabled else np.vstack([d, zeros])


def stacked_step(Z, M, alpha_k, grads):
    """``Z(k+1) = (M kron I_s) Z(k) - alpha_k T grad_F(k)``, computed blockwise."""
    Z = np.asarray(Z, dtype=float)
    size = M.matrix.shape[0]
    if Z.ndim != 2 or Z.shape[0] != size or np.shape(grads) != Z.shape:
        raise ValueError(
            f"stacked state and gradients must have shape ({size}, s); "
            f"got {Z.shape} and {np.shape(grads)}")
    return M.matrix @ Z - alpha_k * M.T * np.asarray(grads)


class _StepInfo(NamedTuple):
    state: SwarmState
    w: np.ndarray
    d: np.ndarray
    grad: np.ndarray
    clipped: np.ndarray
    alpha: float


def _local_update(state, g, B, family, params):
    A = g.weights
    Bm = B.matrix
    T = params.T
    r, q, y = state.r, state.q, state.y
    x = r + q
    # Row i of A @ x only touches in-neighbors j with a_ij > 0.
    disagreement = A @ x - g._in_degree_col * x
    alpha = step_size(params.schedule, state.k)
    if params.surplus_enabled:
        mixed = Bm @ y
        w = x + mixed
    else:
        w = x
    grad = family.grad_all(w)
    d, clipped = _clip_rows(grad, alpha)
    if params.surplus_enabled:
        eps = params.epsilon
        u = -q + disagreement + eps * y
        y_next = -T * disagreement + mixed - eps * T * y - alpha * T * d
    else:
        u = -q + disagreement - alpha * d
        y_next = np.zeros_like(y)
    r_next = r + T * q
    q_next = q + T * u
    nxt = SwarmState._unchecked(r_next, q_next, y_next, state.k + 1)
    if not np.isfinite(r_next.sum() + q_next.sum() + y_next.sum()):
        raise DivergenceError(f"non-finite state produced at iteration {state.k}", state.k)
    return _StepInfo(nxt, w, d, grad, clipped, alpha)


def local_step(state, g, B, family, params):
    """Advance every agent one synchronous round using only neighbor messages."""
    return _local_update(state, g, B, family, params).state


@dataclass
class Trajectory:
    """Recorded states and metrics of one run plus per-step invariant diagnostics."""

    ks: list
    alphas: list
    states: list
    records: list
    final_state: SwarmState
    surplus_enabled: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.final_state.n

    @property
    def dim(self):
        return self.final_state.dim


def simulate(g, family, params, state, k_max, *, B=None, record_stride=1, oracle=None,
             verify=False, guard=1e6, verify_tol=1e-10, check_invariants=True):
    """Iterate :func:`local_step` ``k_max`` times from ``state``.

    Parameters
    ----------
    record_stride : int
        Record every ``record_stride`` iterations; ``k = 0`` and ``k = k_max``
        are always recorded.
    oracle : OptimalityOracle, optional
        Enables the optimality-gap metrics.
    verify : bool
        Run the stacked engine in lockstep from the same initial state and
        raise :class:`VerificationError` once the two disagree by more than
        ``verify_tol`` in any coordinate.
    guard : float
        Bound on ``|x_i|`` and ``|theta_i|``; leaving it raises
        :class:`DivergenceError`.
    """
    if record_stride < 1:
        raise ValueError("record_stride must be positive")
    if family.n != g.n or state.n != g.n or state.dim != family.dim:
        raise ValueError(
            f"graph has {g.n} agents, objectives {family.n} x {family.dim}, "
            f"state {state.n} x {state.dim}")
    check_params(g, params)
    B = build_surplus_matrix(g) if B is None else B
    M = build_system_matrix(g, B, params) if verify else None
    T = params.T
    surplus = params.surplus_enabled

    ks, alphas, states, records = [], [], [], []

    def record(st, residual):
        ks.append(st.k)
        alphas.append(step_size(params.schedule, st.k))
        states.append((st.r.copy(), st.q.copy(), st.y.copy()))
        records.append(compute_metrics(st, family, oracle, residual))

    diag = {
        "max_conservation_residual": 0.0,
        "max_theta_residual": 0.0,
        "max_clip_excess": -np.inf,
        "max_state_norm": 0.0,
        "clip_steps": 0,
        "first_clip_k": None,
        "last_clip_k": None,
        "verify_max_deviation": 0.0 if verify else None,
    }
    if state.k != 0:
        state = replace(state, k=0)
    record(state, 0.0)
    Z = to_stacked(state) if verify else None
    r_ref = state.r.copy() if verify else None

    for _ in range(k_max):
        info = _local_update(state, g, B, family, params)
        nxt, alpha, d = info.state, info.alpha, info.d
        x_next = nxt.r + nxt.q
        theta_next = x_next + nxt.y
        state_norm = float(np.sqrt(max(_row_sq_norms(x_next).max(), _row_sq_norms(theta_next).max())))
        if not state_norm <= guard:
            raise DivergenceError(
                f"state guard exceeded at iteration {nxt.k}: norm {state_norm:.6g} > {guard:g}", nxt.k)
        diag["max_state_norm"] = max(diag["max_state_norm"], state_norm)

        if info.clipped.any() and (info.clipped & np.any(info.grad != 0, axis=1)).any():
            diag["clip_steps"] += 1
            if diag["first_clip_k"] is None:
                diag["first_clip_k"] = state.k
            diag["last_clip_k"] = state.k

        residual = 0.0
        if check_invariants:
            mass_before = state.r.sum(0) + state.q.sum(0) + state.y.sum(0)
            mass_after = x_next.sum(0) + nxt.y.sum(0)
            residual = float(np.abs(mass_after - mass_before + alpha * T * d.sum(0)).max())
            diag["max_conservation_residual"] = max(diag["max_conservation_residual"], residual)
            if surplus:
                th = float(np.abs(theta_next - (info.w - alpha * T * d)).max())
                diag["max_theta_residual"] = max(diag["max_theta_residual"], th)
            step = alpha * np.sqrt(_row_sq_norms(d).max())
            diag["max_clip_excess"] = max(diag["max_clip_excess"], float(step - alpha ** 0.75))

        if verify:
            n = g.n
            x_ref, y_ref = Z[:n], Z[n:]
            w_ref = x_ref + B.matrix @ y_ref if surplus else x_ref
            d_ref, _ = _clip_rows(family.grad_all(w_ref), alpha)
            r_ref = (1.0 - T) * r_ref + T * x_ref
            Z = stacked_step(Z, M, alpha, gradient_blocks(d_ref, surplus))
            dev = max(float(np.max(np.abs(Z - to_stacked(nxt)))), float(np.max(np.abs(r_ref - nxt.r))))
            diag["verify_max_deviation"] = max(diag["verify_max_deviation"], dev)
            if dev > verify_tol:
                raise VerificationError(
                    f"local and stacked engines disagree by {dev:.3g} at iteration {nxt.k}", nxt.k, dev)

        state = nxt
        if state.k % record_stride == 0 or state.k == k_max:
            record(state, residual)

    if diag["max_clip_excess"] == -np.inf:
        diag["max_clip_excess"] = None
    return Trajectory(ks, alphas, states, records, state, surplus, diag)


def run(config):
    """Execute a validated experiment configuration.

    Returns
    -------
    trajectory : Trajectory
    report : ConvergenceReport
    """
    from .analysis import convergence_report

    setup = config.materialize()
    traj = simulate(
        setup.graph, setup.family, setup.params, setup.initial_state, config.k_max,
        B=setup.B, record_stride=config.record_stride, oracle=setup.oracle,
        verify=config.mode == "verify", guard=config.tolerances["guard"],
    )
    tol = config.tolerances
    report = convergence_report(traj, tol["tol_c"], tol["tol_y"], tol["tol_q"])
    return traj, report
