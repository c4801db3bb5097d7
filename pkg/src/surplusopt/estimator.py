"""scikit-learn style front end around :func:`surplusopt.protocol.simulate`."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .analysis import convergence_report
from .graph import build_surplus_matrix, max_epsilon
from .objective import centralized_optimum
from .protocol import (ProtocolParams, StepSchedule, SwarmState, build_system_matrix,
                       check_spectral_guard, simulate)
from .validation import check_family, check_graph, check_positions, check_positive


class SurplusConsensusOptimizer(BaseEstimator):
    """Solve ``min_x sum_i f_i(x)`` with second-order agents on a digraph.

    Parameters
    ----------
    graph : WeightedDigraph or array-like of shape (n, n)
        Communication topology; ``graph[i, j] > 0`` when ``j`` sends to ``i``.
    T : float, default=0.5
        Sampling time.
    epsilon : float or "auto", default="auto"
        Surplus coupling gain; ``"auto"`` picks half of the admissible bound.
    schedule : {"harmonic", "power"}, default="harmonic"
    alpha0 : float, default=1.0
    exponent : float, default=1.0
        Decay exponent of the power schedule, in ``(0.5, 1]``.
    max_iter : int, default=10000
    record_stride : int, default=100
    surplus : bool, default=True
        ``False`` drops the surplus variables (baseline comparison mode).
    verify : bool, default=False
        Cross-check every step against the stacked linear iteration.
    state_guard : float, default=1e6
    tol : float, default=1e-3
        Tolerance for consensus, surplus and velocity in the convergence report.
    init_box : tuple of float, default=(-5.0, 5.0)
        Box for the random initial positions when ``fit`` gets none.
    random_state : int or None

    Attributes
    ----------
    solution_ : ndarray of shape (s,)
        Final mass average of the swarm, the estimate of the minimizer.
    positions_ : ndarray of shape (n, s)
        Final aggregate states ``r_i + q_i``.
    trajectory_ : Trajectory
    report_ : ConvergenceReport
    epsilon_ : float
    system_matrix_ : SystemMatrix
    n_iter_ : int
    """

    def __init__(self, graph=None, T=0.5, epsilon="auto", schedule="harmonic", alpha0=1.0,
                 exponent=1.0, max_iter=10_000, record_stride=100, surplus=True, verify=False,
                 state_guard=1e6, tol=1e-3, init_box=(-5.0, 5.0), random_state=None):
        self.graph = graph
        self.T = T
        self.epsilon = epsilon
        self.schedule = schedule
        self.alpha0 = alpha0
        self.exponent = exponent
        self.max_iter = max_iter
        self.record_stride = record_stride
        self.surplus = surplus
        self.verify = verify
        self.state_guard = state_guard
        self.tol = tol
        self.init_box = init_box
        self.random_state = random_state

    def fit(self, family, initial_positions=None):
        """Run the protocol on the objective family ``family``.

        Parameters
        ----------
        family : ObjectiveFamily
        initial_positions : array-like of shape (n, s), optional
            Starting ``r_i``; velocities and surpluses start at zero.
        """
        if self.graph is None:
            raise ValueError("a communication graph is required")
        g = check_graph(self.graph)
        family = check_family(family, g.n)
        T = check_positive(self.T, "T")
        eps = 0.5 * max_epsilon(g, T) if self.epsilon == "auto" else check_positive(self.epsilon, "epsilon")
        schedule = StepSchedule(self.schedule, self.alpha0, self.exponent)
        params = ProtocolParams(T, eps, schedule, self.surplus)
        B = build_surplus_matrix(g)
        M = build_system_matrix(g, B, params)
        if self.surplus:
            check_spectral_guard(M)
        if initial_positions is None:
            rng = np.random.default_rng(self.random_state)
            r0 = rng.uniform(*self.init_box, size=(g.n, family.dim))
        else:
            r0 = check_positions(initial_positions, g.n, family.dim)
        oracle = centralized_optimum(family) if family.unique_optimum else None
        traj = simulate(g, family, params, SwarmState.initial(r0), int(self.max_iter), B=B,
                        record_stride=int(self.record_stride), oracle=oracle, verify=self.verify,
                        guard=self.state_guard)
        self.epsilon_ = eps
        self.system_matrix_ = M
        self.oracle_ = oracle
        self.trajectory_ = traj
        self.report_ = convergence_report(traj, self.tol, self.tol, self.tol)
        self.solution_ = np.array(self.report_.x_star_hat)
        self.positions_ = traj.final_state.x
        self.n_iter_ = traj.final_state.k
        return self

    def predict(self, X=None):
        """Per-agent final positions, one row per agent."""
        check_is_fitted(self, "positions_")
        return self.positions_.copy()

    def score(self, family=None):
        """Negative optimality gap of the final mass average (higher is better)."""
        check_is_fitted(self, "solution_")
        if family is None:
            gap = self.report_.final_gap
            if gap is None:
                raise ValueError("no optimality oracle was available during fit")
            return -float(gap)
        oracle = centralized_optimum(family)
        return -(family.team_value(self.solution_) - oracle.f_star)
