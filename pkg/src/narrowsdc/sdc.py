"""Single-rate spectral deferred corrections with forward-Euler sweeps.

A step of size ``dt`` from ``t_n`` is split at the nodes ``t_n + tau_m dt``.
The provisional iterate copies the initial state and its right-hand side to
every node; each sweep then applies

    U_{m+1} = U_m + dt_m [f(U_m^{new}) - f(U_m^{old})] + dt * S[m] . F^{old}

which converges to the collocation solution ``U = U_0 + dt Q F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .quadrature import NodeSet

RHS = Callable[[np.ndarray, float], np.ndarray]


class IntegrationError(RuntimeError):
    """Raised when an integrator produces a non-finite state."""

    def __init__(self, message: str, node: Optional[int] = None, iteration: Optional[int] = None):
        super().__init__(message)
        self.node = node
        self.iteration = iteration


@dataclass(frozen=True)
class StepControls:
    """Sweep count and early-termination policy.

    Sweeps stop early once ``|R^{k-1}| / |R^k|`` lies within
    ``residual_ratio_cutoff`` of one (stagnation) or the residual is exactly
    zero.  ``None`` disables early stopping.  With ``residual_tol`` set,
    sweeps also stop once the residual drops to that value.
    """

    num_iterations: int = 4
    residual_ratio_cutoff: Optional[float] = 0.05
    reuse_first_eval: bool = True
    residual_tol: Optional[float] = None

    def __post_init__(self):
        if int(self.num_iterations) != self.num_iterations or self.num_iterations < 1:
            raise ValueError("num_iterations must be a positive integer")
        c = self.residual_ratio_cutoff
        if c is not None and not (0 <= c < 1):
            raise ValueError("residual_ratio_cutoff must lie in [0, 1)")


@dataclass
class SweepState:
    """Node values of one step: ``U[m]`` and ``F[m] = f(U[m], t_m)``."""

    U: np.ndarray
    F: np.ndarray
    k: int = 0
    residual_history: list = field(default_factory=list)


@dataclass
class StepDiagnostics:
    residuals: list
    evaluations: int
    iterations: int
    stopped_early: bool
    final_rhs: Optional[np.ndarray] = None


def _should_stop(history: list, controls: StepControls) -> bool:
    if not history:
        return False
    if controls.residual_tol is not None and history[-1] <= controls.residual_tol:
        return True
    cutoff = controls.residual_ratio_cutoff
    if cutoff is None:
        return False
    if history[-1] == 0.0:
        return True
    if len(history) < 2:
        return False
    ratio = history[-2] / history[-1]
    return abs(ratio - 1.0) <= cutoff


def _check_finite(x: np.ndarray, node: int, iteration: int):
    if not np.all(np.isfinite(x)):
        raise IntegrationError(
            f"non-finite state at node {node} in sweep {iteration}", node=node, iteration=iteration
        )


def sdc_residual(state: SweepState, u0, dt: float, Q: np.ndarray) -> float:
    """``max |u0 + dt * q.F - U_M|`` with ``q`` the last row of ``Q``."""
    q = np.asarray(Q)[-1]
    approx = np.asarray(u0, dtype=float) + dt * np.tensordot(q, state.F, axes=(0, 0))
    return float(np.max(np.abs(approx - state.U[-1]))) if approx.size else 0.0


def sdc_sweep(f: RHS, state: SweepState, t_n: float, dt: float, nodes: NodeSet) -> SweepState:
    """One forward-Euler correction sweep; returns a new state."""
    S = nodes.matrices.S
    tau = nodes.nodes
    U_old, F_old = state.U, state.F
    U = np.empty_like(U_old)
    F = np.empty_like(F_old)
    U[0], F[0] = U_old[0], F_old[0]
    k = state.k + 1
    for m in range(nodes.M):
        dtm = dt * (tau[m + 1] - tau[m])
        # overflow is reported through _check_finite instead
        with np.errstate(over="ignore", invalid="ignore"):
            integral = dt * np.tensordot(S[m], F_old, axes=(0, 0))
            U[m + 1] = U[m] + dtm * (F[m] - F_old[m]) + integral
        _check_finite(U[m + 1], m + 1, k)
        F[m + 1] = f(U[m + 1], t_n + tau[m + 1] * dt)
    return SweepState(U, F, k, list(state.residual_history))


def sdc_step(
    f: RHS,
    u0,
    t_n: float,
    dt: float,
    nodes: NodeSet,
    controls: StepControls = StepControls(),
    f0: Optional[np.ndarray] = None,
):
    """Advance ``u' = f(u, t)`` by one SDC step.

    ``f0`` is ``f(u0, t_n)`` when already known (the previous step's final
    node value); it is only used if ``controls.reuse_first_eval`` is set.
    Returns ``(u_new, diagnostics)``; ``diagnostics.final_rhs`` holds the
    right-hand side at the end node for recycling into the next step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u0 = np.asarray(u0, dtype=float)
    evals = 0
    if f0 is None or not controls.reuse_first_eval:
        f0 = f(u0, t_n)
        evals += 1
    f0 = np.asarray(f0, dtype=float)
    shape = (nodes.M + 1,) + u0.shape
    state = SweepState(np.broadcast_to(u0, shape).copy(), np.broadcast_to(f0, shape).copy())
    Q = nodes.matrices.Q
    stopped = False
    for _ in range(controls.num_iterations):
        state = sdc_sweep(f, state, t_n, dt, nodes)
        evals += nodes.M
        state.residual_history.append(sdc_residual(state, u0, dt, Q))
        if _should_stop(state.residual_history, controls):
            stopped = state.k < controls.num_iterations
            break
    diag = StepDiagnostics(state.residual_history, evals, state.k, stopped, state.F[-1])
    return state.U[-1].copy(), diag


def collocation_oracle(A, u0, dt: float, nodes: NodeSet) -> np.ndarray:
    """Solve ``U = U_0 + dt Q (A U)`` directly; returns ``U`` at all nodes.

    ``A`` is a scalar or a square matrix; the result has shape
    ``(M + 1,) + u0.shape``.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    d = u0.size
    A = np.asarray(A, dtype=float)
    A = A * np.eye(d) if A.ndim == 0 else A.reshape(d, d)
    Q = nodes.matrices.Q
    M = nodes.M
    # unknowns U_1..U_M; U_0 = u0 enters through column 0 of Q
    system = np.eye(M * d) - dt * np.kron(Q[:, 1:], A)
    rhs = np.tile(u0, M) + dt * np.kron(Q[:, 0], A @ u0)
    sol = np.linalg.solve(system, rhs)
    return np.vstack([u0, sol.reshape(M, d)])


@dataclass
class IntegrationResult:
    u: np.ndarray
    steps: int
    dt: float
    evaluations: int
    residuals: list


def uniform_steps(t_final: float, dt_max: float) -> tuple[int, float]:
    """Smallest number of equal steps no longer than ``dt_max`` covering ``t_final``."""
    if t_final < 0 or not dt_max > 0:
        raise ValueError("need t_final >= 0 and dt_max > 0")
    if t_final == 0:
        return 0, 0.0
    n = max(1, math.ceil(t_final / dt_max - 1e-12))
    return n, t_final / n


def integrate(
    f: RHS,
    u0,
    t0: float,
    t_final: float,
    dt_max: float,
    nodes: NodeSet,
    controls: StepControls = StepControls(),
) -> IntegrationResult:
    """Integrate with equal SDC steps no longer than ``dt_max``."""
    n, h = uniform_steps(t_final - t0, dt_max)
    u = np.asarray(u0, dtype=float).copy()
    f0 = None
    evals = 0
    residuals = []
    for i in range(n):
        u, diag = sdc_step(f, u, t0 + i * h, h, nodes, controls, f0)
        f0 = diag.final_rhs if controls.reuse_first_eval else None
        evals += diag.evaluations
        residuals.append(diag.residuals[-1])
    return IntegrationResult(u, n, h, evals, residuals)
