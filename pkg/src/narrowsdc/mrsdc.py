"""Multirate SDC: one split component on coarse nodes, the other on fine nodes.

The right-hand side is ``f1 + f2``.  ``f1`` is sampled on the coarse node
set, ``f2`` on the nested fine set; both enter the fine-node sweep through
the cross integration matrices of a :class:`MultirateHierarchy`.

Mode 1 treats both components explicitly: inside coarse interval ``p`` the
``f1`` correction is frozen at the interval's left node and ``f1`` is
re-evaluated only when the sweep lands on the next coarse node.

Mode 2 treats ``f1`` as stiff.  On entry to coarse interval ``p`` the
stiff integrator solves ``w' = f1(w, t) + G_p`` across the interval, where
the constant ``G_p`` collects the explicit ``f2`` correction (frozen at the
left node) and the spectral-integral terms, spread over the interval.  The
average of ``f1`` along that solution replaces the frozen ``f1`` value in the
fine updates.  Either way the fixed point is the multirate collocation
solution ``U = U_0 + dt (Q21 F1 + Q22 F2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .quadrature import MultirateHierarchy
from .sdc import IntegrationError, StepControls, _check_finite, _should_stop, uniform_steps
from .stiff import StiffConvergenceError, StiffOptions, StiffStats, integrate_stiff

RHS = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SplitRHS:
    """``f = f1 + f2`` with ``f1`` on coarse nodes and ``f2`` on fine nodes.

    ``f1_stiffness`` is ``"explicit"`` (mode 1) or ``"implicit"`` (mode 2).
    ``jac1`` optionally gives the Jacobian of ``f1`` for the stiff solver;
    ``exact`` optionally gives the exact solution ``exact(t, u0)``.
    """

    f1: RHS
    f2: RHS
    f1_stiffness: str = "explicit"
    jac1: Optional[Callable] = None
    exact: Optional[Callable] = None

    def __post_init__(self):
        if self.f1_stiffness not in ("explicit", "implicit"):
            raise ValueError(f"f1_stiffness must be 'explicit' or 'implicit', got {self.f1_stiffness!r}")

    def full(self, u, t):
        return self.f1(u, t) + self.f2(u, t)


@dataclass
class MRSweepState:
    """Fine-node states plus ``f1`` on coarse nodes and ``f2`` on fine nodes."""

    U: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    k: int = 0
    residual_history: list = field(default_factory=list)


@dataclass
class MRStepDiagnostics:
    residuals: list
    coarse_evaluations: int
    fine_evaluations: int
    iterations: int
    stopped_early: bool
    stiff_stats: Optional[StiffStats] = None
    final_f1: Optional[np.ndarray] = None
    final_f2: Optional[np.ndarray] = None


def mr_residual(state: MRSweepState, u0, dt: float, h: MultirateHierarchy) -> float:
    """``max |u0 + dt (q21.F1 + q22.F2) - U_M|`` from the last cross-matrix rows."""
    approx = (
        np.asarray(u0, dtype=float)
        + dt * np.tensordot(h.Q21[-1], state.F1, axes=(0, 0))
        + dt * np.tensordot(h.Q22[-1], state.F2, axes=(0, 0))
    )
    return float(np.max(np.abs(approx - state.U[-1]))) if approx.size else 0.0


def _provisional(rhs, u0, t_n, h, f1_0, f2_0, reuse):
    evals1 = evals2 = 0
    if f1_0 is None or not reuse:
        f1_0 = rhs.f1(u0, t_n)
        evals1 += 1
    if f2_0 is None or not reuse:
        f2_0 = rhs.f2(u0, t_n)
        evals2 += 1
    U = np.broadcast_to(u0, (h.M2 + 1,) + u0.shape).copy()
    F1 = np.broadcast_to(np.asarray(f1_0, dtype=float), (h.M1 + 1,) + u0.shape).copy()
    F2 = np.broadcast_to(np.asarray(f2_0, dtype=float), (h.M2 + 1,) + u0.shape).copy()
    return MRSweepState(U, F1, F2), evals1, evals2


def _integral(h, dt, q, F1, F2):
    return dt * (np.tensordot(h.S21[q], F1, axes=(0, 0)) + np.tensordot(h.S22[q], F2, axes=(0, 0)))


def mrsdc_sweep_mode1(rhs: SplitRHS, state: MRSweepState, t_n: float, dt: float, h: MultirateHierarchy) -> MRSweepState:
    """One explicit multirate sweep."""
    tau = h.fine.nodes
    U_old, F1_old, F2_old = state.U, state.F1, state.F2
    U, F1, F2 = np.empty_like(U_old), np.empty_like(F1_old), np.empty_like(F2_old)
    U[0], F1[0], F2[0] = U_old[0], F1_old[0], F2_old[0]
    k = state.k + 1
    next_coarse = 1
    for q in range(h.M2):
        p = h.p_map[q]
        dtq = dt * (tau[q + 1] - tau[q])
        with np.errstate(over="ignore", invalid="ignore"):
            U[q + 1] = (
                U[q]
                + dtq * (F1[p] - F1_old[p])
                + dtq * (F2[q] - F2_old[q])
                + _integral(h, dt, q, F1_old, F2_old)
            )
        _check_finite(U[q + 1], q + 1, k)
        t = t_n + tau[q + 1] * dt
        F2[q + 1] = rhs.f2(U[q + 1], t)
        if next_coarse <= h.M1 and h.coarse_index[next_coarse] == q + 1:
            F1[next_coarse] = rhs.f1(U[q + 1], t)
            next_coarse += 1
    return MRSweepState(U, F1, F2, k, list(state.residual_history))


def mrsdc_sweep_mode2(
    rhs: SplitRHS,
    state: MRSweepState,
    E1_old: np.ndarray,
    t_n: float,
    dt: float,
    h: MultirateHierarchy,
    stiff: StiffOptions,
    stats: StiffStats,
):
    """One multirate sweep with stiff sub-integration of ``f1``.

    ``E1_old[p]`` is the effective ``f1`` used on coarse interval ``p`` in the
    previous sweep.  Returns ``(new_state, E1_new)``.
    """
    tau1, tau2 = h.coarse.nodes, h.fine.nodes
    U_old, F1_old, F2_old = state.U, state.F1, state.F2
    U, F1, F2 = np.empty_like(U_old), np.empty_like(F1_old), np.empty_like(F2_old)
    E1 = np.empty_like(E1_old)
    U[0], F1[0], F2[0] = U_old[0], F1_old[0], F2_old[0]
    k = state.k + 1
    for p in range(h.M1):
        first, last = h.coarse_index[p], h.coarse_index[p + 1]
        t_a, t_b = t_n + tau1[p] * dt, t_n + tau1[p + 1] * dt
        width = t_b - t_a
        integrals = [_integral(h, dt, q, F1_old, F2_old) for q in range(first, last)]
        forcing = sum(integrals) / width + (F2[first] - F2_old[first]) - E1_old[p]

        def forced(w, t, forcing=forcing):
            return rhs.f1(w, t) + forcing

        try:
            w_end = integrate_stiff(forced, U[first], t_a, t_b, stiff, jac=rhs.jac1, stats=stats)
        except StiffConvergenceError as exc:
            raise IntegrationError(
                f"stiff solve failed on coarse interval {p} in sweep {k}: {exc} "
                f"(t={exc.t:.6g}, step={exc.step:.3g}, newton iterations={exc.newton_iterations})",
                node=int(first),
                iteration=k,
            ) from exc
        E1[p] = (np.asarray(w_end) - U[first]) / width - forcing
        for q in range(first, last):
            dtq = dt * (tau2[q + 1] - tau2[q])
            U[q + 1] = U[q] + dtq * (E1[p] - E1_old[p]) + dtq * (F2[q] - F2_old[q]) + integrals[q - first]
            _check_finite(U[q + 1], q + 1, k)
            F2[q + 1] = rhs.f2(U[q + 1], t_n + tau2[q + 1] * dt)
        F1[p + 1] = rhs.f1(U[last], t_b)
    return MRSweepState(U, F1, F2, k, list(state.residual_history)), E1


def _run_step(rhs, u0, t_n, dt, h, controls, f1_0, f2_0, sweep):
    if not dt > 0:
        raise ValueError("dt must be positive")
    u0 = np.asarray(u0, dtype=float)
    state, evals1, evals2 = _provisional(rhs, u0, t_n, h, f1_0, f2_0, controls.reuse_first_eval)
    stopped = False
    for _ in range(controls.num_iterations):
        state = sweep(state)
        evals1 += h.M1
        evals2 += h.M2
        state.residual_history.append(mr_residual(state, u0, dt, h))
        if _should_stop(state.residual_history, controls):
            stopped = state.k < controls.num_iterations
            break
    diag = MRStepDiagnostics(
        state.residual_history, evals1, evals2, state.k, stopped,
        final_f1=state.F1[-1], final_f2=state.F2[-1],
    )
    return state, diag


def mrsdc_step_mode1(
    rhs: SplitRHS,
    u0,
    t_n: float,
    dt: float,
    h: MultirateHierarchy,
    controls: StepControls = StepControls(),
    f1_0=None,
    f2_0=None,
    return_state: bool = False,
):
    """Advance one step with explicit coarse and fine components.

    ``f1_0``/``f2_0`` are the component values at ``(u0, t_n)`` when already
    known.  Returns ``(u_new, diagnostics)``, or ``(state, diagnostics)`` with
    ``return_state``.
    """
    if rhs.f1_stiffness != "explicit":
        raise ValueError("mode 1 needs an explicit f1")
    state, diag = _run_step(
        rhs, u0, t_n, dt, h, controls, f1_0, f2_0,
        lambda s: mrsdc_sweep_mode1(rhs, s, t_n, dt, h),
    )
    return (state if return_state else state.U[-1].copy()), diag


def mrsdc_step_mode2(
    rhs: SplitRHS,
    u0,
    t_n: float,
    dt: float,
    h: MultirateHierarchy,
    controls: StepControls = StepControls(),
    stiff: StiffOptions = StiffOptions(),
    f1_0=None,
    f2_0=None,
    return_state: bool = False,
):
    """Advance one step with a stiff coarse component (see module docstring)."""
    if rhs.f1_stiffness != "implicit":
        raise ValueError("mode 2 needs an implicit f1")
    stats = StiffStats()
    E1 = None

    def sweep(s):
        nonlocal E1
        if E1 is None:
            E1 = np.broadcast_to(s.F1[0], (h.M1,) + s.F1.shape[1:]).copy()
        s, E1 = mrsdc_sweep_mode2(rhs, s, E1, t_n, dt, h, stiff, stats)
        return s

    state, diag = _run_step(rhs, u0, t_n, dt, h, controls, f1_0, f2_0, sweep)
    diag.stiff_stats = stats
    return (state if return_state else state.U[-1].copy()), diag


@dataclass
class MultirateResult:
    u: np.ndarray
    steps: int
    dt: float
    coarse_evaluations: int
    fine_evaluations: int
    residuals: list


def integrate_multirate(
    rhs: SplitRHS,
    u0,
    t0: float,
    t_final: float,
    dt_max: float,
    h: MultirateHierarchy,
    controls: StepControls = StepControls(),
    stiff: Optional[StiffOptions] = None,
) -> MultirateResult:
    """Integrate with equal multirate steps; the mode follows ``rhs.f1_stiffness``."""
    n, dt = uniform_steps(t_final - t0, dt_max)
    u = np.asarray(u0, dtype=float).copy()
    f1_0 = f2_0 = None
    e1 = e2 = 0
    residuals = []
    for i in range(n):
        t = t0 + i * dt
        if rhs.f1_stiffness == "implicit":
            u, diag = mrsdc_step_mode2(rhs, u, t, dt, h, controls, stiff or StiffOptions(), f1_0, f2_0)
        else:
            u, diag = mrsdc_step_mode1(rhs, u, t, dt, h, controls, f1_0, f2_0)
        if controls.reuse_first_eval:
            f1_0, f2_0 = diag.final_f1, diag.final_f2
        e1 += diag.coarse_evaluations
        e2 += diag.fine_evaluations
        residuals.append(diag.residuals[-1])
    return MultirateResult(u, n, dt, e1, e2, residuals)


def multirate_collocation_oracle(A1, A2, u0, t_n: float, dt: float, h: MultirateHierarchy, b1=None, b2=None):
    """Solve the multirate collocation system for affine components directly.

    ``f1(u, t) = A1 u + b1(t)`` and ``f2(u, t) = A2 u + b2(t)`` (``b1``, ``b2``
    default to zero).  Returns the fine-node states, shape ``(M2 + 1, d)``.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    d = u0.size
    A1, A2 = (np.asarray(A, dtype=float) for A in (A1, A2))
    A1 = A1 * np.eye(d) if A1.ndim == 0 else A1.reshape(d, d)
    A2 = A2 * np.eye(d) if A2.ndim == 0 else A2.reshape(d, d)
    t1 = t_n + h.coarse.nodes * dt
    t2 = t_n + h.fine.nodes * dt
    g1 = np.array([np.broadcast_to(b1(t), (d,)) if b1 else np.zeros(d) for t in t1])
    g2 = np.array([np.broadcast_to(b2(t), (d,)) if b2 else np.zeros(d) for t in t2])
    M2 = h.M2
    # map coarse node p to its fine unknown (fine index c_p - 1; c_0 = 0 is known)
    C = np.zeros((h.M1 + 1, M2 + 1))
    C[np.arange(h.M1 + 1), h.coarse_index] = 1.0
    # U_fine = E u0 + dt (Q21 C U_all + Q22 U_all)(A) + forcing, U_all includes U_0
    W1 = dt * h.Q21 @ C  # M2 x (M2+1), acts through A1
    W2 = dt * h.Q22  # acts through A2
    system = np.eye(M2 * d) - np.kron(W1[:, 1:], A1) - np.kron(W2[:, 1:], A2)
    rhs = (
        np.tile(u0, M2)
        + np.kron(W1[:, 0], A1 @ u0)
        + np.kron(W2[:, 0], A2 @ u0)
        + (dt * h.Q21 @ g1).ravel()
        + (dt * h.Q22 @ g2).ravel()
    )
    sol = np.linalg.solve(system, rhs)
    return np.vstack([u0, sol.reshape(M2, d)])
