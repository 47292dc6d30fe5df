"""Adaptive implicit integrator for stiff ODE systems.

Each step runs backward Euler over the step with ``1, 2, 4, ...`` equal
substeps and combines the results by Richardson extrapolation.  The
difference between the two most accurate table entries estimates the local
error, which is held below ``atol + rtol |u|`` (RMS over components).  Every
backward-Euler stage is solved with modified Newton iteration using a
finite-difference or user-supplied Jacobian frozen at the start of the step.

``StiffOptions(method="bdf")`` or ``"radau"`` hands the integration to the
variable-order BDF or Radau IIA solvers of :func:`scipy.integrate.solve_ivp`
instead; they take far fewer steps at tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lu_factor, lu_solve

RHS = Callable[[np.ndarray, float], np.ndarray]

# Newton iterations stop once the estimated remaining error is this
# fraction of the local error tolerance
NEWTON_TOL = 0.03


class StiffConvergenceError(RuntimeError):
    """Newton iteration failed even at the minimum step size."""

    def __init__(self, message: str, t: float, step: float, newton_iterations: int):
        super().__init__(message)
        self.t = t
        self.step = step
        self.newton_iterations = newton_iterations


@dataclass(frozen=True)
class StiffOptions:
    """Tolerances and solver knobs.

    ``levels`` is the number of backward-Euler solutions per step (with 1,
    2, 4, ... substeps); the accepted value has order ``levels``.  ``jacobian``
    is ``"finite-difference"`` or ``"user"``; in the latter case the caller
    passes ``jac(u, t)`` to :func:`integrate_stiff`.  ``method`` is
    ``"extrapolated-euler"`` (built in), ``"bdf"`` or ``"radau"``.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    max_newton_iters: int = 6
    initial_step_fraction: float = 1e-3
    jacobian: str = "finite-difference"
    levels: int = 3
    min_step_fraction: float = 1e-14
    max_steps: int = 1_000_000
    method: str = "extrapolated-euler"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")
        if not 0 < self.initial_step_fraction <= 1:
            raise ValueError("initial_step_fraction must lie in (0, 1]")
        if self.jacobian not in ("finite-difference", "user"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")
        if self.levels not in (2, 3):
            raise ValueError("levels must be 2 or 3")
        if self.method not in ("extrapolated-euler", "bdf", "radau"):
            raise ValueError(f"unknown stiff method {self.method!r}")


@dataclass
class StiffStats:
    steps: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    jacobian_evals: int = 0
    newton_failures: int = 0


def fd_jacobian(f: RHS, u: np.ndarray, t: float, fu: np.ndarray, atol: float) -> np.ndarray:
    """One-sided difference Jacobian with perturbation ``sqrt(eps) max(|u_i|, atol)``."""
    d = u.size
    J = np.empty((d, d))
    delta = np.sqrt(np.finfo(float).eps) * np.maximum(np.abs(u), atol)
    for i in range(d):
        up = u.copy()
        up[i] += delta[i]
        J[:, i] = (np.asarray(f(up, t), dtype=float) - fu) / delta[i]
    return J


class _NewtonFailure(Exception):
    pass


class _Stepper:
    def __init__(self, f, opts, stats):
        self.f = f
        self.opts = opts
        self.stats = stats
        self._lu = {}
        self.eta = 1.0

    def rhs(self, u, t):
        self.stats.rhs_evals += 1
        return np.asarray(self.f(u, t), dtype=float)

    def weights(self, u):
        return self.opts.atol + self.opts.rtol * np.abs(u)

    def factor(self, J, h):
        # small systems: an explicit inverse is cheaper than LU calls
        if h not in self._lu:
            A = np.eye(J.shape[0]) - h * J
            if J.shape[0] <= 8:
                inv = np.linalg.inv(A)
                self._lu[h] = lambda b, inv=inv: inv @ b
            else:
                lu = lu_factor(A)
                self._lu[h] = lambda b, lu=lu: lu_solve(lu, b)
        return self._lu[h]

    def backward_euler(self, J, y, t, h):
        # solve z = y + h f(z, t + h) by modified Newton from z = y; the
        # contraction rate carries over between solves so that a linear
        # problem needs a single iteration
        solve = self.factor(J, h)
        z = y.copy()
        w = self.weights(y)
        eta = max(self.eta, np.finfo(float).eps) ** 0.8
        prev = None
        for it in range(1, self.opts.max_newton_iters + 1):
            g = z - y - h * self.rhs(z, t + h)
            dz = solve(-g)
            z = z + dz
            size = np.sqrt(np.mean((dz / w) ** 2))
            if not np.isfinite(size):
                raise _NewtonFailure(it)
            if prev is not None:
                theta = size / prev
                if theta >= 0.9:
                    raise _NewtonFailure(it)
                eta = theta / (1.0 - theta)
            if eta * size <= NEWTON_TOL or size == 0.0:
                self.eta = eta
                return z
            prev = size
        raise _NewtonFailure(self.opts.max_newton_iters)

    def step(self, J, y, t, h):
        # Richardson table of backward Euler with 1, 2, 4, ... substeps
        self._lu.clear()
        firsts = []
        for level in range(self.opts.levels):
            n = 2**level
            sub = h / n
            z = y
            for i in range(n):
                z = self.backward_euler(J, z, t + i * sub, sub)
            firsts.append(z)
        table = [firsts]
        for j in range(1, self.opts.levels):
            prev = table[-1]
            factor = 2.0**j
            table.append([(factor * prev[i + 1] - prev[i]) / (factor - 1) for i in range(len(prev) - 1)])
        best = table[-1][0]
        second = table[-2][-1]
        w = self.weights(np.maximum(np.abs(y), np.abs(best)))
        err = np.sqrt(np.mean(((best - second) / w) ** 2))
        return best, err


def integrate_stiff(
    f: RHS,
    u0,
    t0: float,
    t1: float,
    opts: StiffOptions = StiffOptions(),
    jac: Optional[Callable[[np.ndarray, float], np.ndarray]] = None,
    stats: Optional[StiffStats] = None,
) -> np.ndarray:
    """Integrate ``u' = f(u, t)`` from ``t0`` to ``t1`` and return ``u(t1)``."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if opts.jacobian == "user" and jac is None:
        raise ValueError("a user-supplied Jacobian was requested but none given")
    scalar = np.ndim(u0) == 0
    y = np.atleast_1d(np.array(u0, dtype=float)).ravel()
    shape = np.shape(u0)
    stats = stats if stats is not None else StiffStats()
    if opts.method != "extrapolated-euler":
        return _integrate_scipy(f, y, shape, scalar, t0, t1, opts, jac, stats)
    stepper = _Stepper(lambda u, t: np.reshape(f(u.reshape(shape) if not scalar else u[0], t), -1), opts, stats)

    span = t1 - t0
    h = opts.initial_step_fraction * span
    h_min = opts.min_step_fraction * span
    order = opts.levels
    t = t0
    while t < t1:
        if stats.steps + stats.rejected >= opts.max_steps:
            raise StiffConvergenceError("too many steps", t, h, 0)
        last = t + h >= t1 - 1e-12 * span
        if last:
            h = t1 - t
        if opts.jacobian == "user":
            J = np.atleast_2d(np.asarray(jac(y.reshape(shape) if not scalar else y[0], t), dtype=float))
        else:
            J = fd_jacobian(stepper.rhs, y, t, stepper.rhs(y, t), opts.atol)
        stats.jacobian_evals += 1
        try:
            y_new, err = stepper.step(J, y, t, h)
        except _NewtonFailure as exc:
            stats.newton_failures += 1
            stepper.eta = 1.0
            stats.rejected += 1
            h *= 0.5
            if h < h_min:
                raise StiffConvergenceError(
                    f"Newton iteration did not converge at t={t:.6g}", t, h, exc.args[0]
                ) from None
            continue
        if not np.all(np.isfinite(y_new)):
            err = np.inf
        if err <= 1.0:
            t = t1 if last else t + h
            y = y_new
            stats.steps += 1
            grow = 5.0 if err == 0 else min(5.0, 0.9 * err ** (-1.0 / order))
            h *= max(grow, 0.2)
        else:
            stats.rejected += 1
            h *= max(0.2, 0.9 * err ** (-1.0 / order)) if np.isfinite(err) else 0.2
            if h < h_min:
                raise StiffConvergenceError(f"step size underflow at t={t:.6g}", t, h, 0)
    return y[0] if scalar else y.reshape(shape)


def _integrate_scipy(f, y, shape, scalar, t0, t1, opts, jac, stats):
    def unpack(u):
        return u[0] if scalar else u.reshape(shape)

    def rhs(t, u):
        return np.reshape(f(unpack(u), t), -1)

    jacobian = None
    if opts.jacobian == "user":
        def jacobian(t, u):
            return np.atleast_2d(np.asarray(jac(unpack(u), t), dtype=float))

    sol = solve_ivp(
        rhs, (t0, t1), y,
        method="BDF" if opts.method == "bdf" else "Radau",
        rtol=opts.rtol, atol=opts.atol, jac=jacobian,
        first_step=opts.initial_step_fraction * (t1 - t0),
    )
    stats.steps += max(len(sol.t) - 1, 0)
    stats.rhs_evals += sol.nfev
    stats.jacobian_evals += sol.njev
    if not sol.success:
        raise StiffConvergenceError(sol.message, float(sol.t[-1]), 0.0, 0)
    out = sol.y[:, -1]
    return out[0] if scalar else out.reshape(shape)
