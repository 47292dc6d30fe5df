"""Periodic 2D variable-coefficient heat problems and split ODE test problems.

Fields on a :class:`Grid2D` are arrays of shape ``(ny, nx)`` with ``x``
varying fastest; flattened states use the same (C) ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import ive

from .mrsdc import SplitRHS
from .stencil import FIRST_DERIVATIVE8, StencilChoice, apply_narrow, apply_wide, narrow_coefficients

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid2D:
    """Uniform node-based periodic grid on ``[0, 2 pi)^2``: ``x_i = i dx``."""

    nx: int
    ny: Optional[int] = None

    def __post_init__(self):
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 points per direction")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def dx(self) -> float:
        return TWO_PI / self.nx

    @property
    def dy(self) -> float:
        return TWO_PI / self.ny

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.dy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y)

    def check_stencil(self, stencil: StencilChoice):
        need = 9 if stencil.kind == "wide8" else 2 * stencil.half_width + 1
        if min(self.nx, self.ny) < need:
            raise ValueError(f"{stencil.kind} needs at least {need} points per direction, grid is {self.nx}x{self.ny}")


Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HeatProblem:
    """``u_t = (a u_x)_x + (b u_y)_y + g`` on the periodic square."""

    name: str
    a: Coefficient
    b: Coefficient
    u0: Coefficient
    epsilon: float
    source: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = None
    exact: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = None

    def coefficients(self, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
        X, Y = grid.mesh()
        a, b = self.a(X, Y), self.b(X, Y)
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("diffusion coefficients must be positive")
        return a, b

    def initial(self, grid: Grid2D) -> np.ndarray:
        return self.u0(*grid.mesh())


def make_t1(epsilon: float = 0.1) -> HeatProblem:
    """Manufactured problem with exact solution ``exp(-t) sin x sin y``."""

    def coef(X, Y):
        return 1.0 + epsilon * np.cos(X) * np.cos(Y)

    def exact(X, Y, t):
        return math.exp(-t) * np.sin(X) * np.sin(Y)

    def source(X, Y, t):
        return (1.0 + 4.0 * epsilon * np.cos(X) * np.cos(Y)) * exact(X, Y, t)

    return HeatProblem(
        "T1", coef, coef, lambda X, Y: np.sin(X) * np.sin(Y), epsilon, source, exact
    )


def make_t2(epsilon: float = 0.9) -> HeatProblem:
    """Unforced problem with strongly varying coefficients; no exact solution."""

    def a(X, Y):
        return 1.0 + epsilon * np.cos(2 * X) * np.sin(2 * Y + np.pi / 3)

    def b(X, Y):
        return 1.0 + epsilon * np.cos(2 * X + np.pi / 3) * np.sin(2 * Y)

    return HeatProblem("T2", a, b, lambda X, Y: np.sin(X) * np.sin(Y), epsilon)


def heat_rhs(p: HeatProblem, grid: Grid2D, stencil: StencilChoice, t: float, u: np.ndarray) -> np.ndarray:
    """Right-hand side on the grid, applying the 1D stencil along each direction."""
    grid.check_stencil(stencil)
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid {grid.shape}")
    a, b = p.coefficients(grid)
    if stencil.kind == "wide8":
        out = apply_wide(a, u, grid.dx, axis=1) + apply_wide(b, u, grid.dy, axis=0)
    else:
        M = stencil.matrix()
        out = apply_narrow(M, a, u, grid.dx, axis=1) + apply_narrow(M, b, u, grid.dy, axis=0)
    if p.source is not None:
        out = out + p.source(*grid.mesh(), t)
    return out


def _derivative_matrix(n: int, h: float) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    idx = np.arange(n)
    for k, c in enumerate(FIRST_DERIVATIVE8, start=1):
        for sign in (1, -1):
            rows.append(idx)
            cols.append((idx + sign * k) % n)
            vals.append(np.full(n, sign * float(c) / h))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


class HeatOperator:
    """Sparse assembly of :func:`heat_rhs` for repeated application.

    Acts on flattened fields (C order).  ``op(u, t)`` returns the flattened
    right-hand side including the source term.
    """

    def __init__(self, p: HeatProblem, grid: Grid2D, stencil: StencilChoice):
        grid.check_stencil(stencil)
        self.problem = p
        self.grid = grid
        self.stencil = stencil
        a, b = p.coefficients(grid)
        self.matrix = self._assemble(a, b).tocsr()
        if p.source is not None:
            X, Y = grid.mesh()
            self._source = p.source
            self._mesh = (X, Y)
        else:
            self._source = None

    def _assemble(self, a, b):
        g = self.grid
        ny, nx = g.shape
        if self.stencil.kind == "wide8":
            Dx = sp.kron(sp.identity(ny), _derivative_matrix(nx, g.dx))
            Dy = sp.kron(_derivative_matrix(ny, g.dy), sp.identity(nx))
            return Dx @ sp.diags(a.ravel()) @ Dx + Dy @ sp.diags(b.ravel()) @ Dy
        M = self.stencil.matrix()
        J, I = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        row = (J * nx + I).ravel()
        rows, cols, vals = [], [], []
        for k, c in narrow_coefficients(M, a, g.dx, axis=1).items():
            rows.append(row)
            cols.append((J * nx + (I + k) % nx).ravel())
            vals.append(c.ravel())
        for k, c in narrow_coefficients(M, b, g.dy, axis=0).items():
            rows.append(row)
            cols.append((((J + k) % ny) * nx + I).ravel())
            vals.append(c.ravel())
        n = nx * ny
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def __call__(self, u: np.ndarray, t: float) -> np.ndarray:
        out = self.matrix @ u
        if self._source is not None:
            out += self._source(*self._mesh, t).ravel()
        return out


def diffusive_dt(grid: Grid2D, p: HeatProblem) -> float:
    """``0.4 / ((dx^-2 + dy^-2) max(a, b))`` with the maximum over grid nodes."""
    a, b = p.coefficients(grid)
    peak = max(float(a.max()), float(b.max()))
    return 0.4 / ((grid.dx**-2 + grid.dy**-2) * peak)


def error_norms(u, ref) -> tuple[float, float]:
    """``(max |u - ref|, sqrt(mean((u - ref)^2)))``."""
    u = np.asarray(u, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if u.shape != ref.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {ref.shape}")
    diff = u - ref
    if diff.size == 0:
        return 0.0, 0.0
    return float(np.max(np.abs(diff))), float(np.sqrt(np.mean(diff**2)))


def restrict_sample(fine, coarse_shape) -> np.ndarray:
    """Pick the fine-grid nodes that coincide with a coarser node-based grid."""
    fine = np.asarray(fine)
    if np.isscalar(coarse_shape):
        coarse_shape = (coarse_shape,) * fine.ndim
    coarse_shape = tuple(coarse_shape)
    if len(coarse_shape) != fine.ndim:
        raise ValueError("coarse shape must have one entry per dimension")
    slices = []
    for nf, nc in zip(fine.shape, coarse_shape):
        if nc < 1 or nf % nc:
            raise ValueError(f"coarse size {nc} does not divide fine size {nf}")
        slices.append(slice(None, None, nf // nc))
    return fine[tuple(slices)].copy()


# -- spectral reference -----------------------------------------------------


class SpectralSolution:
    """Fourier coefficients of a periodic field; evaluates it on any grid."""

    def __init__(self, coefficients: np.ndarray):
        self.coefficients = coefficients

    @property
    def modes(self) -> int:
        return self.coefficients.shape[0]

    def sample(self, grid: Grid2D) -> np.ndarray:
        ny, nx = self.coefficients.shape
        kx = np.fft.fftfreq(nx, 1.0 / nx)
        ky = np.fft.fftfreq(ny, 1.0 / ny)
        Ex = np.exp(1j * np.outer(grid.x, kx))
        Ey = np.exp(1j * np.outer(grid.y, ky))
        return np.real(Ey @ self.coefficients @ Ex.T)


def spectral_reference(p: HeatProblem, t: float, modes: int = 192, tol: float = 1e-18) -> SpectralSolution:
    """High-accuracy solution of an unforced heat problem at time ``t``.

    Discretizes the operator with Fourier collocation on ``modes^2`` points
    (Nyquist mode removed, which makes the operator symmetric negative
    semi-definite) and applies ``exp(t L)`` through its Chebyshev expansion.
    """
    if p.source is not None:
        raise ValueError("the spectral reference handles unforced problems only")
    grid = Grid2D(modes)
    a, b = p.coefficients(grid)
    k = np.fft.rfftfreq(modes, 1.0 / modes)
    if modes % 2 == 0:
        k[-1] = 0.0
    ikx = 1j * k
    iky = 1j * k[:, None]

    def dx(u):
        return np.fft.irfft(ikx * np.fft.rfft(u, axis=1), n=modes, axis=1)

    def dy(u):
        return np.fft.irfft(iky * np.fft.rfft(u, axis=0), n=modes, axis=0)

    def L(u):
        return dx(a * dx(u)) + dy(b * dy(u))

    u = p.initial(grid)
    if t > 0:
        kmax = modes // 2 - 1 if modes % 2 == 0 else modes // 2
        rho = (float(a.max()) + float(b.max())) * kmax**2
        u = _chebyshev_exp(L, rho, u, t, tol)
    return SpectralSolution(np.fft.fft2(u) / u.size)


def _chebyshev_exp(L, rho: float, v: np.ndarray, t: float, tol: float) -> np.ndarray:
    # exp(t L) v for L with spectrum in [-rho, 0]
    beta = t * rho / 2.0
    n = int(beta + 10.0 * math.sqrt(beta) + 50)
    c = ive(np.arange(n), beta)
    n = int(np.nonzero(c > tol * c.max())[0].max()) + 1

    def shifted(w):
        return (2.0 / rho) * L(w) + w

    prev, cur = v, shifted(v)
    out = c[0] * prev + 2.0 * c[1] * cur
    for j in range(2, n):
        prev, cur = cur, 2.0 * shifted(cur) - prev
        out += 2.0 * c[j] * cur
    return out


# -- split ODE test problems -------------------------------------------------


def make_split_linear(l1: float, l2: float) -> SplitRHS:
    """``u' = l1 u + l2 u`` split into its two terms; exact ``u0 exp((l1 + l2) t)``."""
    return SplitRHS(
        lambda u, t: l1 * u,
        lambda u, t: l2 * u,
        "explicit",
        jac1=lambda u, t: np.atleast_2d(l1) * np.eye(np.size(u)),
        exact=lambda t, u0: np.asarray(u0) * math.exp((l1 + l2) * t),
    )


def make_prothero_robinson(stiffness: float = 1e4) -> SplitRHS:
    """``f1 = -stiffness (u - cos t)`` (stiff), ``f2 = -sin t``; exact ``cos t``
    from ``u0 = 1``."""
    lam = float(stiffness)
    return SplitRHS(
        lambda u, t: -lam * (u - math.cos(t)),
        lambda u, t: np.full_like(np.asarray(u, dtype=float), -math.sin(t)),
        "implicit",
        jac1=lambda u, t: -lam * np.eye(np.size(u)),
        exact=lambda t, u0: np.full_like(np.asarray(u0, dtype=float), math.cos(t)),
    )
