"""Narrow and wide conservative stencils for ``d/dx (a du/dx)`` on periodic grids.

The narrow stencil approximates

.. math::

    \\frac{\\partial}{\\partial x}\\left(a \\frac{\\partial u}{\\partial x}\\right)\\bigg|_i
    \\approx \\frac{H_{i+1/2} - H_{i-1/2}}{\\Delta x^2},
    \\qquad
    H_{i+1/2} = \\sum_{m=-s+1}^{s} \\sum_{n=-s+1}^{s} a_{i+m} M_{mn} u_{i+n},

with a ``2s x 2s`` coupling matrix ``M``.  The 8th-order family (``s = 4``)
has two free parameters ``(m47, m48)``; the 6th-order family (``s = 3``) has
one, ``m36``.  Entries are kept as exact rationals (affine in the free
parameters) and converted to floats only when a :class:`StencilMatrix` is
built.

The wide stencil applies the standard 8th-order first derivative twice,
``D(a D u)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial
from typing import Sequence, Union

import numpy as np

Number = Union[int, float, Fraction]

# upper-half entries (row, col) -> (constant, d/dm47, d/dm48), 1-based indices
_NARROW8 = {
    (1, 1): ("5/336", 0, 1),
    (1, 2): ("-83/3600", "-1/5", "-14/5"),
    (1, 3): ("299/50400", "2/5", "13/5"),
    (1, 4): ("17/12600", "-1/5", "-4/5"),
    (1, 5): ("1/1120", 0, 0),
    (2, 1): ("-11/560", 0, -2),
    (2, 2): ("-31/360", 1, 3),
    (2, 3): ("41/200", "-9/5", "4/5"),
    (2, 4): ("-5927/50400", "4/5", "-9/5"),
    (2, 5): ("17/600", "-1/5", "-4/5"),
    (2, 6): ("-503/50400", "1/5", "4/5"),
    (3, 1): ("-1/280", 0, 0),
    (3, 2): ("1097/5040", -2, 6),
    (3, 3): ("-1349/10080", 3, -12),
    (3, 4): ("-887/5040", -1, 6),
    (3, 5): ("3613/50400", "4/5", "-9/5"),
    (3, 6): ("467/25200", "-3/5", "18/5"),
    (3, 7): ("139/25200", "-1/5", "-9/5"),
    (4, 1): ("17/1680", 0, 2),
    (4, 2): ("-319/2520", 2, -8),
    (4, 3): ("-919/5040", -2, 6),
    (4, 4): ("-445/2016", 0, 0),
    (4, 5): ("583/720", -1, 6),
    (4, 6): ("-65/224", 0, -7),
    (4, 7): (0, 1, 0),
    (4, 8): (0, 0, 1),
}

# (constant, d/dm36)
_NARROW6 = {
    (1, 1): ("-11/180", 1),
    (1, 2): ("1/9", -2),
    (1, 3): ("-1/18", 1),
    (1, 4): ("1/180", 0),
    (2, 1): ("7/60", -3),
    (2, 2): ("-1/120", 5),
    (2, 3): ("-17/90", -2),
    (2, 4): ("5/72", 1),
    (2, 5): ("1/90", -1),
    (3, 1): ("-1/15", 3),
    (3, 2): ("-11/60", -3),
    (3, 3): ("-101/360", 0),
    (3, 4): ("137/180", -2),
    (3, 5): ("-83/360", 1),
    (3, 6): (0, 1),
}

_TABLES = {8: (4, _NARROW8), 6: (3, _NARROW6)}

#: Standard 8th-order central first-derivative weights for offsets 1..4.
FIRST_DERIVATIVE8 = (Fraction(4, 5), Fraction(-1, 5), Fraction(4, 105), Fraction(-1, 280))

#: Named free-parameter presets for the 8th-order narrow stencil.
PRESETS = {
    "SMC": (Fraction(3557, 44100), Fraction(-2083, 117600)),
    "ZERO": (Fraction(0), Fraction(0)),
    "OPTIMAL": (Fraction(1059283, 13608000), Fraction(-856481, 40824000)),
}

#: Default free parameter of the 6th-order narrow stencil.
NARROW6_DEFAULT = (Fraction(281, 3600),)


def _check_order(order: int, params: Sequence[Number]) -> tuple[int, dict]:
    if order not in _TABLES:
        raise ValueError(f"narrow stencil order must be 8 or 6, got {order!r}")
    s, table = _TABLES[order]
    nparams = 2 if order == 8 else 1
    if len(params) != nparams:
        raise ValueError(
            f"order {order} stencil takes {nparams} free parameter(s), got {len(params)}"
        )
    return s, table


def exact_entries(order: int, params: Sequence[Number]) -> list[list[Fraction]]:
    """Return the ``2s x 2s`` stencil matrix as nested lists of fractions.

    Float parameters are converted exactly (``Fraction(0.1)`` is the binary
    value of ``0.1``), so the result is exact for whatever was passed in.
    """
    s, table = _check_order(order, params)
    p = [Fraction(x) for x in params]
    n = 2 * s
    out = [[Fraction(0)] * n for _ in range(n)]
    for (i, j), (const, *slopes) in table.items():
        value = Fraction(const) + sum(Fraction(c) * x for c, x in zip(slopes, p))
        out[i - 1][j - 1] = value
        out[n - i][n - j] = -value
    return out


@dataclass(frozen=True)
class StencilMatrix:
    """Coupling matrix ``M`` of a narrow stencil.

    ``entries[r, c]`` couples ``a_{i+m}`` with ``u_{i+n}`` where
    ``m = r - s + 1`` and ``n = c - s + 1`` (0-based ``r, c``).
    """

    half_width: int
    entries: np.ndarray
    params: tuple

    @property
    def order(self) -> int:
        return 2 * self.half_width

    @property
    def offsets(self) -> range:
        return range(-self.half_width + 1, self.half_width + 1)

    def exact(self) -> list[list[Fraction]]:
        return exact_entries(self.order, self.params)


@dataclass(frozen=True)
class StencilChoice:
    """Which discretization of ``(a u_x)_x`` to use.

    ``kind`` is ``"narrow8"``, ``"narrow6"`` or ``"wide8"``; ``params`` holds
    the free parameters of the narrow families and is empty for ``"wide8"``.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("narrow8", "narrow6", "wide8"):
            raise ValueError(f"unknown stencil kind {self.kind!r}")
        expected = {"narrow8": 2, "narrow6": 1, "wide8": 0}[self.kind]
        if len(self.params) != expected:
            raise ValueError(f"{self.kind} takes {expected} parameter(s), got {len(self.params)}")
        if not all(np.isfinite(float(x)) for x in self.params):
            raise ValueError("stencil parameters must be finite")

    @classmethod
    def preset(cls, name: str) -> "StencilChoice":
        """Expand ``"SMC"``, ``"ZERO"`` or ``"OPTIMAL"`` (8th order), or the
        bare family names ``"narrow8"`` (= SMC), ``"narrow6"``, ``"wide8"``."""
        key = name.upper()
        if key in PRESETS:
            return cls("narrow8", PRESETS[key])
        if name == "narrow8":
            return cls("narrow8", PRESETS["SMC"])
        if name == "narrow6":
            return cls("narrow6", NARROW6_DEFAULT)
        if name == "wide8":
            return cls("wide8")
        raise ValueError(f"unknown stencil preset {name!r}")

    @property
    def half_width(self) -> int:
        return {"narrow8": 4, "narrow6": 3, "wide8": 8}[self.kind]

    def matrix(self) -> StencilMatrix:
        if self.kind == "wide8":
            raise ValueError("the wide stencil has no coupling matrix")
        return build_narrow(8 if self.kind == "narrow8" else 6, self.params)


def build_narrow(order: int, params: Sequence[Number]) -> StencilMatrix:
    """Build the narrow stencil matrix of the given order (8 or 6)."""
    rows = exact_entries(order, params)
    entries = np.array([[float(x) for x in row] for row in rows])
    entries.setflags(write=False)
    return StencilMatrix(order // 2, entries, tuple(params))


def _shifted(x: np.ndarray, offsets, axis: int) -> np.ndarray:
    # stack[k][..., i, ...] = x[..., i + offsets[k], ...] (periodic)
    return np.stack([np.roll(x, -k, axis=axis) for k in offsets])


def _check_fields(a, u, dx, min_points, axis):
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    if a.shape != u.shape:
        raise ValueError(f"coefficient shape {a.shape} does not match field shape {u.shape}")
    if u.ndim == 0:
        raise ValueError("fields must be at least one-dimensional")
    n = u.shape[axis]
    if n < min_points:
        raise ValueError(f"need at least {min_points} points along axis {axis}, got {n}")
    if not dx > 0:
        raise ValueError("grid spacing must be positive")
    return a, u


def interface_flux(M: StencilMatrix, a, u, axis: int = -1) -> np.ndarray:
    """``H_{i+1/2}`` for every ``i`` (periodic), without the ``1/dx^2`` factor."""
    offs = list(M.offsets)
    us = _shifted(u, offs, axis)
    as_ = _shifted(a, offs, axis)
    mu = np.tensordot(M.entries, us, axes=(1, 0))
    return np.sum(as_ * mu, axis=0)


def apply_narrow(M: StencilMatrix, a, u, dx: float, axis: int = -1) -> np.ndarray:
    """Apply the narrow stencil along ``axis`` of periodic fields ``a`` and ``u``."""
    a, u = _check_fields(a, u, dx, 2 * M.half_width, axis)
    H = interface_flux(M, a, u, axis)
    return (H - np.roll(H, 1, axis=axis)) / dx**2


def first_derivative8(u, dx: float, axis: int = -1) -> np.ndarray:
    """8th-order central first derivative of a periodic field."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[axis] < 9:
        raise ValueError("first_derivative8 needs at least 9 points")
    if not dx > 0:
        raise ValueError("grid spacing must be positive")
    out = np.zeros_like(u)
    for k, c in enumerate(FIRST_DERIVATIVE8, start=1):
        out += float(c) * (np.roll(u, -k, axis=axis) - np.roll(u, k, axis=axis))
    return out / dx


def apply_wide(a, u, dx: float, axis: int = -1) -> np.ndarray:
    """Wide stencil ``D(a D u)`` with the 8th-order central ``D``."""
    a, u = _check_fields(a, u, dx, 9, axis)
    return first_derivative8(a * first_derivative8(u, dx, axis), dx, axis)


def narrow_coefficients(M: StencilMatrix, a, dx: float, axis: int = -1) -> dict[int, np.ndarray]:
    """Per-point weights ``C_k`` with ``apply_narrow(M, a, u) = sum_k C_k * u_{i+k}``.

    Offsets run over ``k = -s..s``.  Useful when ``a`` is fixed and the
    operator is applied many times.
    """
    a = np.asarray(a, dtype=float)
    s = M.half_width
    offs = list(M.offsets)
    as_ = _shifted(a, offs, axis)
    # W[n][i] = sum_m M_mn a_{i+m}
    W = dict(zip(offs, np.tensordot(M.entries.T, as_, axes=(1, 0))))
    coeffs = {}
    for k in range(-s, s + 1):
        c = np.zeros_like(a)
        if k in W:
            c = c + W[k]
        if k + 1 in W:
            c = c - np.roll(W[k + 1], 1, axis=axis)
        coeffs[k] = c / dx**2
    return coeffs


# -- truncation error -------------------------------------------------------


@lru_cache(maxsize=None)
def _taylor_moments(order: int, params: tuple) -> dict:
    # c[j, l]: coefficient of a^(j) u^(l) dx^(j+l-2) in the expansion of the
    # flux difference about x_i
    M = exact_entries(order, params)
    s = order // 2
    offs = range(-s + 1, s + 1)
    top = order + 2
    out = {}
    for j in range(top + 1):
        for l in range(top + 1 - j):
            total = Fraction(0)
            for (r, m), (c, n) in itertools.product(enumerate(offs), enumerate(offs)):
                if M[r][c]:
                    total += M[r][c] * (Fraction(m) ** j * n**l - Fraction(m - 1) ** j * (n - 1) ** l)
            out[j, l] = total / (factorial(j) * factorial(l))
    return out


def taylor_moments(order: int, params: Sequence[Number]) -> dict:
    """Exact coefficients of ``a^(j) u^(l) dx^(j+l-2)`` in the stencil's Taylor
    expansion, for all ``j + l <= order + 2``."""
    _check_order(order, params)
    return dict(_taylor_moments(order, tuple(Fraction(x) for x in params)))


def truncation_coefficients(order: int, params: Sequence[Number]) -> list[Fraction]:
    """Leading truncation-error coefficients (numerical minus exact).

    Entry ``j`` multiplies ``a^(j) u^(order+2-j)`` for ``j = 0..order+1``.
    """
    c = taylor_moments(order, params)
    top = order + 2
    return [c[j, top - j] for j in range(top)]


def truncation_bound(order: int, params: Sequence[Number]):
    """Sum of absolute leading truncation coefficients (derivatives taken as 1).

    Returns a :class:`~fractions.Fraction` when all parameters are exact
    (ints or fractions), a float otherwise.
    """
    exact = all(isinstance(x, (int, Fraction)) for x in params)
    bound = sum(abs(x) for x in truncation_coefficients(order, params))
    return bound if exact else float(bound)


def _affine_terms(order: int):
    nparams = 2 if order == 8 else 1
    zero = (Fraction(0),) * nparams
    base = truncation_coefficients(order, zero)
    slopes = []
    for k in range(nparams):
        unit = tuple(Fraction(int(i == k)) for i in range(nparams))
        slopes.append([x - b for x, b in zip(truncation_coefficients(order, unit), base)])
    # term t is base[t] + sum_k slopes[k][t] * p_k
    return base, [tuple(sl[t] for sl in slopes) for t in range(len(base))]


def optimize_params(order: int) -> tuple[Fraction, ...]:
    """Exact minimizer of :func:`truncation_bound` over the free parameters.

    The objective is a sum of absolute values of affine functions, so its
    minimum sits on a vertex where ``d`` of the terms vanish (``d`` is the
    number of free parameters).  All such vertices are enumerated in rational
    arithmetic.
    """
    if order not in _TABLES:
        raise ValueError(f"narrow stencil order must be 8 or 6, got {order!r}")
    base, slopes = _affine_terms(order)
    d = len(slopes[0])
    active = [t for t in range(len(base)) if any(slopes[t])]

    def objective(p):
        return sum(abs(b + sum(g * x for g, x in zip(sl, p))) for b, sl in zip(base, slopes))

    best = None
    for combo in itertools.combinations(active, d):
        p = _solve_exact([slopes[t] for t in combo], [-base[t] for t in combo])
        if p is None:
            continue
        value = objective(p)
        if best is None or value < best[0]:
            best = (value, p)
    if best is None:
        raise ValueError(f"truncation bound for order {order} has no vertex minimizer")
    return best[1]


def _solve_exact(rows, rhs):
    # Cramer's rule for d <= 2, rational
    if len(rows) == 1:
        (a,), (b,) = rows[0], rhs
        return None if a == 0 else (b / a,)
    (a, b), (c, d) = rows
    det = a * d - b * c
    if det == 0:
        return None
    return ((rhs[0] * d - b * rhs[1]) / det, (a * rhs[1] - c * rhs[0]) / det)
