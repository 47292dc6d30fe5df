import functools
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowsdc.stencil import (
    FIRST_DERIVATIVE8,
    NARROW6_DEFAULT,
    PRESETS,
    StencilChoice,
    apply_narrow,
    apply_wide,
    build_narrow,
    exact_entries,
    first_derivative8,
    narrow_coefficients,
    optimize_params,
    truncation_bound,
    truncation_coefficients,
)

SMC = PRESETS["SMC"]
fractions_small = st.fractions(min_value=-1, max_value=1, max_denominator=1000)


# -- independent oracle: symbolic Taylor expansion of the flux difference ----


def _sympy_truncation(order, params):
    """Coefficients of a^(j) u^(order+2-j) in (stencil - exact) / dx^order."""
    s = order // 2
    top = order + 2
    h = sp.Symbol("h")
    A = sp.symbols(f"a0:{top + 1}")
    U = sp.symbols(f"u0:{top + 1}")

    def series(coeffs, offset):
        return sum(coeffs[k] * (offset * h) ** k / sp.factorial(k) for k in range(top + 1))

    M = [[sp.Rational(x.numerator, x.denominator) for x in row] for row in exact_entries(order, params)]
    offs = range(-s + 1, s + 1)

    def flux(shift):
        return sum(
            M[r][c] * series(A, m + shift) * series(U, n + shift)
            for r, m in enumerate(offs)
            for c, n in enumerate(offs)
            if M[r][c] != 0
        )

    diff = sp.expand((flux(0) - flux(-1)) / h**2)
    exact = A[1] * U[1] + A[0] * U[2]
    err = sp.expand(diff - exact)
    poly = sp.Poly(err, h)
    lower = [poly.coeff_monomial(h**k) for k in range(order)]
    lead = poly.coeff_monomial(h**order)
    coeffs = [sp.Poly(lead, *A, *U).coeff_monomial(A[j] * U[top - j]) for j in range(top)]
    return lower, coeffs


@pytest.mark.parametrize("order,params", [(8, (0, 0)), (8, SMC), (6, (0,)), (6, NARROW6_DEFAULT)])
def test_truncation_coefficients_match_symbolic_expansion(order, params):
    lower, coeffs = _sympy_truncation(order, params)
    assert all(sp.simplify(c) == 0 for c in lower)
    ours = truncation_coefficients(order, params)
    assert [Fraction(int(sp.numer(c)), int(sp.denom(c))) for c in coeffs] == ours


def test_zero_parameter_bound_value():
    terms = [Fraction(1, 3150), Fraction(1, 630), Fraction(1, 35), Fraction(113, 840), Fraction(487, 1680),
             Fraction(4513, 12600), Fraction(2777, 10080), Fraction(3181, 25200), Fraction(1403, 50400),
             Fraction(1, 630)]
    assert truncation_bound(8, (0, 0)) == sum(terms)
    assert float(truncation_bound(8, (0, 0))) == pytest.approx(1.244206, abs=1e-6)


def test_smc_bound_below_zero_bound():
    assert truncation_bound(8, SMC) < truncation_bound(8, (0, 0))


@given(fractions_small, fractions_small)
@settings(max_examples=40, deadline=None)
def test_parameter_independent_terms(m47, m48):
    base = truncation_coefficients(8, (0, 0))
    other = truncation_coefficients(8, (m47, m48))
    for j in (0, 1, 2, 9):
        assert other[j] == base[j]


@given(fractions_small, fractions_small, fractions_small, fractions_small)
@settings(max_examples=40, deadline=None)
def test_bound_convex(p, q, r, s):
    mid = ((p + r) / 2, (q + s) / 2)
    assert truncation_bound(8, mid) <= (truncation_bound(8, (p, q)) + truncation_bound(8, (r, s))) / 2


# -- matrix structure -------------------------------------------------------


def test_build_narrow_examples():
    M = exact_entries(8, SMC)
    assert M[0][0] == Fraction(-111, 39200)
    assert exact_entries(8, (0, 0))[0][4] == Fraction(1, 1120)
    assert exact_entries(6, (Fraction(220063, 1000000),))[2][2] == Fraction(-101, 360)
    assert build_narrow(8, SMC).entries[0, 0] == pytest.approx(-2.83163e-3, rel=1e-5)


@given(fractions_small, fractions_small)
@settings(max_examples=30, deadline=None)
def test_antisymmetry_and_zero_pattern(m47, m48):
    for order, params in ((8, (m47, m48)), (6, (m47,))):
        M = exact_entries(order, params)
        s = order // 2
        n = 2 * s
        for i in range(n):
            for j in range(n):
                assert M[i][j] == -M[n - 1 - i][n - 1 - j]
        assert all(M[0][j] == 0 for j in range(s + 1, n))
        assert all(M[1][j] == 0 for j in range(s + 2, n))


def test_entries_affine_in_parameters():
    zero = exact_entries(8, (0, 0))
    e1 = exact_entries(8, (1, 0))
    e2 = exact_entries(8, (0, 1))
    p = (Fraction(3, 7), Fraction(-5, 11))
    M = exact_entries(8, p)
    for i in range(8):
        for j in range(8):
            assert M[i][j] == zero[i][j] + p[0] * (e1[i][j] - zero[i][j]) + p[1] * (e2[i][j] - zero[i][j])


def test_wrong_parameter_count():
    with pytest.raises(ValueError):
        build_narrow(8, (0,))
    with pytest.raises(ValueError):
        build_narrow(4, (0,))
    with pytest.raises(ValueError):
        StencilChoice("narrow8", (float("nan"), 0.0))


# -- application ------------------------------------------------------------


def _poly_with_ghosts(M, coeffs, dx, n=20):
    # interior application on an extended array: ghosts are exact polynomial values
    s = M.half_width
    x = (np.arange(-2 * s, n + 2 * s)) * dx
    u = np.polynomial.polynomial.polyval(x, coeffs)
    out = apply_narrow(M, np.ones_like(x), u, dx)
    return x[2 * s:-2 * s], out[2 * s:-2 * s]


@pytest.mark.parametrize("name", ["SMC", "ZERO", "OPTIMAL"])
def test_polynomial_exactness(name):
    M = StencilChoice.preset(name).matrix()
    dx = 0.1
    rng = np.random.default_rng(3)
    for degree in range(10):
        coeffs = rng.standard_normal(degree + 1)
        x, out = _poly_with_ghosts(M, coeffs, dx)
        d2 = np.polynomial.polynomial.polyder(coeffs, 2)
        expected = np.polynomial.polynomial.polyval(x, d2)
        scale = max(1.0, np.max(np.abs(expected)))
        assert np.max(np.abs(out - expected)) <= 1e-11 * scale * 100


def test_quadratic_gives_two():
    M = build_narrow(8, SMC)
    x, out = _poly_with_ghosts(M, [0.0, 0.0, 1.0], 0.05)
    assert np.allclose(out, 2.0, atol=1e-9)


# frozen from direct evaluation on the sawtooth mode
NYQUIST_NARROW8 = 2048 / 315
NYQUIST_NARROW6 = 272 / 45


@pytest.mark.parametrize("params", [SMC, (0, 0), PRESETS["OPTIMAL"]])
def test_nyquist_damped(params):
    u = (-1.0) ** np.arange(16)
    out = apply_narrow(build_narrow(8, params), np.ones(16), u, 1.0)
    assert np.allclose(out, -NYQUIST_NARROW8 * u, rtol=1e-13)
    out6 = apply_narrow(build_narrow(6, NARROW6_DEFAULT), np.ones(16), u, 1.0)
    assert np.allclose(out6, -NYQUIST_NARROW6 * u, rtol=1e-13)
    assert np.all(apply_wide(np.ones(16), u, 1.0) == 0.0)


@given(st.integers(9, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_conservation(n, seed):
    rng = np.random.default_rng(seed)
    a = 1.0 + rng.random(n)
    u = rng.standard_normal(n)
    dx = 2 * np.pi / n
    for out in (apply_narrow(build_narrow(8, SMC), a, u, dx), apply_wide(a, u, dx),
                apply_narrow(build_narrow(6, NARROW6_DEFAULT), a, u, dx)):
        H = np.max(np.abs(out)) * dx**2
        assert abs(out.sum()) <= 100 * n * np.finfo(float).eps * max(H, 1.0) / dx**2


def test_narrow_coefficients_reproduce_application():
    rng = np.random.default_rng(0)
    a = 1 + rng.random((5, 24))
    u = rng.standard_normal((5, 24))
    M = build_narrow(8, SMC)
    C = narrow_coefficients(M, a, 0.3, axis=1)
    manual = sum(c * np.roll(u, -k, axis=1) for k, c in C.items())
    assert np.allclose(manual, apply_narrow(M, a, u, 0.3, axis=1), rtol=1e-12, atol=1e-12)


def _refinement_rate(op, sizes):
    errs = []
    for n in sizes:
        x = np.arange(n) * 2 * np.pi / n
        dx = 2 * np.pi / n
        a = 1 + 0.3 * np.sin(x)
        u = np.sin(x)
        exact = 0.3 * np.cos(x) ** 2 - (1 + 0.3 * np.sin(x)) * np.sin(x)
        errs.append(np.max(np.abs(op(a, u, dx) - exact)))
    return np.log2(np.array(errs[:-1]) / np.array(errs[1:]))


@pytest.mark.parametrize("params", [SMC, (0, 0), PRESETS["OPTIMAL"], (Fraction(1, 3), Fraction(-1, 5))])
def test_narrow8_order_independent_of_parameters(params):
    M = build_narrow(8, params)
    rates = _refinement_rate(lambda a, u, dx: apply_narrow(M, a, u, dx), [16, 32, 64])
    assert rates[-1] >= 7.8


def test_narrow6_and_wide_orders():
    M = build_narrow(6, NARROW6_DEFAULT)
    assert _refinement_rate(lambda a, u, dx: apply_narrow(M, a, u, dx), [16, 32, 64])[-1] == pytest.approx(6.0, abs=0.3)
    assert _refinement_rate(apply_wide, [16, 32, 64])[-1] >= 7.8


def test_wide_sine_refinement():
    errs = []
    for n in (32, 64):
        x = np.arange(n) * 2 * np.pi / n
        errs.append(np.max(np.abs(apply_wide(np.ones(n), np.sin(x), 2 * np.pi / n) + np.sin(x))))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(8.0, abs=0.3)


def test_first_derivative():
    assert sum(k * w for k, w in enumerate(FIRST_DERIVATIVE8, 1)) * 2 == 1
    n = 16
    assert np.all(first_derivative8(np.full(n, 3.0), 0.1) == 0.0)
    # linear data with exact ghosts
    x = np.arange(-4, n + 4) * 0.25
    assert np.allclose(first_derivative8(x, 0.25)[4:-4], 1.0, atol=1e-14)
    errs = []
    for n in (32, 64):
        x = np.arange(n) * 2 * np.pi / n
        errs.append(np.max(np.abs(first_derivative8(np.sin(x), 2 * np.pi / n) - np.cos(x))))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(8.0, abs=0.1)


def test_field_too_small():
    with pytest.raises(ValueError):
        apply_narrow(build_narrow(8, SMC), np.ones(5), np.ones(5), 0.1)


# -- optimization -------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _affine_oracle(order):
    # affine coefficient terms from the symbolic expansion at unit parameters
    nparams = 2 if order == 8 else 1
    zero = (0,) * nparams
    base = np.array([float(c) for c in _sympy_truncation(order, zero)[1]])
    slopes = []
    for k in range(nparams):
        unit = tuple(int(i == k) for i in range(nparams))
        slopes.append(np.array([float(c) for c in _sympy_truncation(order, unit)[1]]) - base)
    return base, slopes


def _grid_scan(order, n):
    """Minimum of the bound over an ``n``-point (per axis) grid on [-1, 1]."""
    base, slopes = _affine_oracle(order)
    grid = np.linspace(-1, 1, n)
    if order == 6:
        terms = base[:, None] + slopes[0][:, None] * grid[None, :]
        return np.abs(terms).sum(axis=0).min()
    P, Q = np.meshgrid(grid, grid, indexing="ij")
    terms = base[:, None, None] + slopes[0][:, None, None] * P + slopes[1][:, None, None] * Q
    values = np.abs(terms).sum(axis=0)
    i, j = np.unravel_index(np.argmin(values), values.shape)
    # refine around the best grid point
    step = 2 / (n - 1)
    P, Q = np.meshgrid(np.linspace(grid[i] - step, grid[i] + step, 201), np.linspace(grid[j] - step, grid[j] + step, 201))
    terms = base[:, None, None] + slopes[0][:, None, None] * P + slopes[1][:, None, None] * Q
    return min(values.min(), np.abs(terms).sum(axis=0).min())


def test_optimize_order8_is_global_minimum():
    params = optimize_params(8)
    best = truncation_bound(8, params)
    assert best <= truncation_bound(8, SMC) + Fraction(1, 10**12)
    assert float(best) <= _grid_scan(8, 100) + 1e-12
    assert params == SMC


def test_optimize_order6_is_global_minimum():
    params = optimize_params(6)
    best = truncation_bound(6, params)
    assert best <= truncation_bound(6, NARROW6_DEFAULT) + Fraction(1, 10**12)
    assert float(best) <= _grid_scan(6, 10001) + 1e-12


def test_smc_preset_equals_optimizer():
    assert np.allclose([float(x) for x in optimize_params(8)], [float(x) for x in PRESETS["SMC"]], atol=1e-12)


def test_optimize_rejects_order():
    with pytest.raises(ValueError):
        optimize_params(4)
