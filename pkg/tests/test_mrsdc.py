import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowsdc.mrsdc import (
    SplitRHS,
    integrate_multirate,
    mrsdc_step_mode1,
    mrsdc_step_mode2,
    multirate_collocation_oracle,
)
from narrowsdc.pde import make_prothero_robinson, make_split_linear
from narrowsdc.quadrature import TypeA, TypeB, TypeC, build_hierarchy, clenshaw_curtis, gauss_lobatto
from narrowsdc.sdc import IntegrationError, StepControls, sdc_step
from narrowsdc.stiff import StiffOptions

FIXED = lambda K: StepControls(K, None)
GL3 = gauss_lobatto(3)

HIERARCHIES = {
    "A(CC5->CC9)": build_hierarchy(clenshaw_curtis(5), TypeA(clenshaw_curtis(9))),
    "B(GL9)": build_hierarchy(GL3, TypeB(gauss_lobatto(9))),
    "B(GL5)": build_hierarchy(GL3, TypeB(gauss_lobatto(5))),
    "C(GL3x2)": build_hierarchy(GL3, TypeC(gauss_lobatto(3), 2)),
    "C(GL5x2)": build_hierarchy(GL3, TypeC(gauss_lobatto(5), 2)),
}

STIFF = StiffOptions(rtol=1e-12, atol=1e-14, jacobian="user", method="bdf")


def _zero(u, t):
    return np.zeros_like(u)


def test_zero_coarse_term_is_single_rate_on_fine_nodes():
    h = HIERARCHIES["C(GL3x2)"]
    rhs = SplitRHS(_zero, lambda u, t: -3.0 * u + math.sin(t))
    u_mr, _ = mrsdc_step_mode1(rhs, np.array([1.0]), 0.2, 0.3, h, FIXED(5))
    u_sr, _ = sdc_step(rhs.f2, np.array([1.0]), 0.2, 0.3, h.fine, FIXED(5))
    assert np.allclose(u_mr, u_sr, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("n", [3, 5])
def test_zero_fine_term_is_single_rate_on_coarse_nodes(n):
    coarse = gauss_lobatto(n)
    h = build_hierarchy(coarse, TypeB(coarse))
    rhs = SplitRHS(lambda u, t: -2.0 * u + math.cos(t), _zero)
    u_mr, _ = mrsdc_step_mode1(rhs, np.array([0.7]), 0.0, 0.5, h, FIXED(4))
    u_sr, _ = sdc_step(rhs.f1, np.array([0.7]), 0.0, 0.5, coarse, FIXED(4))
    assert np.allclose(u_mr, u_sr, rtol=1e-14, atol=1e-15)


def test_evaluation_counts():
    h = HIERARCHIES["B(GL5)"]
    rhs = make_split_linear(-1.0, -10.0)
    _, diag = mrsdc_step_mode1(rhs, np.array([1.0]), 0.0, 0.1, h, FIXED(4), f1_0=np.array([-1.0]), f2_0=np.array([-10.0]))
    assert (diag.coarse_evaluations, diag.fine_evaluations) == (8, 32)
    _, diag = mrsdc_step_mode1(rhs, np.array([1.0]), 0.0, 0.1, h, FIXED(4))
    assert (diag.coarse_evaluations, diag.fine_evaluations) == (9, 33)


def test_evaluation_counts_are_real_calls():
    h = HIERARCHIES["C(GL5x2)"]
    calls = {"f1": 0, "f2": 0}

    def f1(u, t):
        calls["f1"] += 1
        return -u

    def f2(u, t):
        calls["f2"] += 1
        return -10 * u

    res = integrate_multirate(SplitRHS(f1, f2), np.array([1.0]), 0.0, 1.0, 0.25, h, FIXED(4))
    assert res.coarse_evaluations == calls["f1"] == 1 + 4 * 4 * h.M1
    assert res.fine_evaluations == calls["f2"] == 1 + 4 * 4 * h.M2


def _errors(h, steps, K=4):
    rhs = make_split_linear(-1.0, -10.0)
    out = []
    for n in steps:
        res = integrate_multirate(rhs, np.array([1.0]), 0.0, 1.0, 1.0 / n, h, FIXED(K))
        out.append(abs(res.u[0] - rhs.exact(1.0, np.array([1.0]))[0]))
    return np.array(out)


@pytest.mark.parametrize("name", list(HIERARCHIES))
def test_mode1_fourth_order(name):
    # the CC5 coarse error changes sign near 16 steps, so measure beyond it
    errs = _errors(HIERARCHIES[name], [32, 64, 128])
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(np.abs(rates - 4.0) <= 0.3), rates


def test_gl9_and_gl5x2_agree():
    a = HIERARCHIES["B(GL9)"]
    b = HIERARCHIES["C(GL5x2)"]
    assert np.allclose(a.fine.nodes[a.coarse_index], b.fine.nodes[b.coarse_index])
    for n in (8, 16, 32, 64):
        assert abs(_errors(a, [n])[0] - _errors(b, [n])[0]) <= 1e-10


@given(st.floats(-4, 0), st.floats(-20, 0), st.floats(0.02, 0.3), st.sampled_from(list(HIERARCHIES)))
@settings(max_examples=25, deadline=None)
def test_mode1_fixed_point_matches_oracle(l1, l2, dt, name):
    h = HIERARCHIES[name]
    rhs = make_split_linear(l1, l2)
    state, _ = mrsdc_step_mode1(rhs, np.array([1.0]), 0.0, dt, h, StepControls(200, None, True, 1e-15), return_state=True)
    U = multirate_collocation_oracle(l1, l2, np.array([1.0]), 0.0, dt, h)
    assert np.max(np.abs(state.U - U)) <= 1e-10 * np.max(np.abs(U))


def test_mode1_rejects_implicit():
    with pytest.raises(ValueError):
        mrsdc_step_mode1(make_prothero_robinson(), np.array([1.0]), 0.0, 0.1, HIERARCHIES["B(GL5)"])
    with pytest.raises(ValueError):
        mrsdc_step_mode2(make_split_linear(-1, -1), np.array([1.0]), 0.0, 0.1, HIERARCHIES["B(GL5)"])


def test_mode2_zero_stiff_term_matches_mode1():
    h = HIERARCHIES["C(GL3x2)"]
    f2 = lambda u, t: -3.0 * u + math.sin(t)
    jac = lambda u, t: np.zeros((np.size(u), np.size(u)))
    implicit = SplitRHS(_zero, f2, "implicit", jac1=jac)
    explicit = SplitRHS(_zero, f2)
    u2, _ = mrsdc_step_mode2(implicit, np.array([1.0]), 0.0, 0.3, h, FIXED(4), STIFF)
    u1, _ = mrsdc_step_mode1(explicit, np.array([1.0]), 0.0, 0.3, h, FIXED(4))
    assert np.allclose(u2, u1, rtol=1e-12, atol=1e-14)


def test_mode2_stable_far_beyond_explicit_limit():
    rhs = make_prothero_robinson(1e4)
    h = build_hierarchy(GL3, TypeB(GL3))
    explicit_limit = 2.0 / 1e4
    dt = 0.1
    assert dt >= 100 * explicit_limit
    res = integrate_multirate(rhs, np.array([1.0]), 0.0, 1.0, dt, h, FIXED(4), STIFF)
    assert abs(res.u[0] - math.cos(1.0)) <= 1e-4


def test_mode2_converges_to_multirate_collocation():
    lam = 1e4
    rhs = make_prothero_robinson(lam)
    h = build_hierarchy(GL3, TypeB(GL3))
    dt = 0.1
    state, diag = mrsdc_step_mode2(
        rhs, np.array([1.0]), 0.0, dt, h, StepControls(60, None, True, 1e-12), STIFF, return_state=True
    )
    assert diag.residuals[-1] <= 1e-9
    U = multirate_collocation_oracle(
        -lam, 0.0, np.array([1.0]), 0.0, dt, h, b1=lambda t: lam * math.cos(t), b2=lambda t: -math.sin(t)
    )
    assert np.max(np.abs(state.U - U)) <= 1e-9


def test_mode2_chemistry_shaped_configuration():
    # coarse GL(5) for the stiff term, fine GL(3) twice per coarse interval
    h = build_hierarchy(gauss_lobatto(5), TypeC(gauss_lobatto(3), 2))
    assert h.M1 == 4 and h.M2 == 16
    rhs = make_prothero_robinson(1e3)
    u, diag = mrsdc_step_mode2(rhs, np.array([1.0]), 0.0, 0.05, h, FIXED(4), STIFF)
    assert diag.iterations == 4
    assert abs(u[0] - math.cos(0.05)) <= 1e-4


def test_mode2_stiff_failure_reported():
    def f1(u, t):
        return np.full_like(u, np.nan)

    rhs = SplitRHS(f1, _zero, "implicit")
    with pytest.raises(IntegrationError):
        mrsdc_step_mode2(rhs, np.array([1.0]), 0.0, 0.1, HIERARCHIES["B(GL5)"], FIXED(2), StiffOptions())
