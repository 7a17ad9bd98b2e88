from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjdesign.errors import ConfigurationError, SchemeMismatchError
from hjdesign.fixtures import fixture, random_lipschitz
from hjdesign.grid import GridFunction, GridSpec, norms
from hjdesign.hamiltonian import (
    CosinePotential,
    QuadraticHamiltonian,
    ShiftedQuadraticHamiltonian,
)
from hjdesign.solvers import (
    backward_solve,
    calibrate_epsilon,
    forward_solve,
    inner_window,
    scheme_step,
    semiconcave_envelope,
    semigroup_defect,
)

LAPLACE1 = QuadraticHamiltonian(2.0 * np.eye(1))  # H(p) = |p|^2
LAPLACE2 = QuadraticHamiltonian(2.0 * np.eye(2))
SPEC1 = GridSpec(1, 2.0, 257)
seeds = st.integers(0, 2**31 - 1)


def cone(x, t):
    """Forward solution for ``u0 = |x|`` and ``H = |p|^2``."""
    ax = np.abs(x)
    return np.where(ax <= 2 * t, x**2 / (4 * t), ax - t)


def window(spec, model, t, lip=1.0):
    return inner_window(spec, model, t, lip)


def test_hopf_lax_matches_cone():
    spec = GridSpec(1, 2.0, 1025)
    u = forward_solve(fixture("abs-kink", spec), 0.5, LAPLACE1).final
    err = norms(u.values - cone(spec.axis(), 0.5), window(spec, LAPLACE1, 0.5), spec=spec)["sup"]
    assert err <= 2 * spec.h


@pytest.mark.parametrize("scheme", ["semi_lagrangian", "lax_friedrichs"])
def test_time_marching_matches_cone(scheme):
    u0 = fixture("abs-kink", SPEC1)
    res = forward_solve(u0, 0.5, LAPLACE1, scheme)
    err = norms(res.final.values - cone(SPEC1.axis(), 0.5), window(SPEC1, LAPLACE1, 0.5), spec=SPEC1)["sup"]
    assert err <= 10 * (SPEC1.h + res.dt)


def test_linear_datum_is_translated():
    spec = GridSpec(2, 2.0, 33)
    b = np.array([0.5, -0.25])
    u = forward_solve(fixture("linear", spec), 0.5, LAPLACE2).final
    exact = spec.points() @ b - 0.5 * b @ b
    assert norms(u.values - exact, window(spec, LAPLACE2, 0.5, 0.6), spec=spec)["sup"] <= 1e-12


def test_backward_of_constant():
    spec = GridSpec(1, 2.0, 65)
    u = backward_solve(GridFunction(spec, np.full(spec.shape, 3.0)), 0.5, LAPLACE1).final
    np.testing.assert_allclose(u.values, 3.0, atol=1e-12)


def test_backward_of_negative_cone():
    u = backward_solve(fixture("neg-abs", SPEC1), 0.5, LAPLACE1).final
    err = norms(u.values + cone(SPEC1.axis(), 0.5), window(SPEC1, LAPLACE1, 0.5), spec=SPEC1)["sup"]
    assert err <= 2 * SPEC1.h


def test_backward_of_linear():
    b = 0.5
    u = backward_solve(fixture("linear", SPEC1), 0.5, LAPLACE1).final
    exact = b * SPEC1.axis() + 0.5 * b**2
    assert norms(u.values - exact, window(SPEC1, LAPLACE1, 0.5, b), spec=SPEC1)["sup"] <= 1e-12


def test_envelope_lifts_kink():
    T = 0.5
    env = semiconcave_envelope(fixture("abs-kink", SPEC1), T, LAPLACE1)
    # S^-|x| = |x| + T, so the envelope is the cone solution shifted up by T
    exact = cone(SPEC1.axis(), T) + T
    mid = SPEC1.M // 2
    assert env.values[mid] > 0
    assert env.values[mid] == pytest.approx(T, abs=2 * SPEC1.h)
    win = window(SPEC1, LAPLACE1, 2 * T)
    assert norms(env.values - exact, win, spec=SPEC1)["sup"] <= 2 * SPEC1.h


def test_envelope_of_zero():
    env = semiconcave_envelope(fixture("zero", SPEC1), 0.5, LAPLACE1)
    np.testing.assert_allclose(env.values, 0.0, atol=1e-14)


def test_semigroup_exact_on_linear():
    assert semigroup_defect(fixture("linear", SPEC1), 0.5, LAPLACE1) <= 1e-10


def test_semigroup_on_cone():
    assert semigroup_defect(fixture("abs-kink", SPEC1), 0.5, LAPLACE1) <= 2 * SPEC1.h


def test_cross_scheme_agreement():
    u0 = fixture("gaussian-bump", SPEC1)
    hl = forward_solve(u0, 0.5, LAPLACE1, "hopf_lax").final
    sl = forward_solve(u0, 0.5, LAPLACE1, "semi_lagrangian").final
    tol = calibrate_epsilon(SPEC1, "semi_lagrangian").eps
    assert norms(hl.values - sl.values, window(SPEC1, LAPLACE1, 0.5, 2.0), spec=SPEC1)["sup"] <= tol


def test_schedule_slices():
    res = forward_solve(fixture("abs-kink", SPEC1), 0.5, LAPLACE1, schedule=[0.1, 0.25, 0.5])
    np.testing.assert_allclose(res.times, [0.0, 0.1, 0.25, 0.5])
    np.testing.assert_array_equal(res.slices[0].values, fixture("abs-kink", SPEC1).values)
    for t, f in zip(res.times[1:], res.slices[1:]):
        err = norms(f.values - cone(SPEC1.axis(), t), window(SPEC1, LAPLACE1, t), spec=SPEC1)["sup"]
        assert err <= 2 * SPEC1.h


def test_scheme_validation():
    with pytest.raises(ConfigurationError):
        forward_solve(fixture("zero", SPEC1), 0.5, LAPLACE1, "upwind")
    shifted = ShiftedQuadraticHamiltonian(1, CosinePotential(), L=2.0)
    with pytest.raises(SchemeMismatchError):
        forward_solve(fixture("zero", SPEC1), 0.5, shifted, "hopf_lax")


def test_eps_scheme_below_limit():
    spec = GridSpec(1, 2.0, 1025)
    tol = calibrate_epsilon(spec, "hopf_lax")
    assert tol.eps < 5e-3
    assert tol.eps == pytest.approx(tol.C * (tol.h + tol.dt))
    assert scheme_step(spec, "hopf_lax") == 0.0


@given(s0=seeds, s1=seeds)
def test_forward_is_a_contraction(s0, s1):
    spec = GridSpec(1, 2.0, 129)
    u0 = random_lipschitz(spec, np.random.default_rng(s0))
    u1 = random_lipschitz(spec, np.random.default_rng(s1))
    d_out = (forward_solve(u0, 0.5, LAPLACE1).final.values - forward_solve(u1, 0.5, LAPLACE1).final.values)
    assert np.abs(d_out).max() <= np.abs(u0.values - u1.values).max() + 1e-12


@given(seed=seeds, shift=st.floats(0.0, 1.0))
def test_forward_is_monotone(seed, shift):
    spec = GridSpec(1, 2.0, 129)
    u0 = random_lipschitz(spec, np.random.default_rng(seed))
    bump = fixture("gaussian-bump", spec).values * shift
    lo = forward_solve(u0, 0.5, LAPLACE1).final.values
    hi = forward_solve(u0.with_values(u0.values + bump), 0.5, LAPLACE1).final.values
    assert (hi >= lo - 1e-12).all()


@given(seed=seeds, c=st.floats(-5.0, 5.0))
def test_forward_commutes_with_constants(seed, c):
    spec = GridSpec(1, 2.0, 129)
    u0 = random_lipschitz(spec, np.random.default_rng(seed))
    a = forward_solve(u0, 0.5, LAPLACE1).final.values
    b = forward_solve(u0.with_values(u0.values + c), 0.5, LAPLACE1).final.values
    np.testing.assert_allclose(b, a + c, atol=1e-10)


@given(seed=seeds)
def test_forward_backward_forward_is_stable(seed):
    spec = GridSpec(1, 4.0, 257)
    u0 = random_lipschitz(spec, np.random.default_rng(seed))
    once = forward_solve(u0, 0.5, LAPLACE1).final
    again = forward_solve(backward_solve(once, 0.5, LAPLACE1).final, 0.5, LAPLACE1).final
    win = window(spec, LAPLACE1, 1.5)
    assert norms(again.values - once.values, win, spec=spec)["sup"] <= calibrate_epsilon(spec).eps
