from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjdesign.checks import indicator
from hjdesign.fixtures import fixture, random_lipschitz
from hjdesign.grid import GridFunction, GridSpec, VectorField, interpolate, window_mask
from hjdesign.hamiltonian import QuadraticHamiltonian
from hjdesign.solvers import inner_window
from hjdesign.transport import (
    DiscreteMeasure,
    backward_reversible,
    duality_pairing,
    extend_measure_at_zero,
    forward_duality_solution,
    oslc_estimate,
    transport_coefficient,
)

LAPLACE1 = QuadraticHamiltonian(2.0 * np.eye(1))
SPEC = GridSpec(1, 2.0, 257)
TAU = 0.25
SCHEDULE = (0.0625, 0.125, 0.1875, 0.25)


def interior(t):
    return window_mask(SPEC, inner_window(SPEC, LAPLACE1, t, 1.0))


def test_coefficient_of_zero_datum():
    a = transport_coefficient(fixture("zero", SPEC), 0.5, LAPLACE1)
    np.testing.assert_array_equal(a.components, 0.0)


def test_coefficient_on_the_cone():
    t = 0.5
    a = transport_coefficient(fixture("abs-kink", SPEC), t, LAPLACE1).components[0]
    x = SPEC.axis()
    h = SPEC.h
    fan = np.abs(x) < 2 * t - h
    out = (np.abs(x) > 2 * t + h) & interior(t)
    np.testing.assert_allclose(a[fan], x[fan] / t, atol=1e-10)
    np.testing.assert_allclose(a[out], 2 * np.sign(x[out]), atol=1e-10)


def test_coefficient_of_negative_cone():
    a = transport_coefficient(fixture("neg-abs", SPEC), 0.5, LAPLACE1).components[0]
    x = SPEC.axis()
    # one extra cell so the gradient stencil stays where the search is exact
    keep = (np.abs(x) > 2 * SPEC.h) & interior(0.5 + SPEC.h)
    np.testing.assert_allclose(a[keep], -2 * np.sign(x[keep]), atol=1e-10)


def test_oslc_decreasing_coefficient():
    a = VectorField(SPEC, -2 * np.sign(SPEC.axis())[None])
    rep = oslc_estimate(a, 0.5, LAPLACE1)
    assert rep.estimate <= 0
    assert rep.passes


def test_oslc_constant_coefficient():
    a = VectorField(SPEC, np.full((1, SPEC.M), 1.5))
    assert oslc_estimate(a, 0.5, LAPLACE1).estimate == pytest.approx(0.0, abs=1e-12)


@given(seed=st.integers(0, 2**31 - 1), t=st.sampled_from([0.1, 0.25, 0.5]))
def test_oslc_bound_holds(seed, t):
    u0 = random_lipschitz(SPEC, np.random.default_rng(seed))
    a = transport_coefficient(u0, t, LAPLACE1)
    assert oslc_estimate(a, t, LAPLACE1, C=1.0).passes


def test_duality_solution_of_constant():
    w = GridFunction(SPEC, np.ones(SPEC.shape))
    v = forward_duality_solution(fixture("abs-kink", SPEC), w, SCHEDULE, LAPLACE1)
    for f in v.slices:
        np.testing.assert_allclose(f.values, 1.0, atol=1e-12)


def test_duality_solution_on_the_fan():
    w = SPEC.sample(lambda p: np.cos(2 * p[..., 0]))
    v = forward_duality_solution(fixture("abs-kink", SPEC), w, SCHEDULE, LAPLACE1)
    x = SPEC.axis()
    for t in SCHEDULE:
        fan = np.abs(x) < 2 * t - 2 * SPEC.h
        np.testing.assert_allclose(v.at(t).values[fan], 1.0, atol=4 * SPEC.h)


def test_duality_solution_translates():
    w = SPEC.sample(lambda p: np.cos(2 * p[..., 0]))
    v = forward_duality_solution(fixture("linear", SPEC), w, SCHEDULE, LAPLACE1)
    x = SPEC.axis()
    for t in SCHEDULE:
        keep = interior(t)
        np.testing.assert_allclose(v.at(t).values[keep], interpolate(w, x[keep] - 2 * t * 0.5), atol=1e-8)


def test_reversible_static_for_zero_datum():
    piT = fixture("gaussian-bump", SPEC)
    for mu in backward_reversible(fixture("zero", SPEC), TAU, piT, SCHEDULE, LAPLACE1):
        np.testing.assert_allclose(mu.positions[:, 0], SPEC.axis()[piT.values.ravel() != 0], atol=1e-14)
        np.testing.assert_allclose(mu.deposit(SPEC).values, piT.values, atol=1e-12)


def test_reversible_fan_contracts():
    piT = indicator(SPEC, 1.0)
    measures = backward_reversible(fixture("abs-kink", SPEC), TAU, piT, (0.25, 0.125, 0.01), LAPLACE1)
    start = np.abs(measures[0].positions[:, 0]) < 2 * TAU - SPEC.h
    spread = [np.abs(mu.positions[start, 0]).max() for mu in measures]
    assert spread[0] > spread[1] > spread[2]
    assert spread[2] <= 0.05 * spread[0] + SPEC.h


@given(seed=st.integers(0, 2**31 - 1))
def test_reversible_conserves_mass(seed):
    rng = np.random.default_rng(seed)
    u0 = random_lipschitz(SPEC, rng)
    piT = SPEC.sample(lambda p: 1.0 + 0.5 * np.sin(3 * p[..., 0]))
    total = float(piT.values.sum() * SPEC.h)
    for mu in backward_reversible(u0, TAU, piT, SCHEDULE, LAPLACE1):
        assert mu.total_mass == pytest.approx(total, rel=1e-12)


def test_extension_without_atoms():
    piT = fixture("gaussian-bump", SPEC)
    mu = extend_measure_at_zero(fixture("zero", SPEC), TAU, piT, LAPLACE1)
    assert mu.n_atoms == 0
    np.testing.assert_allclose(mu.deposit(SPEC).values, piT.values, atol=1e-12)


def test_extension_forms_an_atom():
    b = 1.0
    mu = extend_measure_at_zero(fixture("abs-kink", SPEC), TAU, indicator(SPEC, b), LAPLACE1)
    assert mu.n_atoms == 1
    assert abs(mu.atom_positions[0, 0]) <= 2 * SPEC.h
    # the fan (-2 tau, 2 tau) carries mass 4 tau
    assert mu.atom_masses[0] == pytest.approx(4 * TAU, rel=2e-2)
    assert mu.total_mass == pytest.approx(2 * b, abs=2 * SPEC.h)


def test_extension_of_zero_measure():
    mu = extend_measure_at_zero(fixture("abs-kink", SPEC), TAU, fixture("zero", SPEC), LAPLACE1)
    assert mu.total_variation == 0.0
    assert mu.n_atoms == 0


def test_extension_is_the_limit_of_the_reversible_solution():
    piT = indicator(SPEC, 1.0)
    u0 = fixture("abs-kink", SPEC)
    mu0 = extend_measure_at_zero(u0, TAU, piT, LAPLACE1)
    test = SPEC.sample(lambda p: np.cos(p[..., 0]))
    gaps = [abs(mu.pair(test) - mu0.pair(test))
            for mu in backward_reversible(u0, TAU, piT, (0.2, 0.1, 0.05, 0.01), LAPLACE1)]
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-2


def test_pairing_with_constant_is_mass():
    piT = indicator(SPEC, 1.0)
    u0 = fixture("abs-kink", SPEC)
    v = forward_duality_solution(u0, GridFunction(SPEC, np.ones(SPEC.shape)), SCHEDULE, LAPLACE1)
    rep = duality_pairing(v, backward_reversible(u0, TAU, piT, SCHEDULE, LAPLACE1), SCHEDULE)
    np.testing.assert_allclose(rep.series, piT.values.sum() * SPEC.h, rtol=1e-12)
    assert rep.drift <= 1e-12


def test_pairing_drift_on_the_cone():
    piT = indicator(SPEC, 1.0)
    u0 = fixture("abs-kink", SPEC)
    w = SPEC.sample(lambda p: np.cos(2 * p[..., 0]) + 0.5 * p[..., 0])
    v = forward_duality_solution(u0, w, SCHEDULE, LAPLACE1)
    rep = duality_pairing(v, backward_reversible(u0, TAU, piT, SCHEDULE, LAPLACE1), SCHEDULE)
    assert rep.drift <= 1e-2


def test_pairing_of_zero_measure():
    u0 = fixture("abs-kink", SPEC)
    v = forward_duality_solution(u0, fixture("gaussian-bump", SPEC), SCHEDULE, LAPLACE1)
    rep = duality_pairing(v, backward_reversible(u0, TAU, fixture("zero", SPEC), SCHEDULE, LAPLACE1), SCHEDULE)
    np.testing.assert_array_equal(rep.series, 0.0)


def test_measure_csv_round_trip(tmp_path):
    mu = DiscreteMeasure(2, np.array([[0.1, -0.2], [0.3, 0.4]]), np.array([0.5, -1.0 / 3]),
                         np.array([[0.0, 0.0]]), np.array([2.0 / 7]))
    mu.to_csv(tmp_path / "mu.csv")
    nu = DiscreteMeasure.from_csv(tmp_path / "mu.csv")
    np.testing.assert_array_equal(nu.positions, mu.positions)
    np.testing.assert_array_equal(nu.weights, mu.weights)
    np.testing.assert_array_equal(nu.atom_positions, mu.atom_positions)
    np.testing.assert_array_equal(nu.atom_masses, mu.atom_masses)


@given(st.lists(st.tuples(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9), st.floats(-2, 2)), min_size=1, max_size=30))
def test_deposit_conserves_mass(parts):
    spec = GridSpec(2, 2.0, 17)
    arr = np.array(parts)
    mu = DiscreteMeasure(2, arr[:, :2], arr[:, 2])
    assert mu.deposit(spec).values.sum() * spec.cell_volume == pytest.approx(mu.total_mass, abs=1e-12)
