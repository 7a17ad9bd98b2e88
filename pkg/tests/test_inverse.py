from __future__ import annotations

import numpy as np
import pytest

from hjdesign.errors import HypothesisError, InvalidArgumentError
from hjdesign.fixtures import fixture
from hjdesign.grid import GridFunction, GridSpec, norms, second_differences
from hjdesign.hamiltonian import (
    CosinePotential,
    QuadraticHamiltonian,
    ShiftedQuadraticHamiltonian,
)
from hjdesign.inverse import (
    DescentParams,
    descend,
    design_window,
    directional_derivative,
    evaluate_J,
    gradient_measure,
    mollify_gradient,
    regularize,
)
from hjdesign.reachability import constraint_bounds
from hjdesign.solvers import eps_scheme, forward_solve
from hjdesign.transport import DiscreteMeasure

LAPLACE1 = QuadraticHamiltonian(2.0 * np.eye(1))
SPEC = GridSpec(1, 2.0, 257)
T = 0.5

# J along the first five accepted steps on the two-bump target at M=257, recorded
# from a verified build; both kernel backends reproduce it to the last digit
TWO_BUMP_J = [0.068190304392657, 0.023251634089618743, 0.01861532679756335,
              0.01858088580706332, 0.01856891777277022, 0.018562323633580922]


def test_J_vanishes_on_forward_image():
    u0 = fixture("gaussian-bump", SPEC)
    uT = forward_solve(u0, T, LAPLACE1).final
    assert evaluate_J(u0, uT, T, LAPLACE1) <= eps_scheme(SPEC) ** 2


def test_J_of_zero_pair():
    zero = fixture("zero", SPEC)
    assert evaluate_J(zero, zero, T, LAPLACE1) == 0.0


def test_J_of_cone_against_zero():
    # a zero target has no propagation margin: the window is the whole box
    # int_{-1}^{1} (x^2/2)^2 + 2 int_1^2 (x - 1/2)^2 = 1/10 + 13/6
    J = evaluate_J(fixture("abs-kink", SPEC), fixture("zero", SPEC), T, LAPLACE1)
    assert J == pytest.approx(0.1 + 13 / 6, abs=SPEC.h**2)


def test_inverse_design_rejects_positive_potential():
    model = ShiftedQuadraticHamiltonian(1, CosinePotential(), L=2.0)
    with pytest.raises(HypothesisError):
        evaluate_J(fixture("zero", SPEC), fixture("zero", SPEC), T, model)


def test_gradient_vanishes_at_a_design():
    u0 = fixture("gaussian-bump", SPEC)
    uT = forward_solve(u0, T, LAPLACE1).final
    mu = gradient_measure(u0, uT, T, LAPLACE1)
    assert mu.total_variation <= 1e-12


def test_gradient_at_zero_is_the_residual_density():
    uT = fixture("gaussian-bump", SPEC)
    zero = fixture("zero", SPEC)
    mu = gradient_measure(zero, uT, T, LAPLACE1)
    assert mu.n_atoms == 0
    win = design_window(uT, T, LAPLACE1)
    assert mu.total_mass == pytest.approx(-2 * norms(uT, win)["L1"], rel=1e-12)


def test_gradient_atom_on_the_cone():
    u0 = fixture("abs-kink", SPEC)
    uT = fixture("zero", SPEC)
    mu = gradient_measure(u0, uT, T, LAPLACE1)
    # the fan [-2T, 2T] collapses onto the origin carrying 2 int (u(T) - uT); the
    # nodes at +-2T land on the origin too, so the oracle is the nodal sum
    x = SPEC.axis()
    fan = np.abs(x) <= 2 * T + 1e-12
    expected = 2 * SPEC.h * np.sum(x[fan] ** 2 / (4 * T))
    heaviest = int(np.argmax(np.abs(mu.atom_masses)))
    assert abs(mu.atom_positions[heaviest, 0]) <= 2 * SPEC.h
    assert mu.atom_masses[heaviest] == pytest.approx(expected, rel=2e-2)


def test_directional_derivative_trivial_cases():
    u0 = fixture("abs-kink", SPEC)
    uT = fixture("two-bump", SPEC)
    assert directional_derivative(u0, uT, T, fixture("zero", SPEC), LAPLACE1) == (0.0, 0.0)
    image = forward_solve(u0, T, LAPLACE1).final
    primal, dual = directional_derivative(u0, image, T, fixture("gaussian-bump", SPEC), LAPLACE1)
    assert abs(primal) <= 1e-12 and abs(dual) <= 1e-12


def test_directional_derivative_at_zero():
    uT = fixture("two-bump", SPEC)
    w = SPEC.sample(lambda p: np.cos(p[..., 0]))
    primal, dual = directional_derivative(fixture("zero", SPEC), uT, T, w, LAPLACE1)
    win = design_window(uT, T, LAPLACE1)
    expected = -2 * norms(uT.values * w.values, win, spec=SPEC)["L1"]  # integrand is nonnegative
    assert primal == pytest.approx(expected, rel=1e-12)
    assert dual == pytest.approx(expected, rel=1e-12)


def test_mollify_zero_measure():
    empty = DiscreteMeasure(1, np.zeros((0, 1)), np.zeros(0))
    np.testing.assert_array_equal(mollify_gradient(empty, 4 * SPEC.h, SPEC).values, 0.0)


def test_mollify_rejects_narrow_kernel():
    empty = DiscreteMeasure(1, np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(InvalidArgumentError):
        mollify_gradient(empty, 0.5 * SPEC.h, SPEC)


def test_mollified_gradient_is_a_descent_direction():
    u0 = fixture("abs-kink", SPEC)
    uT = fixture("two-bump", SPEC)
    mu = gradient_measure(u0, uT, T, LAPLACE1)
    v = mollify_gradient(mu, 4 * SPEC.h, SPEC)
    assert v.values.sum() * SPEC.h == pytest.approx(mu.total_mass, rel=1e-10)
    primal, dual = directional_derivative(u0, uT, T, v, LAPLACE1)
    assert primal > 0 and dual > 0


def test_descent_from_zero_target():
    zero = fixture("zero", SPEC)
    state = descend(zero, T, LAPLACE1)
    assert state.iterations == 0
    assert state.J_history == [0.0]
    np.testing.assert_array_equal(state.iterate.values, 0.0)


def test_descent_regression_two_bump():
    state = descend(fixture("two-bump", SPEC), T, LAPLACE1, DescentParams(max_iter=5))
    assert state.iterations == 5
    np.testing.assert_allclose(state.J_history, TWO_BUMP_J, rtol=1e-9)
    assert all(b < a for a, b in zip(state.J_history, state.J_history[1:]))


def test_descent_log(tmp_path):
    state = descend(fixture("two-bump", SPEC), T, LAPLACE1, DescentParams(max_iter=2), snapshot_every=1)
    state.write_log(tmp_path / "log.jsonl")
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert [k for k, _ in state.snapshots] == [1, 2]


def test_regularize_constant():
    c = GridFunction(SPEC, np.full(SPEC.shape, 2.5))
    np.testing.assert_allclose(regularize(c, T, LAPLACE1).values, 2.5, atol=1e-12)


def test_regularize_keeps_the_forward_image():
    uT = fixture("two-bump", SPEC)
    spiky = descend(uT, T, LAPLACE1, DescentParams(max_iter=5)).iterate
    reg = regularize(spiky, T, LAPLACE1)
    win = design_window(uT, T, LAPLACE1)
    J_spiky = evaluate_J(spiky, uT, T, LAPLACE1, window=win)
    J_reg = evaluate_J(reg, uT, T, LAPLACE1, window=win)
    assert J_reg == pytest.approx(J_spiky, abs=eps_scheme(SPEC) ** 2 + 1e-3 * J_spiky)
    # semiconvex with the constant dual to the reachability bound
    bound = constraint_bounds(SPEC, T, LAPLACE1.A)[0]
    d2 = second_differences(reg, (1,))[1:-1]
    assert d2.min() >= -bound - 1e-12
