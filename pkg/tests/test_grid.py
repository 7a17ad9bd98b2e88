from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hjdesign.errors import InvalidArgumentError, StencilError
from hjdesign.grid import (
    GridFunction,
    GridSpec,
    gradient,
    interpolate,
    nearest_valid_fill,
    norms,
    read_csv,
    second_difference,
    second_differences,
    write_csv,
)

coef = st.floats(-5.0, 5.0, allow_nan=False)


def test_interpolate_linear_at_half_step():
    spec = GridSpec(1, 1.0, 21)
    f = spec.sample(lambda p: p[..., 0])
    assert interpolate(f, 0.5 * spec.h) == pytest.approx(0.5 * spec.h, abs=1e-15)


def test_interpolate_constant_everywhere():
    spec = GridSpec(2, 1.0, 11)
    f = GridFunction(spec, np.full(spec.shape, 7.0))
    for x in ([0.13, -0.4], [3.0, -5.0], [0.0, 0.0]):
        assert interpolate(f, x) == pytest.approx(7.0)


def test_interpolate_square_within_h_squared():
    spec = GridSpec(1, 1.0, 101)
    f = spec.sample(lambda p: p[..., 0] ** 2)
    assert abs(interpolate(f, 0.35) - 0.1225) <= spec.h**2


def test_interpolate_exact_on_nodes():
    spec = GridSpec(2, 1.0, 9)
    rng = np.random.default_rng(0)
    f = GridFunction(spec, rng.normal(size=spec.shape))
    np.testing.assert_array_equal(interpolate(f, spec.points()), f.values)


def test_constant_extension_clamps():
    spec = GridSpec(1, 1.0, 11)
    f = spec.sample(lambda p: p[..., 0], extension="constant")
    assert interpolate(f, 3.0) == pytest.approx(1.0)
    g = spec.sample(lambda p: p[..., 0], extension="linear")
    assert interpolate(g, 3.0) == pytest.approx(3.0)


@given(a=coef, b=coef, c=coef, d=coef, x=st.floats(-1.0, 1.0), y=st.floats(-1.0, 1.0))
def test_interpolate_reproduces_multilinear(a, b, c, d, x, y):
    spec = GridSpec(2, 1.0, 7)
    f = spec.sample(lambda p: a + b * p[..., 0] + c * p[..., 1] + d * p[..., 0] * p[..., 1])
    assert interpolate(f, [x, y]) == pytest.approx(a + b * x + c * y + d * x * y, abs=1e-10)


@given(b=coef, x=st.floats(-3.0, 3.0))
def test_linear_extension_reproduces_affine(b, x):
    spec = GridSpec(1, 1.0, 7)
    f = spec.sample(lambda p: 1.0 + b * p[..., 0])
    assert interpolate(f, x) == pytest.approx(1.0 + b * x, abs=1e-10)


def test_gradient_of_linear_function():
    spec = GridSpec(2, 1.0, 21)
    f = spec.sample(lambda p: 0.5 * p[..., 0] - 2.0 * p[..., 1])
    g = gradient(f)
    np.testing.assert_allclose(g.components[0], 0.5, atol=1e-12)
    np.testing.assert_allclose(g.components[1], -2.0, atol=1e-12)
    assert not g.kink_mask[1:-1, 1:-1].any()


def test_gradient_flags_kink():
    spec = GridSpec(1, 1.0, 21)
    g = gradient(spec.sample(lambda p: np.abs(p[..., 0])))
    mid = spec.M // 2
    assert g.kink_mask[mid]
    assert g.kink_mask.sum() <= 3


def test_gradient_of_quadratic_in_interior():
    spec = GridSpec(1, 1.0, 81)
    g = gradient(spec.sample(lambda p: p[..., 0] ** 2 / 4))
    x = spec.axis()
    assert np.abs(g.components[0][1:-1] - x[1:-1] / 2).max() <= spec.h**2


def test_norms_of_constant_on_window():
    spec = GridSpec(1, 2.0, 101)
    f = GridFunction(spec, np.ones(spec.shape))
    assert norms(f, ((-1.0, 1.0),))["L1"] == pytest.approx(2.0, abs=spec.h)


def test_norms_of_zero():
    spec = GridSpec(2, 1.0, 11)
    assert norms(GridFunction(spec, np.zeros(spec.shape))) == {"sup": 0.0, "L1": 0.0, "L2": 0.0}


def test_norms_of_identity():
    spec = GridSpec(1, 1.0, 201)
    f = spec.sample(lambda p: p[..., 0])
    assert norms(f)["L2"] ** 2 == pytest.approx(2 / 3, abs=1e-3)


def test_empty_window_rejected():
    with pytest.raises(InvalidArgumentError):
        GridSpec(1, 1.0, 11).inner_window(1.5)


@given(arrays(float, 21, elements=st.floats(-10, 10)), arrays(float, 21, elements=st.floats(0, 10)))
def test_norms_monotone_under_domination(f, slack):
    spec = GridSpec(1, 1.0, 21)
    g = np.abs(f) + slack
    nf, ng = norms(f, spec=spec), norms(g, spec=spec)
    for key in ("sup", "L1", "L2"):
        assert nf[key] <= ng[key] + 1e-12


def test_second_difference_examples():
    spec = GridSpec(1, 1.0, 21)
    h = spec.h
    mid = spec.M // 2
    lin = spec.sample(lambda p: 3 * p[..., 0] + 1)
    sq = spec.sample(lambda p: p[..., 0] ** 2)
    kink = spec.sample(lambda p: np.abs(p[..., 0]))
    assert second_difference(lin, (1,), (mid,)) == pytest.approx(0.0, abs=1e-14)
    assert second_difference(sq, (1,), (mid + 3,)) == pytest.approx(2 * h**2)
    assert second_difference(kink, (1,), (mid,)) == pytest.approx(2 * h)


def test_second_difference_diagonal():
    spec = GridSpec(2, 1.0, 11)
    f = spec.sample(lambda p: p[..., 0] * p[..., 1])
    h = spec.h
    # along (1, 1): f(x+h,y+h) + f(x-h,y-h) - 2 f(x,y) = 2 h^2
    assert second_difference(f, (1, 1), (5, 5)) == pytest.approx(2 * h**2)
    assert second_difference(f, (1, -1), (5, 5)) == pytest.approx(-2 * h**2)
    assert np.isfinite(second_differences(f, (1, 0))[1:-1]).all()


def test_second_difference_off_grid():
    spec = GridSpec(1, 1.0, 11)
    with pytest.raises(StencilError):
        second_difference(spec.sample(lambda p: p[..., 0]), (1,), (0,))


def test_csv_round_trip_is_bit_exact(tmp_path):
    spec = GridSpec(2, 1.5, 9)
    rng = np.random.default_rng(3)
    f = GridFunction(spec, rng.normal(size=spec.shape) / 3, extension="constant")
    write_csv(tmp_path / "f.csv", f, time=0.125)
    g, t = read_csv(tmp_path / "f.csv")
    assert t == 0.125
    assert g.spec == spec
    assert g.extension == "constant"
    np.testing.assert_array_equal(g.values, f.values)


def test_nearest_valid_fill():
    vals = np.array([1.0, 9.0, 9.0, 4.0])
    valid = np.array([True, False, False, True])
    np.testing.assert_array_equal(nearest_valid_fill(vals, valid), [1.0, 1.0, 4.0, 4.0])


def test_grid_rejects_bad_shapes():
    with pytest.raises(InvalidArgumentError):
        GridSpec(3, 1.0, 11)
    with pytest.raises(InvalidArgumentError):
        GridFunction(GridSpec(1, 1.0, 11), np.array([np.inf] * 11))
