import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statgeo.chart import Chart, ChartError, wrap_point
from statgeo.expr import ParseError, UnknownIdentifier, parse_expression
from statgeo.fields import TensorField, fd_gradient, fd_partial

# expressions -------------------------------------------------------------------


def test_expression_vanishes_at_origin():
    assert parse_expression("x1*x1 + sin(x2)", 2)(np.array([0.0, 0.0])) == 0.0


def test_expression_hand_value():
    val = parse_expression("2*x2*exp(x2*x2)", 2)(np.array([0.0, 1.0]))
    assert val == pytest.approx(2 * math.e, rel=1e-15)


def test_expression_rejects_out_of_arity_variable():
    with pytest.raises(UnknownIdentifier):
        parse_expression("x3", 2)


@pytest.mark.parametrize("src", ["x1 +", "sin(x1", "2 ** x1", "foo(x1)", ""])
def test_expression_parse_errors(src):
    with pytest.raises(ParseError):
        parse_expression(src, 2)


def test_expression_vectorised_shape():
    e = parse_expression("x1 - x2^2", 2)
    P = np.arange(12.0).reshape(2, 3, 2)
    assert e(P).shape == (2, 3)
    assert np.allclose(e(P), P[..., 0] - P[..., 1] ** 2)


@pytest.mark.parametrize("src", ["sin(2*pi*x1) * x2", "exp(x1*x2) / (1 + x2^2)", "ln(2 + cos(x1)) - sqrt(1 + x2^2)"])
def test_symbolic_derivative_matches_differences(src):
    e = parse_expression(src, 2)
    P = np.array([[0.3, -0.7], [1.1, 0.4]])
    for i in range(2):
        h = np.zeros(2)
        h[i] = 1e-5
        fd = (e(P + h) - e(P - h)) / 2e-5
        assert np.allclose(e.diff(i)(P), fd, atol=1e-8)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_polynomial_evaluation_matches_python(a, x, y):
    e = parse_expression(f"{a!r}*x1^2 - x1*x2 + 3", 2)
    assert e(np.array([x, y])) == pytest.approx(a * x * x - x * y + 3, abs=1e-9)


# finite differences -----------------------------------------------------------

R1 = Chart.euclidean(1)


def _scalar(func, chart=R1):
    return TensorField(lambda P: func(P[..., 0]), chart, (0, 0))


def test_fd_constant_field_is_zero():
    f = TensorField(lambda P: np.full(P.shape[:-1], 4.0), R1, (0, 0))
    assert abs(float(fd_partial(f, 0, [0.7]))) < 1e-12


def test_fd_square_oracle():
    assert float(fd_partial(_scalar(lambda x: x**2), 0, [3.0], h=1e-4)) == pytest.approx(6.0, abs=1e-6)


def test_fd_sine_oracle():
    assert float(fd_partial(_scalar(np.sin), 0, [0.0])) == pytest.approx(1.0, abs=1e-8)


@given(st.floats(-2, 2), st.integers(2, 6).filter(lambda k: k % 2 == 0))
def test_fd_exact_on_low_degree_polynomials(x, order):
    # a central stencil of order k differentiates polynomials of degree <= k exactly
    f = lambda P: P[..., 0] ** 2 - 3 * P[..., 0]
    d = fd_gradient(f, np.array([[x]]), h=1e-2, order=order)
    assert float(d[0, 0]) == pytest.approx(2 * x - 3, abs=1e-9)


def test_fd_halving_step_quarters_error():
    f = lambda P: np.exp(P[..., 0])
    errs = [abs(float(fd_gradient(f, np.array([[0.5]]), h=h, order=2)[0, 0]) - math.exp(0.5)) for h in (0.1, 0.05)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)


# charts --------------------------------------------------------------------------

T2 = Chart.torus(2)
R2 = Chart.euclidean(2)


def test_wrap_torus():
    assert np.allclose(wrap_point(T2, [2.25, -0.5]), [0.25, 0.5])


def test_wrap_identity_without_periods():
    assert np.array_equal(wrap_point(R2, [5.0, 7.0]), [5.0, 7.0])


def test_wrap_boundary_goes_to_origin():
    assert np.allclose(wrap_point(T2, [1.0, 1.0]), [0.0, 0.0])


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_wrap_idempotent_and_in_box(x, y):
    w = wrap_point(T2, [x, y])
    assert np.all((w >= 0) & (w < 1))
    assert np.array_equal(wrap_point(T2, w), w)
    assert np.allclose(np.round(np.array([x, y]) - w), np.array([x, y]) - w, atol=1e-9)


def test_chart_rejects_bad_period():
    with pytest.raises(ChartError):
        Chart(1, ((0.0, 2.0),), (1.0,))


def test_sampling_is_seeded_and_inside():
    c = Chart(2, ((-1.0, 1.0), (0.0, 3.0)))
    from statgeo.chart import make_rng
    a = c.sample(make_rng(7), 100)
    b = c.sample(make_rng(7), 100)
    assert np.array_equal(a, b)
    assert np.all(c.contains(a))
