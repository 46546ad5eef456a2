import math

import numpy as np
import pytest

from mbclip.problems import (
    Problem,
    finite_diff_grad,
    linear_spectrum,
    load_delimited,
    logistic_problem,
    make_logistic_data,
    quadratic_problem,
)


@pytest.fixture(scope="module")
def quad():
    return quadratic_problem(linear_spectrum(16, 0.1, 1.0))


@pytest.fixture(scope="module")
def logit():
    X, y = make_logistic_data(200, 6, seed=3)
    return logistic_problem(X, y, l2_reg=0.01)


class TestQuadratic:
    def test_hand_values(self):
        p = quadratic_problem([1.0])
        assert p.loss(np.array([2.0])) == 2.0
        np.testing.assert_array_equal(p.grad(np.array([2.0])), [2.0])
        assert p.smoothness_L == 1.0
        assert p.optimum_L_star == 0.0

    def test_optimum(self):
        p = quadratic_problem([1.0, 3.0])
        assert p.loss(np.zeros(2)) == 0.0
        np.testing.assert_array_equal(p.grad(np.zeros(2)), 0.0)

    def test_L_is_max_eigenvalue(self):
        assert quadratic_problem([1.0, 4.0]).smoothness_L == 4.0

    def test_spectrum(self, quad):
        assert quad.smoothness_L == 1.0 and quad.dim == 16

    @pytest.mark.parametrize("lam", [[0.0], [1.0, -2.0]])
    def test_non_positive_eigenvalue(self, lam):
        with pytest.raises(ValueError, match="positive"):
            quadratic_problem(lam)


class TestLogistic:
    def test_single_example_hand_value(self):
        p = logistic_problem([[1.0]], [1.0])
        assert p.loss(np.zeros(1)) == pytest.approx(math.log(2), rel=1e-15)
        np.testing.assert_allclose(p.grad(np.zeros(1)), [-0.5], rtol=1e-15)

    def test_separated_limit(self):
        p = logistic_problem([[1.0, 0.0], [0.0, -1.0]], [1.0, -1.0])
        w = np.array([1.0, 1.0])
        assert p.loss(800 * w) < 1e-300

    def test_large_margin_no_overflow(self):
        p = logistic_problem([[1.0]], [1.0])
        assert p.loss(np.array([-1000.0])) == pytest.approx(1000.0)
        assert np.isfinite(p.grad(np.array([-1000.0]))).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            logistic_problem(np.ones((3, 2)), np.ones(2))

    def test_zero_row(self):
        with pytest.raises(ValueError, match="nonzero"):
            logistic_problem([[0.0, 0.0]], [1.0])

    def test_bad_labels(self):
        with pytest.raises(ValueError, match="-1 or \\+1"):
            logistic_problem([[1.0]], [0.0])

    def test_optimum_is_stationary_and_lower_bound(self, logit, rng):
        ls = logit.optimum_L_star
        for _ in range(200):
            assert logit.loss(rng.standard_normal(6) * 3) >= ls - 1e-9

    def test_separable_without_reg_raises(self):
        p = logistic_problem([[1.0], [2.0]], [1.0, 1.0], solver_max_iter=1000)
        with pytest.raises(RuntimeError, match="did not converge"):
            _ = p.optimum_L_star


class TestFiniteDifferences:
    def test_quadratic(self):
        p = quadratic_problem([1.0])
        assert finite_diff_grad(p, [2.0], 1e-6)[0] == pytest.approx(2.0, abs=1e-8)

    def test_constant_loss(self):
        p = Problem(3, lambda w: 7.0, lambda w: np.zeros(3), 1.0, 7.0)
        np.testing.assert_array_equal(finite_diff_grad(p, np.ones(3)), 0.0)

    def test_logistic_single(self):
        p = logistic_problem([[1.0]], [1.0])
        assert finite_diff_grad(p, [0.0])[0] == pytest.approx(-0.5, rel=1e-8)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(quadratic_problem([1.0]), [0.0], 0.0)

    @pytest.mark.parametrize("name", ["quad", "logit"])
    def test_gradient_matches_at_100_points(self, name, request, rng):
        p = request.getfixturevalue(name)
        for _ in range(100):
            w = rng.standard_normal(p.dim) * 2
            g = p.grad(w)
            fd = finite_diff_grad(p, w, 1e-6)
            assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


@pytest.mark.parametrize("name", ["quad", "logit"])
def test_smoothness_certificate(name, request):
    p = request.getfixturevalue(name)
    r = np.random.default_rng(11)
    for _ in range(10_000):
        w = r.standard_normal(p.dim) * 3
        v = w + r.standard_normal(p.dim) * r.lognormal(0, 1)
        lhs = p.loss(v) - p.loss(w) - p.grad(w) @ (v - w)
        assert lhs <= 0.5 * p.smoothness_L * np.dot(v - w, v - w) + 1e-9


def test_load_delimited(tmp_path):
    f = tmp_path / "data.csv"
    f.write_text("# label, x1, x2\n1,0.5,2\n-1,1.5,-1\n")
    X, y = load_delimited(f, ",")
    np.testing.assert_array_equal(y, [1, -1])
    np.testing.assert_array_equal(X, [[0.5, 2], [1.5, -1]])


def test_load_delimited_needs_features(tmp_path):
    f = tmp_path / "data.txt"
    f.write_text("1\n-1\n")
    with pytest.raises(ValueError, match="feature"):
        load_delimited(f)
