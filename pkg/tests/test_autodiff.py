"""Backward rules of every primitive against central finite differences."""

import numpy as np
import pytest

import fusionkit.autodiff as ad
from fusionkit.sketch import McbFusion, SketchPlan


def numeric_grad(f, x, step=1e-6):
    """Central differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = f(x)
        flat[i] = keep - step
        down = f(x)
        flat[i] = keep
        gf[i] = (up - down) / (2 * step)
    return g


def check_unary(build, x, rtol=1e-5, atol=1e-7):
    """Compare the recorded gradient of sum(weights * build(x)) with
    finite differences."""
    rng = np.random.default_rng(0)
    leaf = ad.Param(x.copy(), "x")
    with ad.record():
        out = build(leaf)
    weights = rng.normal(size=np.shape(ad.value_of(out)))
    with ad.record():
        loss = ad.reduce_sum(ad.mul(build(leaf), weights))
    grads = ad.backward(loss, {"x": leaf})

    def f(arr):
        leaf.value = arr
        return float(np.sum(np.asarray(ad.value_of(build(leaf))) * weights))

    numeric = numeric_grad(f, x.copy())
    np.testing.assert_allclose(grads["x"], numeric, rtol=rtol, atol=atol)


class TestBasicContracts:
    def test_sum_gradient_is_ones(self):
        x = ad.Param(np.arange(4.0), "x")
        with ad.record():
            loss = ad.reduce_sum(x)
        grads = ad.backward(loss, {"x": x})
        np.testing.assert_array_equal(grads["x"], np.ones(4))

    def test_quadratic_gradient(self):
        x = ad.Param(np.array([1.0, -2.0, 3.0]), "x")
        with ad.record():
            loss = ad.reduce_sum(ad.mul(x, x))
        grads = ad.backward(loss, {"x": x})
        np.testing.assert_allclose(grads["x"], 2.0 * x.value)

    def test_non_scalar_loss_rejected(self):
        x = ad.Param(np.ones(3), "x")
        with ad.record():
            out = ad.mul(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(out)

    def test_unrecorded_loss_rejected(self):
        with pytest.raises(TypeError, match="record"):
            ad.backward(np.float64(1.0))

    def test_no_graph_outside_record(self):
        x = ad.Param(np.ones(3), "x")
        out = ad.mul(x, x)
        assert isinstance(out, np.ndarray)

    def test_unreached_parameter_gets_zero(self):
        x = ad.Param(np.ones(3), "x")
        unused = ad.Param(np.ones(2), "unused")
        with ad.record():
            loss = ad.reduce_sum(x)
        grads = ad.backward(loss, {"x": x, "unused": unused})
        np.testing.assert_array_equal(grads["unused"], np.zeros(2))
        assert unused.grad is None


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        rng = np.random.default_rng(1)
        other = rng.normal(size=(3,))
        check_unary(lambda v: ad.add(v, other), rng.normal(size=(4, 3)))

    def test_mul_broadcast(self):
        rng = np.random.default_rng(2)
        other = rng.normal(size=(4, 1))
        check_unary(lambda v: ad.mul(v, other), rng.normal(size=(4, 3)))

    def test_sub(self):
        rng = np.random.default_rng(3)
        other = rng.normal(size=(4, 3))
        check_unary(lambda v: ad.sub(other, v), rng.normal(size=(4, 3)))

    def test_matmul_both_sides(self):
        rng = np.random.default_rng(4)
        left = rng.normal(size=(3, 4))
        right = rng.normal(size=(4, 2))
        check_unary(lambda v: ad.matmul(v, right), rng.normal(size=(3, 4)))
        check_unary(lambda v: ad.matmul(left, v), rng.normal(size=(4, 2)))

    def test_matmul_vector_cases(self):
        rng = np.random.default_rng(5)
        mat = rng.normal(size=(4, 3))
        vec = rng.normal(size=4)
        check_unary(lambda v: ad.matmul(v, mat), rng.normal(size=4))
        check_unary(lambda v: ad.matmul(vec, v), rng.normal(size=(4, 3)))

    def test_transpose(self):
        rng = np.random.default_rng(6)
        check_unary(ad.transpose, rng.normal(size=(3, 5)))

    def test_tanh(self):
        rng = np.random.default_rng(7)
        check_unary(ad.tanh, rng.normal(size=(4, 3)))

    def test_relu(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 3))
        x[np.abs(x) < 0.05] = 0.3  # keep clear of the kink
        check_unary(ad.relu, x)

    def test_softmax(self):
        rng = np.random.default_rng(9)
        check_unary(lambda v: ad.softmax(v, axis=-1), rng.normal(size=(4, 5)))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(10)
        out = ad.softmax(rng.normal(size=(6, 5)) * 10, axis=-1)
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)

    def test_reduce_sum_axis(self):
        rng = np.random.default_rng(11)
        check_unary(lambda v: ad.reduce_sum(v, axis=1), rng.normal(size=(3, 4)))

    def test_reduce_max(self):
        rng = np.random.default_rng(12)
        check_unary(lambda v: ad.reduce_max(v, axis=0), rng.normal(size=(5, 3)))

    def test_sum_pool(self):
        rng = np.random.default_rng(13)
        check_unary(lambda v: ad.sum_pool(v, 3), rng.normal(size=(2, 6)))

    def test_reshape(self):
        rng = np.random.default_rng(14)
        check_unary(lambda v: ad.reshape(v, (2, 6)), rng.normal(size=(3, 4)))

    def test_concat(self):
        rng = np.random.default_rng(15)
        other = rng.normal(size=(2, 3))
        check_unary(lambda v: ad.concat([v, other, v], axis=0),
                    rng.normal(size=(2, 3)))

    def test_narrow(self):
        rng = np.random.default_rng(16)
        check_unary(lambda v: ad.narrow(v, 1, 1, 2), rng.normal(size=(3, 4)))

    def test_circular_convolve_both_sides(self):
        rng = np.random.default_rng(17)
        other = rng.normal(size=8)
        check_unary(lambda v: ad.circular_convolve(v, other),
                    rng.normal(size=8))
        check_unary(lambda v: ad.circular_convolve(other, v),
                    rng.normal(size=8))

    def test_sketch_project(self):
        rng = np.random.default_rng(18)
        plan = SketchPlan(6, 4, seed=0)
        check_unary(lambda v: ad.sketch_project(plan, v), rng.normal(size=6))

    def test_signed_sqrt(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=6)
        x[np.abs(x) < 0.2] = 0.5  # derivative blows up near zero
        check_unary(ad.signed_sqrt, x)

    def test_l2_normalize(self):
        rng = np.random.default_rng(20)
        check_unary(lambda v: ad.l2_normalize(v, axis=-1),
                    rng.normal(size=(2, 5)))

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(21)
        check_unary(lambda v: ad.softmax_cross_entropy(v, 2),
                    rng.normal(size=5))


class TestThroughFusion:
    def test_mcb_loss_matches_finite_differences(self):
        """Gradients through sketch + circular convolution, checked end to
        end at the input level."""
        rng = np.random.default_rng(22)
        op = McbFusion((6, 6), 8, seed=1)
        weights = rng.normal(size=8)
        y = rng.normal(size=6)
        check_unary(lambda v: ad.mul(op.fuse(v, y), weights),
                    rng.normal(size=6), rtol=1e-4)


class TestNanDiagnostics:
    def test_first_bad_node_named(self):
        x = ad.Param(np.array([1.0, 2.0]), "x")
        huge = np.array([1e308, 1e308])
        with ad.record(), np.errstate(over="ignore"):
            blown = ad.mul(ad.mul(x, huge), huge)   # inf appears here
            loss = ad.reduce_sum(ad.tanh(blown))
        assert not np.all(np.isfinite(ad.value_of(blown)))
        assert ad.find_nan_source(loss) == "mul"

    def test_finite_graph_reports_none(self):
        x = ad.Param(np.ones(2), "x")
        with ad.record():
            loss = ad.reduce_sum(ad.tanh(x))
        assert ad.find_nan_source(loss) is None
