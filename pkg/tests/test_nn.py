import numpy as np
import pytest

from teleop.nn import MLP, elu, elu_grad, numerical_gradient, relative_error
from teleop.optim import AdamOptimizer, clip_grad_norm


class TestMLP:
    """Test the numpy multilayer perceptron"""

    def test_shapes(self):
        """Test layer sizes and output shape"""
        net = MLP.create([5, 8, 3], np.random.default_rng(0))
        assert net.sizes == [5, 8, 3]
        assert net.num_layers == 2
        assert net(np.zeros((4, 5))).shape == (4, 3)

    def test_backward_matches_finite_differences(self):
        """Test parameter and input gradients against central differences"""
        rng = np.random.default_rng(1)
        net = MLP.create([4, 6, 6, 2], rng)
        x = rng.normal(size=(7, 4))
        weights = rng.normal(size=(7, 2))

        def loss():
            return float(np.sum(weights * net(x)))

        _, cache = net.forward(x)
        grads, grad_x = net.backward(cache, weights)
        assert relative_error(grads, numerical_gradient(loss, net.params)) < 1e-6
        assert relative_error([grad_x], numerical_gradient(loss, [x])) < 1e-6

    def test_copy_is_independent(self):
        """Test that copies do not share arrays"""
        net = MLP.create([2, 3, 1], np.random.default_rng(2))
        clone = net.copy()
        clone.params[0][0, 0] += 1.0
        assert net.params[0][0, 0] != clone.params[0][0, 0]

    def test_output_gain(self):
        """Test that a small output gain gives small initial outputs"""
        rng = np.random.default_rng(3)
        net = MLP.create([10, 32, 4], rng, output_gain=0.01)
        assert np.max(np.abs(net(rng.normal(size=(64, 10))))) < 0.2


class TestActivations:
    """Test the ELU activation"""

    def test_elu(self):
        """Test ELU values on both sides of zero"""
        np.testing.assert_allclose(elu(np.array([-1.0, 0.0, 2.0])), [np.expm1(-1.0), 0.0, 2.0])

    def test_elu_grad(self):
        """Test the ELU derivative"""
        np.testing.assert_allclose(elu_grad(np.array([-1.0, 3.0])), [np.exp(-1.0), 1.0])


class TestOptim:
    """Test Adam and gradient clipping"""

    def test_adam_minimizes_quadratic(self):
        """Test Adam drives a quadratic to its minimum"""
        x = np.array([3.0, -2.0])
        opt = AdamOptimizer.for_params([x], lr=0.1)
        for _ in range(1000):
            opt.step([x], [2.0 * x])
        np.testing.assert_allclose(x, 0.0, atol=1e-2)

    def test_first_step_has_lr_magnitude(self):
        """Test the bias-corrected first step moves each entry by lr"""
        opt = AdamOptimizer([(3,)], lr=0.05)
        delta = opt.propose([np.array([10.0, -0.1, 1e-3])])[0]
        np.testing.assert_allclose(np.abs(delta), 0.05, rtol=1e-4)

    def test_rejected_proposal_leaves_moments(self):
        """Test an uncommitted proposal does not bias later steps"""
        opt = AdamOptimizer([(2,)], lr=0.1)
        opt.step([np.zeros(2)], [np.array([1.0, -2.0])])
        m, v, t = [a.copy() for a in opt.m], [a.copy() for a in opt.v], opt.t

        first = opt.propose([np.array([5.0, 5.0])])[0]
        retry = opt.propose([np.array([5.0, 5.0])], scale=0.5)[0]

        np.testing.assert_allclose(retry, 0.5 * first)
        assert opt.t == t
        np.testing.assert_array_equal(opt.m[0], m[0])
        np.testing.assert_array_equal(opt.v[0], v[0])

    def test_commit_advances_moments(self):
        """Test committing a proposal matches a plain step"""
        a = AdamOptimizer([(2,)], lr=0.1)
        b = AdamOptimizer([(2,)], lr=0.1)
        grad = np.array([0.5, -1.0])
        a.propose([grad], scale=0.25)
        a.commit()
        b.step([np.zeros(2)], [grad])

        assert a.t == b.t == 1
        np.testing.assert_array_equal(a.m[0], b.m[0])
        np.testing.assert_array_equal(a.v[0], b.v[0])

    def test_clip_grad_norm(self):
        """Test clipping rescales to the maximum norm and reports the original"""
        grads = [np.array([3.0, 0.0]), np.array([4.0])]
        norm = clip_grad_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        total = np.sqrt(sum(np.sum(g * g) for g in grads))
        assert total == pytest.approx(1.0)

    def test_clip_leaves_small_gradients(self):
        """Test gradients under the limit are untouched"""
        grads = [np.array([0.3, 0.4])]
        clip_grad_norm(grads, 1.0)
        np.testing.assert_array_equal(grads[0], [0.3, 0.4])
