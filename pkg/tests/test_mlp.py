# call from project directory
# python -m unittest tests/test_mlp.py

import unittest

import numpy as np

from mlp import *
from autodiff import Tape
from nica_errors import ConfigurationError, DimensionError, NumericError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("test_mlp")


class TestMlpMethods(unittest.TestCase):

    def test_forward_matches_tape(self):
        rng = np.random.default_rng(3)
        mlp = Mlp.init_random([3, 5, 2], ["leaky_relu", "abs"], rng, name="h")
        x = rng.standard_normal((10, 3))
        plain = forward(mlp, x)
        tape = Tape()
        recorded = forward(mlp, x, tape)
        self.assertEqual(plain.shape, (10, 2))
        self.assertTrue(np.allclose(plain, recorded.value), "ERROR: tape and numpy paths disagree")
        self.assertTrue(np.all(plain >= 0.0), "ERROR: abs output must be nonnegative")
        self.assertIn("h.0.weight", tape.parameters)
        self.assertIn("h.1.bias", tape.parameters)

    def test_affine_arithmetic(self):
        identity = Mlp([Layer(np.eye(3), np.zeros((1, 3)))])
        x = np.random.default_rng(0).standard_normal((4, 3))
        self.assertTrue(np.array_equal(forward(identity, x), x))
        affine = Mlp([Layer([[2.0]], [[1.0]])])
        self.assertEqual(float(forward(affine, np.array([[3.0]]))[0, 0]), 7.0)

    def test_matches_hand_evaluation(self):
        rng = np.random.default_rng(4)
        mlp = Mlp.init_random([2, 3, 2], ["tanh", "identity"], rng)
        x = rng.standard_normal((6, 2))
        W1, b1 = mlp.layers[0].weight, mlp.layers[0].bias[0]
        W2, b2 = mlp.layers[1].weight, mlp.layers[1].bias[0]
        expected = np.zeros((6, 2))
        for t in range(6):
            hidden = [np.tanh(x[t, 0] * W1[0, j] + x[t, 1] * W1[1, j] + b1[j]) for j in range(3)]
            for k in range(2):
                expected[t, k] = hidden[0] * W2[0, k] + hidden[1] * W2[1, k] + hidden[2] * W2[2, k] + b2[k]
        self.assertTrue(np.allclose(forward(mlp, x), expected, atol=1e-12))
        self.assertTrue(np.array_equal(forward(mlp, x), forward(mlp, x)), "ERROR: forward is not deterministic")

    def test_linear_mlp_is_a_matrix_product(self):
        rng = np.random.default_rng(6)
        mlp = Mlp.init_random([3, 4, 2], ["identity", "identity"], rng)
        x = rng.standard_normal((5, 3))
        product = mlp.layers[0].weight @ mlp.layers[1].weight
        self.assertTrue(np.allclose(forward(mlp, x), x @ product, atol=1e-12))

    def test_width_mismatch(self):
        rng = np.random.default_rng(0)
        mlp = Mlp.init_random([3, 2], ["identity"], rng)
        with self.assertRaises(DimensionError):
            forward(mlp, np.zeros((4, 2)))
        with self.assertRaises(DimensionError):
            Mlp([Layer(np.zeros((3, 2)), np.zeros((1, 2))), Layer(np.zeros((3, 1)), np.zeros((1, 1)))])

    def test_bad_layer_settings(self):
        with self.assertRaises(ConfigurationError):
            Layer(np.eye(2), np.zeros((1, 2)), activation="relu6")
        with self.assertRaises(ConfigurationError):
            Layer(np.eye(2), np.zeros((1, 2)), activation="leaky_relu", alpha=1.5)
        with self.assertRaises(DimensionError):
            Layer(np.eye(2), np.zeros((1, 3)))

    def test_non_finite_activation(self):
        mlp = Mlp([Layer(np.array([[1e300]]), np.zeros((1, 1)), "identity"),
                   Layer(np.array([[1e300]]), np.zeros((1, 1)), "identity")], name="big")
        with self.assertRaises(NumericError):
            forward(mlp, np.array([[1e10]]))

    def test_with_parameters_and_dict_round_trip(self):
        rng = np.random.default_rng(5)
        mlp = Mlp.init_random([2, 4, 2], ["tanh", "identity"], rng, name="h")
        params = {k: v + 1.0 for k, v in mlp.parameters().items()}
        moved = mlp.with_parameters(params)
        self.assertTrue(np.allclose(moved.layers[0].weight, mlp.layers[0].weight + 1.0))
        # the original is untouched
        self.assertFalse(np.allclose(moved.layers[0].weight, mlp.layers[0].weight))
        restored = Mlp.from_dict(moved.as_dict())
        x = rng.standard_normal((5, 2))
        self.assertTrue(np.allclose(forward(restored, x), forward(moved, x)))

    def test_leaky_soft_is_smooth_and_increasing(self):
        x = np.linspace(-30, 30, 2001).reshape(1, -1)
        y = leaky_soft(x, 0.2)
        self.assertTrue(np.all(np.diff(y) > 0), "ERROR: leaky_soft must be strictly increasing")
        derivative = leaky_soft_derivative(x, 0.2)
        self.assertTrue(np.all(derivative > 0.2) and np.all(derivative < 1.0))
        # log-derivative gradient against a central difference
        eps = 1e-6
        numeric = (leaky_soft_log_derivative(x + eps, 0.2) - leaky_soft_log_derivative(x - eps, 0.2)) / (2 * eps)
        self.assertTrue(np.allclose(numeric, leaky_soft_log_derivative_grad(x, 0.2), atol=1e-7))


if __name__ == '__main__':
    unittest.main()
