# call from project directory
# python -m unittest tests/test_darmois.py

import unittest

import numpy as np

from darmois import *
from eval_service import ks_uniformity, mcc
from mixing import build_fold_mixing
from nica_errors import DegenerateInputError, DimensionError


class TestDarmoisMethods(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(41)
        x1 = rng.standard_normal(2000)
        self.x = np.column_stack([x1, x1 + 0.5 * rng.standard_normal(2000)])

    def test_outputs_in_open_unit_interval(self):
        z = darmois_transform(self.x)
        self.assertEqual(z.shape, (2000, 2))
        self.assertTrue(np.all((z > 0.0) & (z < 1.0)), "ERROR: outputs must lie in (0, 1)")

    def test_first_output_is_increasing_in_x1(self):
        z = darmois_transform(self.x)
        order = np.argsort(self.x[:, 0])
        self.assertTrue(np.all(np.diff(z[order, 0]) > 0))

    def test_outputs_uniform_and_decorrelated(self):
        z = darmois_transform(self.x)
        for i in range(2):
            distance = ks_uniformity(z[:, i])
            self.assertLess(distance, 0.08, f"ERROR: column {i + 1} ks distance {distance}")
        r = np.corrcoef(z[:, 0], z[:, 1])[0, 1]
        self.assertLess(abs(r), 0.15, f"ERROR: output correlation {r}")
        self.assertGreater(np.corrcoef(self.x[:, 0], self.x[:, 1])[0, 1], 0.8)

    def test_conditional_cdf_matches_known_conditional(self):
        # x2 | x1 ~ N(x1, 0.5^2), so F(x2 | x1) = Phi((x2 - x1) / 0.5)
        from scipy.stats import norm
        z = darmois_transform(self.x, bandwidth=0.2)
        exact = norm.cdf((self.x[:, 1] - self.x[:, 0]) / 0.5)
        deviation = np.abs(z[:, 1] - exact)
        self.assertLess(float(np.mean(deviation)), 0.05, f"ERROR: mean deviation {np.mean(deviation)}")

    def test_neighbor_bandwidths(self):
        widths = neighbor_bandwidths(np.arange(10.0), 2)
        self.assertEqual(float(widths[0]), 2.0)
        self.assertEqual(float(widths[5]), 1.0)
        self.assertEqual(neighbor_count(10000), 100)
        self.assertEqual(neighbor_count(2), 1)

    def test_per_row_widths_match_fixed_width(self):
        x1, x2 = self.x[:300, 0], self.x[:300, 1]
        self.assertTrue(np.allclose(conditional_cdf(x1, x2, 0.3), conditional_cdf(x1, x2, np.full(300, 0.3))))

    def test_folded_mixture_independent_yet_wrong(self):
        rng = np.random.default_rng(43)
        s = rng.laplace(size=(3000, 2))
        x = build_fold_mixing(seed=43).forward(s)
        z = darmois_transform(x)
        for i in range(2):
            distance = ks_uniformity(z[:, i])
            self.assertLess(distance, 0.05, f"ERROR: column {i + 1} ks distance {distance}")
        score = mcc(s, z).mcc
        self.assertLess(score, 0.6, f"ERROR: darmois outputs match the sources, mcc {score}")

    def test_invalid_inputs(self):
        with self.assertRaises(DimensionError):
            darmois_transform(np.zeros((100, 3)) + np.arange(100)[:, None])
        with self.assertRaises(DegenerateInputError):
            darmois_transform(np.column_stack([np.ones(100), np.arange(100.0)]))

    def test_short_input_still_runs(self):
        with self.assertLogs("darmois", level="WARNING"):
            z = darmois_transform(self.x[:200])
        self.assertEqual(z.shape, (200, 2))


if __name__ == '__main__':
    unittest.main()
