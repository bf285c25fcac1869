# call from project directory
# python -m unittest tests/test_contrastive_service.py

import unittest

import numpy as np

from contrastive_service import *
from dataset import Dataset
from mixing import apply_mixing, build_mixing
from mlp import Mlp, forward
from nica_errors import ContractError, DegenerateInputError
from source_service import attach_auxiliary, generate_sources
from source_specs import ArSpec, NonstationarySpec
from train_config import TrainConfig

DISTINCT_LAMBDAS = [[0.2, 2.0], [2.0, 0.2], [0.2, 0.2], [2.0, 2.0]]


def segmented_dataset(lambdas, points_per_segment: int = 512, seed: int = 0) -> Dataset:
    spec = NonstationarySpec(d=2, n_segments=len(lambdas), points_per_segment=points_per_segment,
                             base="laplace", lambdas=lambdas)
    return apply_mixing(build_mixing(2, 1, seed=seed), generate_sources(spec, seed))


def ar_dataset(rho: float, T: int = 2000, seed: int = 0) -> Dataset:
    spec = ArSpec(d=2, T=T, r_choices={"kind": "linear", "rho": rho}, innovation={"kind": "gaussian"})
    return apply_mixing(build_mixing(2, 1, seed=seed), generate_sources(spec, seed))


class TestContrastiveHelpers(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(61)

    def test_standardize(self):
        values = self.rng.standard_normal((100, 3)) * 5.0 + 2.0
        scaled, mean, std = standardize(values)
        self.assertTrue(np.allclose(scaled.mean(axis=0), 0.0))
        self.assertTrue(np.allclose(scaled.std(axis=0), 1.0))
        values[:, 1] = 4.0
        with self.assertRaises(DegenerateInputError) as context:
            standardize(values)
        self.assertIn("column 2", str(context.exception))

    def test_fold_standardization(self):
        x = self.rng.standard_normal((50, 2)) * 3.0 - 1.0
        scaled, mean, std = standardize(x)
        h = Mlp.init_random([2, 5, 2], ["leaky_relu", "abs"], self.rng, name="h")
        folded = fold_standardization(h, mean, std)
        self.assertTrue(np.allclose(forward(folded, x), forward(h, scaled), atol=1e-12))

    def test_compose_linear(self):
        h = Mlp.init_random([2, 3, 2], ["tanh", "identity"], self.rng, name="h")
        x = self.rng.standard_normal((20, 2))
        unmixing = self.rng.standard_normal((2, 2))
        center = np.array([0.5, -0.5])
        composed = compose_linear(h, unmixing, center)
        self.assertTrue(np.allclose(forward(composed, x), (forward(h, x) - center) @ unmixing.T))

    def test_one_hot_detection(self):
        self.assertTrue(is_one_hot(np.eye(3)[[0, 2, 1, 1]]))
        self.assertFalse(is_one_hot(np.array([[0.5, 0.5], [1.0, 0.0]])))

    def test_pcl_negatives_skip_true_and_lagged_index(self):
        T = 50
        sample = pcl_negative_sampler(T)
        t = np.tile(np.arange(1, T), 200)
        negatives = sample(self.rng, t)
        self.assertTrue(np.all((negatives >= 0) & (negatives < T)))
        self.assertFalse(np.any(negatives == t), "ERROR: negative equals t")
        self.assertFalse(np.any(negatives == t - 1), "ERROR: negative equals t-1")
        self.assertEqual(len(np.unique(negatives)), T)

    def test_chance_se(self):
        self.assertAlmostEqual(binary_chance_se(100, 100), np.sqrt(201.0 / (12.0 * 100 * 100)))


class TestTcl(unittest.TestCase):

    def setUp(self):
        self.cfg = TrainConfig(hidden_widths=[16], epochs=40, batch_size=128, learning_rate=1e-2, seed=3)

    def test_learns_segment_labels(self):
        result = train_tcl(segmented_dataset(DISTINCT_LAMBDAS), self.cfg)
        final = result.final_metrics()
        self.assertEqual(result.method, "tcl")
        self.assertEqual(final["chance"], 0.25)
        self.assertGreater(final["heldout_accuracy"], 0.4, f"ERROR: held-out accuracy {final['heldout_accuracy']}")
        self.assertEqual(list(result.pretext_metrics["epoch"]), list(range(1, 41)))

    def test_identical_segments_stay_at_chance(self):
        result = train_tcl(segmented_dataset([[1.0, 1.0]] * 4), self.cfg.replace(epochs=10))
        final = result.final_metrics()
        accuracy = final["heldout_accuracy"]
        self.assertLessEqual(abs(accuracy - final["chance"]), 3.0 * final["chance_se"],
                             f"ERROR: accuracy {accuracy} on indistinguishable segments, se {final['chance_se']}")

    def test_z_is_extractor_output(self):
        dataset = segmented_dataset(DISTINCT_LAMBDAS)
        result = train_tcl(dataset, self.cfg.replace(epochs=2))
        self.assertTrue(np.allclose(result.recompute_z(dataset.x), result.z))
        self.assertTrue(np.all(result.z >= 0.0), "ERROR: default output nonlinearity is abs")

    def test_same_seed_same_result(self):
        dataset = segmented_dataset(DISTINCT_LAMBDAS)
        first = train_tcl(dataset, self.cfg.replace(epochs=2))
        second = train_tcl(dataset, self.cfg.replace(epochs=2))
        self.assertTrue(np.array_equal(first.z, second.z))

    def test_pipeline_adds_ica(self):
        dataset = segmented_dataset(DISTINCT_LAMBDAS)
        result = tcl_pipeline(dataset, self.cfg.replace(epochs=2))
        self.assertEqual(result.method, "tcl+ica")
        self.assertEqual(result.features.shape, (2048, 2))
        self.assertTrue(np.allclose(result.recompute_z(dataset.x), result.z, atol=1e-8))

    def test_contracts(self):
        dataset = segmented_dataset(DISTINCT_LAMBDAS, points_per_segment=100)
        with self.assertRaises(ContractError):
            train_tcl(dataset, self.cfg)
        with self.assertRaises(ContractError):
            train_tcl(dataset.replace(segments=None), self.cfg.replace(batch_size=10))
        with self.assertRaises(ContractError):
            train_tcl(dataset.replace(segments=np.ones(dataset.T, dtype=int)), self.cfg.replace(batch_size=10))
        with self.assertRaises(ContractError):
            train_tcl(dataset, self.cfg.replace(batch_size=10, output_dim=3))

    def test_untrained_control(self):
        dataset = segmented_dataset(DISTINCT_LAMBDAS)
        result = untrained_pipeline(dataset, self.cfg)
        self.assertEqual(result.method, "untrained+ica")
        self.assertEqual(len(result.pretext_metrics), 0)
        self.assertEqual(result.z.shape, (2048, 2))


class TestPclGcl(unittest.TestCase):

    def setUp(self):
        self.cfg = TrainConfig(hidden_widths=[16], epochs=20, batch_size=128, learning_rate=1e-2, seed=5)

    def test_pcl_detects_temporal_dependence(self):
        result = train_pcl(ar_dataset(0.8), self.cfg)
        auc = result.final_metrics()["heldout_auc"]
        self.assertEqual(result.method, "pcl")
        self.assertGreater(auc, 0.6, f"ERROR: held-out auc {auc}")

    def test_pcl_null_on_iid_sources(self):
        result = train_pcl(ar_dataset(0.0), self.cfg.replace(epochs=5))
        final = result.final_metrics()
        auc = final["heldout_auc"]
        self.assertLessEqual(abs(auc - final["chance"]), 3.0 * final["chance_se"],
                             f"ERROR: auc {auc} without temporal dependence, se {final['chance_se']}")

    def test_pcl_needs_three_points(self):
        with self.assertRaises(ContractError):
            train_pcl(Dataset(x=np.array([[0.0, 1.0], [1.0, 0.0]])), self.cfg)

    def test_gcl_segment_label_pipeline(self):
        dataset = attach_auxiliary(segmented_dataset(DISTINCT_LAMBDAS), "segment-label")
        result = gcl_pipeline(dataset, self.cfg.replace(epochs=2))
        self.assertEqual(result.method, "gcl+ica")
        self.assertTrue(result.extras["one_hot_aux"])
        self.assertIn("heldout_auc", result.pretext_metrics)

    def test_gcl_null_when_aux_is_independent(self):
        dataset = attach_auxiliary(segmented_dataset(DISTINCT_LAMBDAS), "segment-label")
        # shuffling the rows makes x independent of the segment labels
        order = np.random.default_rng(64).permutation(dataset.T)
        result = train_gcl(dataset.replace(x=dataset.x[order], s_true=dataset.s_true[order]), self.cfg.replace(epochs=5))
        final = result.final_metrics()
        auc = final["heldout_auc"]
        self.assertEqual(final["chance"], 0.5)
        self.assertLessEqual(abs(auc - 0.5), 3.0 * final["chance_se"],
                             f"ERROR: auc {auc} with independent aux, se {final['chance_se']}")

    def test_gcl_segment_networks_have_exponential_term(self):
        dataset = attach_auxiliary(segmented_dataset(DISTINCT_LAMBDAS, points_per_segment=64), "segment-label")
        rng = np.random.default_rng(65)
        t = np.arange(dataset.T)
        task = PairTask(dataset.x, dataset.aux, t, t, False, permutation_sampler(dataset.T), t[:200], t[200:],
                        rng, exponential_term=True)
        h = Mlp.init_random([2, 8, 2], ["leaky_relu", "abs"], rng, name="h")
        nets = task.networks(h, self.cfg, rng)
        self.assertEqual(sorted(nets), ["eta1", "eta2", "h", "psi1", "psi2"])
        self.assertEqual((nets["eta1"].input_dim, nets["eta1"].output_dim), (4, 2))
        task.resample(rng)
        tape = Tape()
        grads = tape.backward(task.batch_loss(tape, nets, np.arange(64)))
        self.assertGreater(float(np.abs(grads["eta1.0.weight"]).sum()), 0.0)
        self.assertGreater(float(np.abs(grads["h.0.weight"]).sum()), 0.0)
        # the exponential term is only used when u is fed unchanged
        lagged = PairTask(dataset.x, dataset.x, t, t, True, permutation_sampler(dataset.T), t[:200], t[200:],
                          rng, exponential_term=True)
        self.assertFalse(lagged.exponential_term)
        self.assertNotIn("eta1", lagged.networks(h, self.cfg, rng))

    def test_gcl_lagged_observation(self):
        dataset = attach_auxiliary(ar_dataset(0.8), "lagged-observation")
        result = gcl_pipeline(dataset, self.cfg.replace(epochs=2))
        self.assertEqual(result.method, "gcl")
        self.assertEqual(result.z.shape, (1999, 2))
        self.assertTrue(np.allclose(result.recompute_z(dataset.x), result.z))

    def test_gcl_needs_aux(self):
        with self.assertRaises(ContractError):
            train_gcl(ar_dataset(0.5, T=100), self.cfg)


if __name__ == '__main__':
    unittest.main()
