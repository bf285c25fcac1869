# call from project directory
# python -m unittest tests/test_experiment_service.py

import copy
import glob
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from experiment_service import *
from experiment_config import RESULT_COLUMNS, ExperimentConfig
from file_utils import compare_files, read_json
from nica_errors import CalibrationError, ConfigurationError

LINEAR_BSS = {
    "version": 1,
    "kind": "linear-bss",
    "name": "small_linear_bss",
    "sources": {"family": "ar", "d": 2, "T": 1000, "r_choices": {"kind": "linear", "rho": 0.0},
                "innovation": {"kind": "laplace", "scale": 1.0}},
    "mixing": {"n_layers": 1, "condition_bound": 10},
    "eval": {"rotations": 20},
    "n_seeds": 2
}


def small_config(**changes) -> ExperimentConfig:
    config_dict = copy.deepcopy(LINEAR_BSS)
    config_dict.update(changes)
    return ExperimentConfig(config_dict)


def read_results(out_dir: str) -> pd.DataFrame:
    return pd.read_csv(os.path.join(out_dir, "results.csv"), keep_default_na=False, na_values=[""])


class TestExperimentServiceMethods(unittest.TestCase):

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp(prefix="test-experiment-")

    def tearDown(self):
        shutil.rmtree(self.tmp_dir, ignore_errors=True)

    def out(self, name: str) -> str:
        return os.path.join(self.tmp_dir, name)

    def test_run_writes_outputs(self):
        summary = run_experiment(small_config(), self.out("run"))
        self.assertFalse(summary["partial"])
        self.assertEqual(summary["completed_seeds"], [0, 1])
        self.assertEqual(sorted(summary["mean_mcc"]), ["ica", "pca"])
        self.assertGreater(summary["mean_mcc"]["ica"], 0.9)

        frame = read_results(self.out("run"))
        self.assertEqual(list(frame.columns), RESULT_COLUMNS)
        self.assertEqual(len(frame), 4)
        self.assertEqual(list(frame["method"]), ["ica", "pca", "ica", "pca"])
        self.assertEqual(frame["artifacts"].iloc[0], "report_0.json;signals_0.csv")
        self.assertFalse(os.path.exists(self.out("run/errors.json")))

        report = read_json(self.out("run/report_1.json"))
        self.assertEqual(sorted(report["methods"]), ["ica", "pca"])
        self.assertIn("rotation_baseline", report)
        signals = pd.read_csv(self.out("run/signals_0.csv"))
        self.assertEqual(list(signals.columns), ["t", "s1", "s2", "z_ica_1", "z_ica_2", "z_pca_1", "z_pca_2"])
        self.assertEqual(len(signals), 1000)

    def test_reruns_are_identical(self):
        config = small_config()
        run_experiment(config, self.out("first"))
        run_experiment(config, self.out("second"), jobs=2)
        first = read_results(self.out("first")).drop(columns=["wall_clock_seconds"])
        second = read_results(self.out("second")).drop(columns=["wall_clock_seconds"])
        pd.testing.assert_frame_equal(first, second)
        for name in ["report_0.json", "report_1.json", "signals_0.csv", "signals_1.csv", "summary.json"]:
            self.assertTrue(compare_files(self.out(f"first/{name}"), self.out(f"second/{name}")),
                            f"ERROR: {name} differs between reruns")

    def test_failing_method_is_isolated(self):
        config = small_config(
            kind="comparison-grid",
            sources={"family": "nonstationary", "d": 2, "n_segments": 4, "points_per_segment": 100},
            train={"batch_size": 512, "epochs": 1},
            methods=["tcl+ica", "ica"],
            n_seeds=1)
        summary = run_experiment(config, self.out("partial"))
        self.assertTrue(summary["partial"])
        self.assertEqual(summary["failed_seeds"], [0])
        frame = read_results(self.out("partial"))
        failed = frame[frame["method"] == "tcl+ica"].iloc[0]
        self.assertEqual(failed["status"], "failed")
        self.assertTrue(failed["error"].startswith("ContractError"))
        self.assertEqual(frame[frame["method"] == "ica"].iloc[0]["status"], "ok")
        errors = read_json(self.out("partial/errors.json"))
        self.assertEqual(errors["failures"][0]["method"], "tcl+ica")

    def test_failing_data_generation_fails_the_seed(self):
        config = small_config(sources={"family": "ar", "d": 2, "T": 200,
                                       "r_choices": {"kind": "cubic", "rho": 0.8, "c": 0.5},
                                       "innovation": {"kind": "laplace", "scale": 10.0}})
        summary = run_experiment(config, self.out("unstable"))
        self.assertEqual(summary["failed_seeds"], [0, 1])
        self.assertEqual(summary["completed_seeds"], [])
        frame = read_results(self.out("unstable"))
        self.assertTrue((frame["status"] == "failed").all())
        self.assertTrue(frame["error"].str.startswith("InstabilityError").all())

    def test_darmois_records_uniformity(self):
        config = small_config(kind="darmois-demo",
                              sources={"family": "ar", "d": 2, "T": 600, "r_choices": {"kind": "tanh"}},
                              mixing={"n_layers": 2}, n_seeds=1)
        run_experiment(config, self.out("darmois"))
        frame = read_results(self.out("darmois"))
        row = frame[frame["method"] == "darmois"].iloc[0]
        self.assertEqual(row["status"], "ok")
        self.assertEqual(row["pretext_name"], "ks_max")
        self.assertLess(row["pretext_metric"], 0.2)
        report = read_json(self.out("darmois/report_0.json"))
        self.assertIn("hsic", report["methods"]["darmois"]["extras"])

    def test_calibration_needs_five_seeds(self):
        with self.assertRaises(CalibrationError):
            calibrate_experiment(small_config(), self.out("too_few"))
        self.assertFalse(os.path.exists(self.out("too_few/results.csv")))

    def test_calibrate_and_check(self):
        config = small_config(sources={"family": "ar", "d": 2, "T": 500, "r_choices": {"kind": "linear", "rho": 0.0}})
        fixtures = calibrate_experiment(config, self.out("calibrate"), n_seeds=5)
        self.assertEqual(read_json(self.out("calibrate/fixtures.json")), fixtures)
        self.assertEqual(sorted(fixtures["metrics"]), ["ica", "pca"])
        stats = fixtures["metrics"]["ica"]["mcc"]
        self.assertEqual(stats["n"], 5)
        self.assertAlmostEqual(stats["threshold"], stats["mean"] - 2.0 * stats["std"])

        frame = read_results(self.out("calibrate"))
        self.assertEqual(check_against_fixtures(frame, fixtures), [])
        raised = copy.deepcopy(fixtures)
        raised["metrics"]["ica"]["mcc"]["threshold"] = 1.5
        failures = check_against_fixtures(frame, raised)
        self.assertEqual(len(failures), 1)
        self.assertTrue(failures[0].startswith("ica mcc"))

    def test_check_acceptance_means_and_gaps(self):
        frame = pd.DataFrame({
            "seed_index": [0, 0, 1, 1],
            "method": ["tcl+ica", "untrained+ica", "tcl+ica", "untrained+ica"],
            "status": ["ok"] * 4,
            "mcc": [0.90, 0.70, 0.86, 0.72],
            "pretext_metric": [0.6, None, 0.6, None]
        })
        targets = {"min_mcc": {"tcl+ica": 0.85},
                   "gaps": [{"better": "tcl+ica", "worse": "untrained+ica", "min_gap": 0.15}]}
        self.assertEqual(check_acceptance(frame, [], targets), [])
        narrow = {"gaps": [{"better": "tcl+ica", "worse": "untrained+ica", "min_gap": 0.2}]}
        failures = check_acceptance(frame, [], narrow)
        self.assertEqual(len(failures), 1)
        self.assertIn("mean gap 0.1700", failures[0])
        failures = check_acceptance(frame, [], {"min_mcc": {"tcl+ica": 0.9, "pcl": 0.8}})
        self.assertEqual(len(failures), 2, f"ERROR: {failures}")
        self.assertIn("pcl: no successful rows", failures)
        with self.assertRaises(ConfigurationError):
            check_acceptance(frame, [], {"min_mc": {}})

    def test_check_acceptance_per_seed_targets(self):
        frame = pd.DataFrame({"seed_index": [0, 1, 2], "method": ["darmois"] * 3, "status": ["ok"] * 3,
                              "mcc": [0.40, 0.45, 0.42], "pretext_metric": [0.010, 0.025, 0.012]})
        reports = [{"methods": {"darmois": {"extras": {"hsic": {"reject": reject}}}}} for reject in (False, True, True)]
        targets = {"max_mcc": {"darmois": 0.6}, "max_pretext": {"darmois": 0.02},
                   "hsic": {"method": "darmois", "max_rejections": 1}}
        failures = check_acceptance(frame, reports, targets)
        self.assertEqual(len(failures), 2, f"ERROR: {failures}")
        self.assertTrue(failures[0].startswith("darmois pretext: worst seed 0.0250"))
        self.assertIn("rejected on 2 of 3 seeds", failures[1])

        band_reports = [{"methods": {"ica": {"evaluation": {"mcc": score}}}, "rotation_baseline": {"band": [0.6, 0.9]}}
                        for score in (0.7, 0.95, 0.5)]
        ica = pd.DataFrame({"seed_index": [0, 1, 2], "method": ["ica"] * 3, "status": ["ok"] * 3,
                            "mcc": [0.7, 0.95, 0.5], "pretext_metric": [None] * 3})
        self.assertEqual(len(check_acceptance(ica, band_reports, {"rotation_band": {"method": "ica", "max_outside": 1}})), 1)
        self.assertEqual(check_acceptance(ica, band_reports, {"rotation_band": {"method": "ica", "max_outside": 2}}), [])

    def test_check_acceptance_reference(self):
        frame = pd.DataFrame({"seed_index": [0, 1], "method": ["gcl+ica"] * 2, "status": ["ok"] * 2,
                              "mcc": [0.80, 0.82], "pretext_metric": [0.7, 0.7]})
        reference = {"reference": {"config": "tcl_pipeline", "method": "tcl+ica", "compare": "gcl+ica", "max_gap": 0.1}}
        self.assertEqual(check_acceptance(frame, [], reference), [])
        self.assertEqual(check_acceptance(frame, [], reference, {"tcl+ica": 0.88}), [])
        failures = check_acceptance(frame, [], reference, {"tcl+ica": 0.95})
        self.assertEqual(len(failures), 1)
        self.assertTrue(failures[0].startswith("gcl+ica mcc"))
        self.assertEqual(len(check_acceptance(frame, [], reference, {"pcl": 0.9})), 1)

    def test_load_run_and_shipped_targets(self):
        config = small_config(eval={"rotations": 20})
        run_experiment(config, self.out("load"))
        frame, reports = load_run(self.out("load"))
        self.assertEqual(len(frame), 4)
        self.assertEqual([r["seed_index"] for r in reports], [0, 1])
        self.assertIn("band", reports[0]["rotation_baseline"])
        self.assertEqual(check_acceptance(frame, reports, {"rotation_band": {"method": "ica", "max_outside": 2}}), [])

        targets = read_json(os.path.join("tests", "fixtures", "acceptance_targets.json"))["configs"]
        shipped = sorted(ExperimentConfig.load(p).name for p in glob.glob("configs/*.json"))
        self.assertEqual(sorted(targets), shipped)
        for name, entry in targets.items():
            self.assertEqual(sorted(set(entry) - set(TARGET_KEYS)), [], f"ERROR: {name}")
            if "reference" in entry:
                self.assertIn(entry["reference"]["config"], targets)

    def test_lower_is_better_threshold(self):
        stats = metric_statistics(np.array([0.01, 0.02, 0.03]), lower_is_better=True)
        self.assertAlmostEqual(stats["threshold"], 0.02 + 2.0 * 0.01)
        frame = pd.DataFrame({"method": ["darmois"], "status": ["ok"], "mcc": [0.5], "pretext_metric": [0.1]})
        fixtures = {"metrics": {"darmois": {"ks_max": stats}}}
        self.assertEqual(len(check_against_fixtures(frame, fixtures)), 1)


if __name__ == '__main__':
    unittest.main()
