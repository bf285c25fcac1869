import os
from time import perf_counter
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from contrastive_service import gcl_pipeline, tcl_pipeline, train_pcl, untrained_pipeline
from darmois import darmois_transform
from dataset import Dataset
from env import NICA_OUTPUT_ROOT
from eval_service import (baseline_band, hsic_independence, ks_uniformity, mcc,
                          rotation_baseline_mcc)
from experiment_config import RESULT_COLUMNS, ExperimentConfig, ResultRecord, derive_seed
from file_utils import CSV_FLOAT_FORMAT, ensure_dir, read_json, write_frame_csv, write_json
from linear_ica import linear_ica, pca_baseline
from logger_utils import log_timer_info
from mixing import apply_mixing, build_fold_mixing, build_mixing
from mle_service import train_mle
from nica_errors import CalibrationError, ConfigurationError, NicaError, error_as_dict
from source_service import attach_auxiliary, generate_sources
from train_config import EstimatorResult, TrainConfig

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("experiment_service")

# ============================================
# experiment_service MODULE OVERVIEW
#
# run_experiment() executes every seed of a config, in parallel with
# joblib when jobs > 1. Workers only compute; the parent process writes
#   results.csv         one row per (seed, method), sorted
#   report_<i>.json     full evaluation of seed index i
#   signals_<i>.csv     t, true sources and every method's components
#   estimators/         weights, z and training curves per trained method
#   summary.json        completed / failed seeds, partial flag
#   errors.json         only when something failed
# calibrate_experiment() turns the results of >= 5 seeds into
# fixtures.json (mean, std and mean - 2 std per method and metric).

MIN_CALIBRATION_SEEDS = 5
# pretext metrics where smaller is better; their threshold is mean + 2 std
LOWER_IS_BETTER = ["ks_max"]
TARGET_KEYS = ["min_mcc", "max_mcc", "max_pretext", "gaps", "rotation_band", "hsic", "reference"]
CAUGHT_FAILURES = (NicaError, ArithmeticError, np.linalg.LinAlgError)


class MethodOutcome:
    z: np.ndarray
    target: np.ndarray          # what z is scored against
    mode: str
    pretext_name: str
    pretext_metric: Optional[float]
    estimator: Optional[EstimatorResult]
    extras: dict

    def __init__(self, z, target, mode: str, pretext_name: str = "", pretext_metric: Optional[float] = None,
                 estimator: Optional[EstimatorResult] = None, extras: dict = None):
        self.z = z
        self.target = target
        self.mode = mode
        self.pretext_name = pretext_name
        self.pretext_metric = pretext_metric
        self.estimator = estimator
        self.extras = dict(extras or {})


def final_metric(result: EstimatorResult, name: str) -> Optional[float]:
    return result.final_metrics().get(name)


def scored_against(result: EstimatorResult, dataset: Dataset) -> tuple:
    # the TCL family recovers the sufficient statistic |s| up to monotone maps
    if result.method in ("tcl+ica", "untrained+ica", "gcl+ica"):
        return np.abs(dataset.s_true), "spearman"
    return dataset.s_true, "pearson"


def from_estimator(result: EstimatorResult, dataset: Dataset, pretext_name: str) -> MethodOutcome:
    target, mode = scored_against(result, dataset)
    return MethodOutcome(result.z, target, mode, pretext_name, final_metric(result, pretext_name), result,
                         result.extras)


def run_ica(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    _, z, converged = linear_ica(dataset.x, cfg.resolved_output_dim(dataset.x.shape[1]), seed=cfg.seed)
    return MethodOutcome(z, dataset.s_true, "pearson", extras={"converged": converged})


def run_pca(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    z = pca_baseline(dataset.x, cfg.resolved_output_dim(dataset.x.shape[1]))
    return MethodOutcome(z, dataset.s_true, "pearson")


def run_tcl(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    return from_estimator(tcl_pipeline(dataset, cfg), dataset, "heldout_accuracy")


def run_untrained(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    return from_estimator(untrained_pipeline(dataset, cfg), dataset, "")


def run_pcl(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    return from_estimator(train_pcl(dataset, cfg), dataset, "heldout_auc")


def run_gcl(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    return from_estimator(gcl_pipeline(dataset, cfg), dataset, "heldout_auc")


def run_mle(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    return from_estimator(train_mle(dataset, cfg), dataset, "log_likelihood")


def run_darmois(dataset: Dataset, cfg: TrainConfig, config: ExperimentConfig) -> MethodOutcome:
    z = darmois_transform(dataset.x)
    distances = [ks_uniformity(z[:, i]) for i in range(z.shape[1])]
    statistic, threshold, reject = hsic_independence(z, config.eval["hsic_permutations"], seed=cfg.seed,
                                                   block_length=config.eval["hsic_block_length"])
    extras = {"ks": distances, "hsic": {"statistic": statistic, "threshold": threshold, "reject": reject}}
    return MethodOutcome(z, dataset.s_true, "pearson", "ks_max", max(distances), extras=extras)


METHOD_RUNNERS: Dict[str, Callable[[Dataset, TrainConfig, ExperimentConfig], MethodOutcome]] = {
    "ica": run_ica,
    "pca": run_pca,
    "tcl+ica": run_tcl,
    "untrained+ica": run_untrained,
    "pcl": run_pcl,
    "gcl": run_gcl,
    "mle": run_mle,
    "darmois": run_darmois,
}


def build_mixing_network(config: ExperimentConfig, d: int, seed: int):
    mixing = config.mixing
    if mixing["kind"] == "fold":
        return build_fold_mixing(mixing["tilt"], mixing["alpha"], derive_seed(seed, "mixing"))
    return build_mixing(d, mixing["n_layers"], mixing["condition_bound"], derive_seed(seed, "mixing"),
                        mixing["alpha"])


def build_dataset(config: ExperimentConfig, seed: int) -> tuple:
    '''sources, mixing and auxiliary variables for one seed'''
    dataset = generate_sources(config.source_spec(), derive_seed(seed, "sources"))
    net = build_mixing_network(config, dataset.s_true.shape[1], seed)
    dataset = apply_mixing(net, dataset)
    if config.auxiliary is not None:
        dataset = attach_auxiliary(dataset, config.auxiliary)
    logger.debug(f"build_dataset() {dataset.as_str()}")
    return dataset, net


def signal_column_prefix(method: str) -> str:
    return "z_" + method.replace("+", "_")


def run_seed(config: ExperimentConfig, seed_index: int) -> dict:
    '''
    Everything one seed produces, nothing written. A failure inside one
    method fails only that method; a failure while building the data
    fails every method of the seed.
    '''
    config_hash = config.config_hash()
    seed = config.seed_for(seed_index)
    outcome = {"seed_index": seed_index, "seed": seed, "records": [], "report": None, "signals": None,
               "estimators": {}, "failures": []}
    report = {"config_hash": config_hash, "kind": config.kind, "seed_index": seed_index, "seed": seed, "methods": {}}

    t0 = perf_counter()
    try:
        dataset, net = build_dataset(config, seed)
    except CAUGHT_FAILURES as exp:
        logger.error(f"seed {seed_index}: data generation failed {type(exp).__name__} {exp}")
        elapsed = perf_counter() - t0
        for method in config.methods:
            outcome["records"].append(ResultRecord(config_hash, seed_index, seed, method, "failed",
                                                   error=f"{type(exp).__name__}: {exp}", wall_clock_seconds=elapsed))
        outcome["failures"].append({"seed_index": seed_index, "method": None, **error_as_dict(exp)})
        outcome["report"] = report
        return outcome

    report["dataset"] = dataset.as_dict()
    report["mixing"] = net.as_dict()
    signals = pd.DataFrame({"t": np.arange(dataset.T)})
    for i in range(dataset.s_true.shape[1]):
        signals[f"s{i + 1}"] = dataset.s_true[:, i]

    cfg = config.train_config(derive_seed(seed, "train"))
    for method in config.methods:
        t1 = perf_counter()
        try:
            result = METHOD_RUNNERS[method](dataset, cfg, config)
            evaluation = mcc(result.target, result.z, config.eval["mode"] or result.mode)
            tag = result.estimator.method if result.estimator is not None else method
            elapsed = perf_counter() - t1
            outcome["records"].append(ResultRecord(config_hash, seed_index, seed, tag, "ok", evaluation.mcc,
                                                   result.pretext_name, result.pretext_metric,
                                                   wall_clock_seconds=elapsed))
            if result.estimator is not None:
                outcome["estimators"][tag] = result.estimator
            entry = {"evaluation": evaluation.as_dict(), "extras": result.extras}
            if result.estimator is not None:
                entry["pretext"] = result.estimator.final_metrics()
            report["methods"][tag] = entry
            for j in range(result.z.shape[1]):
                signals[f"{signal_column_prefix(tag)}_{j + 1}"] = result.z[:, j]
            logger.info(f"seed {seed_index} {tag}: mcc {evaluation.mcc:.4f} ({elapsed:.1f}s)")
        except CAUGHT_FAILURES as exp:
            logger.error(f"seed {seed_index} {method}: {type(exp).__name__} {exp}")
            outcome["records"].append(ResultRecord(config_hash, seed_index, seed, method, "failed",
                                                   error=f"{type(exp).__name__}: {exp}",
                                                   wall_clock_seconds=perf_counter() - t1))
            outcome["failures"].append({"seed_index": seed_index, "method": method, **error_as_dict(exp)})

    if config.kind == "linear-bss":
        values = rotation_baseline_mcc(dataset.s_true, config.eval["rotations"], seed=derive_seed(seed, "rotations"))
        low, high = baseline_band(values)
        report["rotation_baseline"] = {"mean": float(np.mean(values)), "band": [low, high],
                                       "min": float(np.min(values)), "max": float(np.max(values))}
    outcome["report"] = report
    outcome["signals"] = signals
    return outcome


def results_frame(records: List[ResultRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([r.as_row() for r in records], columns=RESULT_COLUMNS)
    return frame.sort_values(["seed_index", "method"], kind="mergesort").reset_index(drop=True)


def default_output_dir(config: ExperimentConfig) -> str:
    return config.output_dir or os.path.join(NICA_OUTPUT_ROOT, config.name)


def collect(outcome: dict, out_dir: str) -> List[ResultRecord]:
    '''write one seed's files; returns its records with artifact paths'''
    index = outcome["seed_index"]
    artifacts = []
    if outcome["report"] is not None:
        write_json(os.path.join(out_dir, f"report_{index}.json"), outcome["report"])
        artifacts.append(f"report_{index}.json")
    if outcome["signals"] is not None:
        write_frame_csv(os.path.join(out_dir, f"signals_{index}.csv"), outcome["signals"])
        artifacts.append(f"signals_{index}.csv")
    estimator_paths = {}
    for method, result in outcome["estimators"].items():
        prefix = os.path.join("estimators", f"{signal_column_prefix(method)[2:]}_{index}")
        result.save(os.path.join(out_dir, prefix))
        estimator_paths[method] = [f"{prefix}_weights.json", f"{prefix}_z.csv", f"{prefix}_curves.csv"]
    for record in outcome["records"]:
        if record.ok:
            record.artifacts = artifacts + estimator_paths.get(record.method, [])
    return outcome["records"]


@log_timer_info
def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None, n_seeds: Optional[int] = None,
                   jobs: int = 1) -> dict:
    '''
    Run every seed and write the outputs. Returns the summary dict; a
    failed seed or method never stops the others, it marks the run
    partial.
    '''
    if n_seeds is not None:
        config = config.with_overrides(n_seeds=n_seeds)
    out_dir = ensure_dir(out_dir or default_output_dir(config))
    logger.info(f"run_experiment() kind:{config.kind} seeds:{config.n_seeds} jobs:{jobs} out:{out_dir}")

    indices = list(range(config.n_seeds))
    if jobs == 1:
        outcomes = [run_seed(config, i) for i in indices]
    else:
        outcomes = Parallel(n_jobs=jobs)(delayed(run_seed)(config, i) for i in indices)

    records = []
    failures = []
    for outcome in sorted(outcomes, key=lambda o: o["seed_index"]):
        records.extend(collect(outcome, out_dir))
        failures.extend(outcome["failures"])

    frame = results_frame(records)
    write_frame_csv(os.path.join(out_dir, "results.csv"), frame, float_format=CSV_FLOAT_FORMAT)

    failed_seeds = sorted({f["seed_index"] for f in failures})
    ok = frame[frame["status"] == "ok"]
    summary = {
        "config_hash": config.config_hash(),
        "kind": config.kind,
        "name": config.name,
        "n_seeds": config.n_seeds,
        "completed_seeds": [i for i in indices if i not in failed_seeds],
        "failed_seeds": failed_seeds,
        "partial": len(failures) > 0,
        "mean_mcc": {m: float(g["mcc"].mean()) for m, g in ok.groupby("method")},
    }
    write_json(os.path.join(out_dir, "summary.json"), summary)
    if failures:
        write_json(os.path.join(out_dir, "errors.json"), {"failures": failures})
        logger.warning(f"run_experiment() {len(failures)} failures in seeds {failed_seeds}")
    return summary


def metric_statistics(values: np.ndarray, lower_is_better: bool = False) -> dict:
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    threshold = mean + 2.0 * std if lower_is_better else mean - 2.0 * std
    return {"mean": mean, "std": std, "threshold": threshold, "n": int(len(values)), "lower_is_better": lower_is_better}


def fixtures_from_results(frame: pd.DataFrame, config: ExperimentConfig) -> dict:
    metrics = {}
    ok = frame[frame["status"] == "ok"]
    for method, group in ok.groupby("method"):
        entry = {"mcc": metric_statistics(group["mcc"].to_numpy(dtype=float))}
        names = group["pretext_name"].dropna()
        pretext = group["pretext_metric"].dropna().to_numpy(dtype=float)
        if len(names) > 0 and names.iloc[0] and len(pretext) > 0:
            name = str(names.iloc[0])
            entry[name] = metric_statistics(pretext, name in LOWER_IS_BETTER)
        metrics[method] = entry
    return {
        "version": 1,
        "config_hash": config.config_hash(),
        "kind": config.kind,
        "n_seeds": config.n_seeds,
        "seed_indices": sorted(int(i) for i in ok["seed_index"].unique()),
        "metrics": metrics,
    }


@log_timer_info
def calibrate_experiment(config: ExperimentConfig, out_dir: Optional[str] = None, n_seeds: Optional[int] = None,
                         jobs: int = 1) -> dict:
    '''
    Run the experiment and freeze thresholds (mean - 2 std over seeds) in
    fixtures.json. Refused for fewer than 5 seeds.
    '''
    if n_seeds is not None:
        config = config.with_overrides(n_seeds=n_seeds)
    if config.n_seeds < MIN_CALIBRATION_SEEDS:
        raise CalibrationError(f"ERROR: calibration needs at least {MIN_CALIBRATION_SEEDS} seeds not {config.n_seeds}")
    out_dir = ensure_dir(out_dir or default_output_dir(config))
    run_experiment(config, out_dir, jobs=jobs)
    frame = pd.read_csv(os.path.join(out_dir, "results.csv"), keep_default_na=False, na_values=[""])
    fixtures = fixtures_from_results(frame, config)
    write_json(os.path.join(out_dir, "fixtures.json"), fixtures)
    logger.info(f"calibrate_experiment() wrote fixtures for {sorted(fixtures['metrics'])}")
    return fixtures


def check_against_fixtures(frame: pd.DataFrame, fixtures: dict) -> List[str]:
    '''
    Compare the per-method mean of every calibrated metric with its frozen
    threshold. Returns one message per metric on the wrong side of it.
    '''
    failures = []
    ok = frame[frame["status"] == "ok"]
    for method, entry in fixtures["metrics"].items():
        group = ok[ok["method"] == method]
        if len(group) == 0:
            failures.append(f"{method}: no successful rows")
            continue
        for metric, stats in entry.items():
            column = "mcc" if metric == "mcc" else "pretext_metric"
            observed = float(group[column].astype(float).mean())
            if stats.get("lower_is_better", False):
                if observed > stats["threshold"]:
                    failures.append(f"{method} {metric}: mean {observed:.4f} above threshold {stats['threshold']:.4f}")
            elif observed < stats["threshold"]:
                failures.append(f"{method} {metric}: mean {observed:.4f} below threshold {stats['threshold']:.4f}")
    return failures


def load_run(out_dir: str) -> Tuple[pd.DataFrame, List[dict]]:
    '''results.csv and the report_<i>.json files of a finished run, reports in seed order'''
    frame = pd.read_csv(os.path.join(out_dir, "results.csv"), keep_default_na=False, na_values=[""])
    reports = []
    for index in sorted(int(i) for i in frame["seed_index"].unique()):
        path = os.path.join(out_dir, f"report_{index}.json")
        if os.path.isfile(path):
            reports.append(read_json(path))
    return frame, reports


def method_mcc_means(frame: pd.DataFrame) -> Dict[str, float]:
    ok = frame[frame["status"] == "ok"]
    return {m: float(g["mcc"].astype(float).mean()) for m, g in ok.groupby("method")}


def check_acceptance(frame: pd.DataFrame, reports: List[dict], targets: dict,
                     reference_means: Optional[Dict[str, float]] = None) -> List[str]:
    '''
    Check one run against fixed targets, e.g.
        {"min_mcc": {"tcl+ica": 0.8},
         "gaps": [{"better": "tcl+ica", "worse": "untrained+ica", "min_gap": 0.15}]}
    min_mcc, max_mcc and gaps apply to per-method means over seeds;
    max_pretext, rotation_band and hsic look at every seed. reference
    compares a method with the mean of another run (reference_means),
    which is skipped when those means are not given. Returns one message
    per failed target.
    '''
    unknown = sorted(set(targets) - set(TARGET_KEYS))
    if unknown:
        raise ConfigurationError(f"ERROR: unknown acceptance targets {unknown}")
    ok = frame[frame["status"] == "ok"]
    means = method_mcc_means(frame)
    failures = []

    def mean_of(method: str) -> Optional[float]:
        if method not in means:
            failures.append(f"{method}: no successful rows")
            return None
        return means[method]

    for method, floor in targets.get("min_mcc", {}).items():
        observed = mean_of(method)
        if observed is not None and observed < floor:
            failures.append(f"{method} mcc: mean {observed:.4f} below {floor}")
    for method, ceiling in targets.get("max_mcc", {}).items():
        observed = mean_of(method)
        if observed is not None and observed >= ceiling:
            failures.append(f"{method} mcc: mean {observed:.4f} not below {ceiling}")
    for method, ceiling in targets.get("max_pretext", {}).items():
        values = ok.loc[ok["method"] == method, "pretext_metric"].astype(float)
        if len(values) == 0:
            failures.append(f"{method}: no successful rows")
        elif values.max() >= ceiling:
            failures.append(f"{method} pretext: worst seed {values.max():.4f} not below {ceiling}")
    for gap in targets.get("gaps", []):
        better, worse = mean_of(gap["better"]), mean_of(gap["worse"])
        if better is not None and worse is not None and better - worse < gap["min_gap"]:
            failures.append(f"{gap['better']} - {gap['worse']}: mean gap {better - worse:.4f} below {gap['min_gap']}")

    band = targets.get("rotation_band")
    if band is not None:
        outside = 0
        for report in reports:
            entry = report["methods"].get(band["method"])
            if entry is None or "rotation_baseline" not in report:
                outside += 1
                continue
            low, high = report["rotation_baseline"]["band"]
            outside += not low <= entry["evaluation"]["mcc"] <= high
        if outside > band["max_outside"]:
            failures.append(f"{band['method']} mcc: {outside} of {len(reports)} seeds outside the rotation band")
    hsic = targets.get("hsic")
    if hsic is not None:
        # a seed without the method counts as a rejection
        rejections = sum(bool(r["methods"].get(hsic["method"], {}).get("extras", {}).get("hsic", {}).get("reject", True))
                         for r in reports)
        if rejections > hsic["max_rejections"]:
            failures.append(f"{hsic['method']} hsic: independence rejected on {rejections} of {len(reports)} seeds")

    reference = targets.get("reference")
    if reference is not None and reference_means is not None:
        observed = mean_of(reference["compare"])
        expected = reference_means.get(reference["method"])
        if expected is None:
            failures.append(f"{reference['config']} {reference['method']}: no reference mean")
        elif observed is not None and observed < expected - reference["max_gap"]:
            failures.append(f"{reference['compare']} mcc: mean {observed:.4f} more than {reference['max_gap']} "
                            f"below {reference['config']} {reference['method']} ({expected:.4f})")
    return failures
