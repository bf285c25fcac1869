import argparse
import json
import os
import sys
from typing import List

from env import NICA_OUTPUT_ROOT
from experiment_config import ExperimentConfig
from experiment_service import calibrate_experiment, default_output_dir, run_experiment
from file_utils import write_json
from logger_utils import set_all_info_loggers_to_debug_level
from nica_errors import CalibrationError, ValidationError, error_as_dict

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("run_experiments")

VERBS = ["run", "calibrate", "validate"]

# exit status
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_PARTIAL = 2


def parse_args(args: List[str]) -> argparse.Namespace:

    example = """
    python run_experiments.py validate configs/pcl_pipeline.json
    python run_experiments.py run configs/pcl_pipeline.json --seeds 3 --jobs 3
    python run_experiments.py calibrate configs/tcl_pipeline.json --seeds 10 --out tests/fixtures/tcl_pipeline
    """
    parser = argparse.ArgumentParser(
        description=f"Run nonlinear ICA experiments. Outputs go under '{NICA_OUTPUT_ROOT}/<name>' unless --out is given.",
        usage=f"--help/-h {{{','.join(VERBS)}}} <config.json> [--out <dir>] [--seeds <n>] [--jobs <k>] [--verbose]\n"
              f"example: {example}")
    parser.add_argument('verb', choices=VERBS,
                        help='run the experiment, calibrate thresholds or only validate the config')
    parser.add_argument('config',
                        help='an experiment config json file')
    parser.add_argument('--out', metavar="<dir>",
                        help='an optional output directory')
    parser.add_argument('--seeds', metavar="<n>", type=int,
                        help='an optional number of seeds, overrides n_seeds')
    parser.add_argument('--jobs', metavar="<k>", type=int, default=1,
                        help='number of seeds run in parallel (default 1)')
    parser.add_argument("--verbose", "-v", help="increase output verbosity",
                        action="store_true")
    return parser.parse_args(args)


def report_error(exp: Exception, out_dir: str = None) -> dict:
    '''print the machine-readable error report, and keep it in out_dir/errors.json'''
    error = error_as_dict(exp)
    print(json.dumps(error, indent=2, sort_keys=True))
    if out_dir is not None:
        write_json(os.path.join(out_dir, "errors.json"), error)
    return error


def run_experiments_cli(argv: List[str]) -> int:
    '''
    call run_experiment() / calibrate_experiment() using command line
    arguments; returns the process exit status
    '''
    args = vars(parse_args(argv[1:]))
    verb = args['verb']
    config_path = args['config']
    out_dir = args['out']
    n_seeds = args['seeds']
    jobs = args['jobs']

    if args['verbose']:
        set_all_info_loggers_to_debug_level()

    logger.debug(f"verb: {verb}")
    logger.debug(f"config_path: {config_path}")
    logger.debug(f"out_dir: {out_dir}")
    logger.debug(f"n_seeds: {n_seeds}")
    logger.debug(f"jobs: {jobs}")

    try:
        config = ExperimentConfig.load(config_path)
        if n_seeds is not None:
            config = config.with_overrides(n_seeds=n_seeds)
    except ValidationError as exp:
        logger.error(f"{config_path}: {len(exp.violations)} violations")
        report_error(exp, out_dir)
        return EXIT_INVALID

    if verb == "validate":
        print(f"valid {config.kind} config, hash {config.config_hash()}")
        return EXIT_OK

    out_dir = out_dir or default_output_dir(config)
    if verb == "calibrate":
        try:
            fixtures = calibrate_experiment(config, out_dir, jobs=jobs)
        except CalibrationError as exp:
            logger.error(str(exp))
            report_error(exp, out_dir)
            return EXIT_INVALID
        print(f"wrote {os.path.join(out_dir, 'fixtures.json')} for {sorted(fixtures['metrics'])}")
        return EXIT_OK

    summary = run_experiment(config, out_dir, jobs=jobs)
    for method, value in sorted(summary["mean_mcc"].items()):
        print(f" {method}\tmean mcc {value:.4f}")
    if summary["partial"]:
        print(f"partial run: failed seeds {summary['failed_seeds']}, see {os.path.join(out_dir, 'errors.json')}")
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run_experiments_cli(sys.argv))
