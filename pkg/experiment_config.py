import hashlib
import json
from typing import List, Optional

import jsonschema

from file_utils import read_json
from mixing import DEFAULT_FOLD_TILT, MIXING_KINDS
from mlp import ACTIVATIONS
from nica_errors import ConfigurationError, ValidationError
from source_service import AUX_MODES
from source_specs import SOURCE_FAMILIES, spec_from_dict
from train_config import MLE_DENSITIES, TrainConfig

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("experiment_config")

# ============================================
# experiment_config MODULE OVERVIEW
#
# An experiment is one JSON document, e.g.
#   {
#     "version": 1,
#     "kind": "pcl-pipeline",
#     "sources": {"family": "ar", "d": 4, "T": 16384, "r_choices": {"kind": "tanh"}},
#     "mixing": {"n_layers": 2, "condition_bound": 10},
#     "train": {"hidden_widths": [32, 32], "epochs": 100},
#     "n_seeds": 5
#   }
# Unknown keys are errors and every violation is reported at once.

CONFIG_VERSION = 1
EXPERIMENT_KINDS = ["linear-bss", "tcl-pipeline", "pcl-pipeline", "gcl-pipeline", "mle-pipeline",
                    "darmois-demo", "comparison-grid"]
GRID_METHODS = ["ica", "pca", "tcl+ica", "untrained+ica", "pcl", "gcl", "mle", "darmois"]
DEFAULT_METHODS = {
    "linear-bss": ["ica", "pca"],
    "tcl-pipeline": ["tcl+ica", "untrained+ica", "pca"],
    "pcl-pipeline": ["pcl", "pca"],
    "gcl-pipeline": ["gcl", "pca"],
    "mle-pipeline": ["mle", "ica", "pca"],
    "darmois-demo": ["darmois", "ica"],
}
SEGMENTED_FAMILIES = ["nonstationary", "nonstat-ar"]
CORRELATION_MODES = ["pearson", "spearman"]
DEFAULT_MIXING = {"kind": "random", "n_layers": 2, "condition_bound": 10.0, "alpha": 0.2, "tilt": DEFAULT_FOLD_TILT}
DEFAULT_EVAL = {"mode": None, "hsic_permutations": 200, "hsic_block_length": 1, "rotations": 200}
HASH_EXCLUDED = ["output_dir", "n_seeds"]

POSITIVE_INT = {"type": "integer", "minimum": 1}
POSITIVE_NUMBER = {"type": "number", "exclusiveMinimum": 0}
MATRIX = {"type": "array", "items": {"type": "array", "items": POSITIVE_NUMBER}}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "kind", "sources", "n_seeds"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "kind": {"enum": EXPERIMENT_KINDS},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "sources": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "d"],
            "properties": {
                "family": {"enum": SOURCE_FAMILIES},
                "d": POSITIVE_INT,
                "n_segments": {"type": "integer", "minimum": 2},
                "points_per_segment": POSITIVE_INT,
                "lambda_min": POSITIVE_NUMBER,
                "lambda_max": POSITIVE_NUMBER,
                "base": {"enum": ["gaussian", "laplace"]},
                "lambdas": MATRIX,
                "T": {"type": "integer", "minimum": 2},
                "r_choices": {"type": ["object", "array"]},
                "innovation": {"type": "object"},
                "burn_in": {"type": "integer", "minimum": 100},
                "segment_length": POSITIVE_INT,
                "sigma_min": POSITIVE_NUMBER,
                "sigma_max": POSITIVE_NUMBER,
                "sigmas": MATRIX,
            },
        },
        "mixing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": MIXING_KINDS},
                "n_layers": {"type": "integer", "minimum": 0},
                "condition_bound": {"type": "number", "minimum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "tilt": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "auxiliary": {"enum": AUX_MODES},
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden_widths": {"type": "array", "items": POSITIVE_INT},
                "output_dim": POSITIVE_INT,
                "epochs": POSITIVE_INT,
                "batch_size": POSITIVE_INT,
                "learning_rate": POSITIVE_NUMBER,
                "patience": POSITIVE_INT,
                "hidden_activation": {"enum": ACTIVATIONS},
                "output_activation": {"enum": ACTIVATIONS},
                "psi_hidden": POSITIVE_INT,
                "density": {"enum": MLE_DENSITIES},
                "mle_layers": POSITIVE_INT,
                "holdout_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": CORRELATION_MODES},
                "hsic_permutations": {"type": "integer", "minimum": 200},
                "hsic_block_length": POSITIVE_INT,
                "rotations": POSITIVE_INT,
            },
        },
        "methods": {"type": "array", "items": {"enum": GRID_METHODS}, "minItems": 1, "uniqueItems": True},
        "n_seeds": POSITIVE_INT,
        "master_seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}


def derive_seed(master_seed: int, key) -> int:
    '''63-bit seed from sha256 of (master seed, key)'''
    digest = hashlib.sha256(f"{master_seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & (2 ** 63 - 1)


def schema_violations(config_dict: dict) -> List[str]:
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    violations = []
    for error in sorted(validator.iter_errors(config_dict), key=lambda e: [str(p) for p in e.absolute_path]):
        path = ".".join(str(p) for p in error.absolute_path) or "(root)"
        violations.append(f"{path}: {error.message}")
    return violations


class ExperimentConfig:
    kind: str
    name: str
    sources: dict           # as given, the generator record is built by source_spec()
    mixing: dict
    auxiliary: Optional[str]
    train: dict
    eval: dict
    methods: List[str]
    n_seeds: int
    master_seed: int
    output_dir: Optional[str]

    def __init__(self, config_dict: dict):
        violations = schema_violations(config_dict)
        if violations:
            raise ValidationError(violations)
        self.kind = config_dict["kind"]
        self.name = config_dict.get("name", self.kind)
        self.sources = dict(config_dict["sources"])
        self.mixing = {**DEFAULT_MIXING, **config_dict.get("mixing", {})}
        self.auxiliary = config_dict.get("auxiliary")
        self.train = dict(config_dict.get("train", {}))
        self.eval = {**DEFAULT_EVAL, **config_dict.get("eval", {})}
        self.methods = list(config_dict.get("methods", DEFAULT_METHODS.get(self.kind, [])))
        self.n_seeds = int(config_dict["n_seeds"])
        self.master_seed = int(config_dict.get("master_seed", 0))
        self.output_dir = config_dict.get("output_dir")
        self.validate_fields()

    def validate_fields(self):
        '''cross-field checks, all violations collected'''
        violations = []
        d = self.sources["d"]
        try:
            self.source_spec()
        except ConfigurationError as exp:
            violations.append(f"sources: {exp}")
        try:
            cfg = self.train_config(0)
            if "mle" in self.methods and cfg.output_dim not in (None, d):
                violations.append(f"train.output_dim: maximum likelihood needs output_dim == d ({d})")
        except ConfigurationError as exp:
            violations.append(f"train: {exp}")
        if self.kind == "comparison-grid" and not self.methods:
            violations.append("methods: comparison-grid needs a methods list")
        if "gcl" in self.methods and self.auxiliary is None:
            violations.append("auxiliary: gcl needs an auxiliary mode")
        if self.auxiliary == "segment-label" and self.sources["family"] not in SEGMENTED_FAMILIES:
            violations.append(f"auxiliary: segment-label needs a segmented source family {SEGMENTED_FAMILIES}")
        segmented = [m for m in self.methods if m in ("tcl+ica", "untrained+ica")]
        if segmented and self.sources["family"] not in SEGMENTED_FAMILIES:
            violations.append(f"methods: {segmented} need a segmented source family {SEGMENTED_FAMILIES}")
        if "darmois" in self.methods and d != 2:
            violations.append(f"sources.d: darmois needs d = 2 not {d}")
        if self.mixing["kind"] == "fold" and d != 2:
            violations.append(f"mixing.kind: fold mixing needs d = 2 not {d}")
        if violations:
            raise ValidationError(violations)

    def source_spec(self):
        return spec_from_dict(self.sources)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)

    def seed_for(self, seed_index: int) -> int:
        return derive_seed(self.master_seed, seed_index)

    def with_overrides(self, n_seeds: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        config_dict = self.as_dict()
        if n_seeds is not None:
            config_dict["n_seeds"] = int(n_seeds)
        if output_dir is not None:
            config_dict["output_dir"] = output_dir
        return ExperimentConfig(config_dict)

    def as_dict(self) -> dict:
        '''normalized form with defaults filled in'''
        config_dict = {
            "version": CONFIG_VERSION,
            "kind": self.kind,
            "name": self.name,
            "sources": self.sources,
            "mixing": self.mixing,
            "train": self.train,
            "eval": {k: v for k, v in self.eval.items() if v is not None},
            "methods": self.methods,
            "n_seeds": self.n_seeds,
            "master_seed": self.master_seed,
        }
        if self.auxiliary is not None:
            config_dict["auxiliary"] = self.auxiliary
        if self.output_dir is not None:
            config_dict["output_dir"] = self.output_dir
        return config_dict

    def config_hash(self) -> str:
        '''sha256 of the canonical json, output_dir and n_seeds left out'''
        hashed = {k: v for k, v in self.as_dict().items() if k not in HASH_EXCLUDED}
        canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            config_dict = read_json(path)
        except FileNotFoundError:
            raise ValidationError([f"(root): config file not found: {path}"])
        except json.JSONDecodeError as exp:
            raise ValidationError([f"(root): not valid JSON - {exp}"])
        if not isinstance(config_dict, dict):
            raise ValidationError(["(root): config must be a JSON object"])
        return cls(config_dict)


RESULT_COLUMNS = ["config_hash", "seed_index", "seed", "method", "status", "mcc", "pretext_name",
                  "pretext_metric", "error", "artifacts", "wall_clock_seconds"]


class ResultRecord:
    '''one (seed, method) row of results.csv'''
    config_hash: str
    seed_index: int
    seed: int
    method: str
    status: str                 # ok or failed
    mcc: Optional[float]
    pretext_name: str
    pretext_metric: Optional[float]
    error: str
    artifacts: List[str]        # paths relative to the output directory
    wall_clock_seconds: float

    def __init__(self, config_hash: str, seed_index: int, seed: int, method: str, status: str = "ok",
                 mcc: Optional[float] = None, pretext_name: str = "", pretext_metric: Optional[float] = None,
                 error: str = "", artifacts: List[str] = None, wall_clock_seconds: float = 0.0):
        self.config_hash = config_hash
        self.seed_index = int(seed_index)
        self.seed = int(seed)
        self.method = method
        self.status = status
        self.mcc = None if mcc is None else float(mcc)
        self.pretext_name = pretext_name
        self.pretext_metric = None if pretext_metric is None else float(pretext_metric)
        self.error = error
        self.artifacts = list(artifacts or [])
        self.wall_clock_seconds = float(wall_clock_seconds)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def as_row(self) -> dict:
        row = {column: getattr(self, column) for column in RESULT_COLUMNS}
        row["artifacts"] = ";".join(self.artifacts)
        return row
