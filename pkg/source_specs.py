import math
from typing import Callable, List, Optional

import numpy as np

from nica_errors import ConfigurationError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("source_specs")

# ============================================
# source_specs MODULE OVERVIEW
#
# Settings records for the three source families:
#   NonstationarySpec - piecewise stationary, variance modulated per segment
#   ArSpec            - stationary (possibly nonlinear) AR(1) processes
#   NonstatArSpec     - AR(1) with a piecewise constant innovation scale
# Each record validates itself on construction and round-trips through
# as_dict() / spec_from_dict() so it can live in an experiment config.

SOURCE_FAMILIES = ["nonstationary", "ar", "nonstat-ar"]
BASE_DISTRIBUTIONS = ["gaussian", "laplace"]
R_KINDS = ["linear", "tanh", "cubic"]
INNOVATION_KINDS = ["laplace", "gaussian", "uniform"]
MIN_BURN_IN = 100


def get_dict_value(input_dict: dict, key: str, default=None):
    if key not in input_dict:
        if default is None:
            raise ConfigurationError(f"ERROR: input_dict lacks key:{key}")
        return default
    return input_dict[key]


class NonstationarySpec:
    d: int
    n_segments: int
    points_per_segment: int
    lambda_min: float
    lambda_max: float
    base: str                       # gaussian (q(s) = s^2) or laplace
    lambdas: Optional[np.ndarray]   # explicit (n_segments, d) std devs, else sampled

    def __init__(self, d: int, n_segments: int, points_per_segment: int,
                 lambda_min: float = 0.2, lambda_max: float = 2.0,
                 base: str = "gaussian", lambdas=None):
        self.d = int(d)
        self.n_segments = int(n_segments)
        self.points_per_segment = int(points_per_segment)
        self.lambda_min = float(lambda_min)
        self.lambda_max = float(lambda_max)
        self.base = base
        self.lambdas = None if lambdas is None else np.asarray(lambdas, dtype=np.float64)
        self.validate_fields()

    def validate_fields(self):
        if self.d < 1:
            raise ConfigurationError(f"ERROR: d must be positive not {self.d}")
        if self.n_segments < 2:
            raise ConfigurationError(f"ERROR: n_segments must be >= 2 not {self.n_segments}")
        if self.points_per_segment < 1:
            raise ConfigurationError(f"ERROR: points_per_segment must be positive not {self.points_per_segment}")
        if not 0.0 < self.lambda_min <= self.lambda_max:
            raise ConfigurationError(f"ERROR: need 0 < lambda_min <= lambda_max, got [{self.lambda_min}, {self.lambda_max}]")
        if self.base not in BASE_DISTRIBUTIONS:
            raise ConfigurationError(f"ERROR: base '{self.base}' not in {BASE_DISTRIBUTIONS}")
        if self.lambdas is not None:
            if self.lambdas.shape != (self.n_segments, self.d):
                raise ConfigurationError(f"ERROR: lambdas shape {self.lambdas.shape} != ({self.n_segments}, {self.d})")
            if not np.all(self.lambdas > 0):
                raise ConfigurationError("ERROR: lambdas must be strictly positive")

    @property
    def T(self) -> int:
        return self.n_segments * self.points_per_segment

    def as_dict(self) -> dict:
        return {
            "family": "nonstationary",
            "d": self.d,
            "n_segments": self.n_segments,
            "points_per_segment": self.points_per_segment,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "base": self.base,
            "lambdas": None if self.lambdas is None else self.lambdas.tolist()
        }


class ArSpec:
    d: int
    T: int
    r_choices: List[dict]   # one per component, e.g. {"kind": "linear", "rho": 0.8}
    innovation: dict        # e.g. {"kind": "laplace", "scale": 1.0}
    burn_in: int

    def __init__(self, d: int, T: int, r_choices, innovation: dict = None, burn_in: int = MIN_BURN_IN):
        self.d = int(d)
        self.T = int(T)
        if isinstance(r_choices, dict):
            r_choices = [r_choices] * self.d
        self.r_choices = [dict(r) for r in r_choices]
        self.innovation = dict(innovation or {"kind": "laplace", "scale": 1.0})
        self.burn_in = int(burn_in)
        self.validate_fields()

    def validate_fields(self):
        if self.d < 1 or self.T < 2:
            raise ConfigurationError(f"ERROR: need d >= 1 and T >= 2, got d={self.d} T={self.T}")
        if len(self.r_choices) != self.d:
            raise ConfigurationError(f"ERROR: {len(self.r_choices)} r_choices for {self.d} components")
        if self.burn_in < MIN_BURN_IN:
            raise ConfigurationError(f"ERROR: burn_in must be >= {MIN_BURN_IN} not {self.burn_in}")
        for i, r in enumerate(self.r_choices):
            kind = r.get("kind")
            if kind not in R_KINDS:
                raise ConfigurationError(f"ERROR: component {i} r kind '{kind}' not in {R_KINDS}")
            if kind in ("linear", "cubic") and not abs(r.get("rho", 0.8)) < 1.0:
                raise ConfigurationError(f"ERROR: component {i} needs |rho| < 1 for a contraction, got {r['rho']}")
            if kind == "cubic" and r.get("c", 0.005) < 0:
                raise ConfigurationError(f"ERROR: component {i} cubic coefficient must be >= 0")
        kind = self.innovation.get("kind")
        if kind not in INNOVATION_KINDS:
            raise ConfigurationError(f"ERROR: innovation kind '{kind}' not in {INNOVATION_KINDS}")
        if self.innovation_scale() <= 0:
            raise ConfigurationError("ERROR: innovation scale must be positive")

    def innovation_scale(self) -> float:
        kind = self.innovation["kind"]
        if kind == "gaussian":
            return float(self.innovation.get("sigma", 1.0))
        if kind == "uniform":
            # half-width; sqrt(3) gives unit variance
            return float(self.innovation.get("scale", math.sqrt(3.0)))
        return float(self.innovation.get("scale", 1.0))

    def r_function(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        r = self.r_choices[i]
        if r["kind"] == "linear":
            rho = float(r.get("rho", 0.8))
            return lambda s: rho * s
        if r["kind"] == "tanh":
            gain = float(r.get("gain", 0.9))
            return lambda s: gain * np.tanh(s)
        rho = float(r.get("rho", 0.8))
        c = float(r.get("c", 0.005))
        return lambda s: rho * s - c * s ** 3

    def sample_innovations(self, rng: np.random.Generator, shape) -> np.ndarray:
        kind = self.innovation["kind"]
        scale = self.innovation_scale()
        if kind == "laplace":
            return rng.laplace(0.0, scale, size=shape)
        if kind == "gaussian":
            return rng.normal(0.0, scale, size=shape)
        return rng.uniform(-scale, scale, size=shape)

    def as_dict(self) -> dict:
        return {
            "family": "ar",
            "d": self.d,
            "T": self.T,
            "r_choices": self.r_choices,
            "innovation": self.innovation,
            "burn_in": self.burn_in
        }


class NonstatArSpec(ArSpec):
    segment_length: int
    sigma_min: float
    sigma_max: float
    sigmas: Optional[np.ndarray]    # explicit (n_segments, d) innovation scales, else sampled

    def __init__(self, d: int, T: int, r_choices, innovation: dict = None, burn_in: int = MIN_BURN_IN,
                 segment_length: int = 256, sigma_min: float = 0.5, sigma_max: float = 2.0, sigmas=None):
        self.segment_length = int(segment_length)
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.sigmas = None if sigmas is None else np.asarray(sigmas, dtype=np.float64)
        super().__init__(d, T, r_choices, innovation, burn_in)

    def validate_fields(self):
        super().validate_fields()
        if self.segment_length < 1:
            raise ConfigurationError(f"ERROR: segment_length must be positive not {self.segment_length}")
        if not 0.0 < self.sigma_min <= self.sigma_max:
            raise ConfigurationError(f"ERROR: need 0 < sigma_min <= sigma_max, got [{self.sigma_min}, {self.sigma_max}]")
        if self.sigmas is not None:
            if self.sigmas.shape != (self.n_segments, self.d):
                raise ConfigurationError(f"ERROR: sigmas shape {self.sigmas.shape} != ({self.n_segments}, {self.d})")
            if not np.all(self.sigmas > 0):
                raise ConfigurationError("ERROR: sigmas must be strictly positive")

    @property
    def n_segments(self) -> int:
        return int(math.ceil(self.T / self.segment_length))

    def as_dict(self) -> dict:
        output_dict = super().as_dict()
        output_dict.update({
            "family": "nonstat-ar",
            "segment_length": self.segment_length,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "sigmas": None if self.sigmas is None else self.sigmas.tolist()
        })
        return output_dict


def spec_from_dict(input_dict: dict):
    '''build the spec record named by input_dict["family"]'''
    family = get_dict_value(input_dict, "family")
    kwargs = {k: v for k, v in input_dict.items() if k != "family" and v is not None}
    try:
        if family == "nonstationary":
            return NonstationarySpec(**kwargs)
        if family == "ar":
            return ArSpec(**kwargs)
        if family == "nonstat-ar":
            return NonstatArSpec(**kwargs)
    except TypeError as exp:
        raise ConfigurationError(f"ERROR: bad {family} spec - {exp}")
    raise ConfigurationError(f"ERROR: unknown source family '{family}', expected one of {SOURCE_FAMILIES}")
