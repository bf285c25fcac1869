from typing import Callable, List, Sequence

import numpy as np

from dataset import Dataset
from logger_utils import log_timer_info
from nica_errors import ConfigurationError, ContractError, InstabilityError
from source_specs import ArSpec, NonstatArSpec, NonstationarySpec

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("source_service")

# ============================================
# source_service MODULE OVERVIEW
#
# Every generator is a pure function of (spec, seed). The seed is split
# into independent child streams:
#   stream 0 - the samples themselves (base draws or AR innovations)
#   stream 1 - the per-segment modulation (lambda or sigma)
# so an AR run and a nonstationary-innovation AR run with sigma == 1 draw
# exactly the same innovations.
#
# Generated datasets carry x == s_true; mixing.apply_mixing() replaces x.

DIVERGENCE_LIMIT = 1e6
AUX_MODES = ["segment-label", "lagged-observation"]


def seed_streams(seed: int, n_streams: int) -> List[np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(n_streams)
    return [np.random.default_rng(child) for child in children]


def log_uniform(rng: np.random.Generator, low: float, high: float, shape) -> np.ndarray:
    return np.exp(rng.uniform(np.log(low), np.log(high), size=shape))


@log_timer_info
def generate_nonstationary_sources(spec: NonstationarySpec, seed: int) -> Dataset:
    '''
    Piecewise stationary sources: within segment tau, component i is a
    zero-mean draw from the base distribution with standard deviation
    lambda_i(tau). Segments are contiguous and equally long.
    '''
    sample_rng, modulation_rng = seed_streams(seed, 2)
    if spec.lambdas is not None:
        lambdas = spec.lambdas
    else:
        lambdas = log_uniform(modulation_rng, spec.lambda_min, spec.lambda_max, (spec.n_segments, spec.d))

    shape = (spec.T, spec.d)
    if spec.base == "gaussian":
        base = sample_rng.standard_normal(shape)
    else:
        # unit variance laplace
        base = sample_rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=shape)

    segments = np.repeat(np.arange(1, spec.n_segments + 1), spec.points_per_segment)
    s = base * lambdas[segments - 1]

    spec_dict = spec.as_dict()
    spec_dict["lambdas"] = lambdas.tolist()
    logger.debug(f"generate_nonstationary_sources() seed:{seed} T:{spec.T} d:{spec.d} n_segments:{spec.n_segments}")
    return Dataset(x=s.copy(), s_true=s, segments=segments, seed=seed, spec=spec_dict)


def run_ar_recursion(r_functions: Sequence[Callable], innovations: np.ndarray) -> np.ndarray:
    '''
    s_i(t) = r_i(s_i(t-1)) + innovations[t, i] from s(-1) = 0.
    Raises InstabilityError naming the component when |s| exceeds the
    divergence limit.
    '''
    total, d = innovations.shape
    s = np.zeros((total, d))
    for i in range(d):
        r = r_functions[i]
        prev = 0.0
        column = innovations[:, i]
        out = s[:, i]
        for t in range(total):
            prev = float(r(prev)) + column[t]
            if not abs(prev) <= DIVERGENCE_LIMIT:
                raise InstabilityError(f"ERROR: component {i + 1} diverged at step {t} (|s| > {DIVERGENCE_LIMIT:g})")
            out[t] = prev
    return s


@log_timer_info
def generate_ar_sources(spec: ArSpec, seed: int) -> Dataset:
    '''
    Independent AR(1) processes s_i(t) = r_i(s_i(t-1)) + n_i(t). The first
    burn_in steps are discarded.
    '''
    innovation_rng, _ = seed_streams(seed, 2)
    total = spec.burn_in + spec.T
    innovations = spec.sample_innovations(innovation_rng, (total, spec.d))
    r_functions = [spec.r_function(i) for i in range(spec.d)]
    s = run_ar_recursion(r_functions, innovations)[spec.burn_in:]
    logger.debug(f"generate_ar_sources() seed:{seed} T:{spec.T} d:{spec.d}")
    return Dataset(x=s.copy(), s_true=s, seed=seed, spec=spec.as_dict())


@log_timer_info
def generate_nonstat_ar_sources(spec: NonstatArSpec, seed: int) -> Dataset:
    '''
    AR(1) processes with a nonstationary innovation scale:
    s_i(t) = r_i(s_i(t-1)) + sigma_i(t) n_i(t), sigma piecewise constant
    over segments of segment_length steps. The burn-in uses the first
    segment's scale. segments records the sigma segmentation.
    '''
    innovation_rng, modulation_rng = seed_streams(seed, 2)
    total = spec.burn_in + spec.T
    innovations = spec.sample_innovations(innovation_rng, (total, spec.d))
    if spec.sigmas is not None:
        sigmas = spec.sigmas
    else:
        sigmas = log_uniform(modulation_rng, spec.sigma_min, spec.sigma_max, (spec.n_segments, spec.d))

    segments = np.arange(spec.T) // spec.segment_length + 1
    scale = np.vstack([np.repeat(sigmas[:1], spec.burn_in, axis=0), sigmas[segments - 1]])
    r_functions = [spec.r_function(i) for i in range(spec.d)]
    s = run_ar_recursion(r_functions, innovations * scale)[spec.burn_in:]

    spec_dict = spec.as_dict()
    spec_dict["sigmas"] = sigmas.tolist()
    logger.debug(f"generate_nonstat_ar_sources() seed:{seed} T:{spec.T} d:{spec.d} n_segments:{spec.n_segments}")
    return Dataset(x=s.copy(), s_true=s, segments=segments, seed=seed, spec=spec_dict)


def generate_sources(spec, seed: int) -> Dataset:
    '''dispatch on the spec record type'''
    if isinstance(spec, NonstatArSpec):
        return generate_nonstat_ar_sources(spec, seed)
    if isinstance(spec, ArSpec):
        return generate_ar_sources(spec, seed)
    if isinstance(spec, NonstationarySpec):
        return generate_nonstationary_sources(spec, seed)
    raise ConfigurationError(f"ERROR: no generator for {type(spec).__name__}")


def attach_auxiliary(dataset: Dataset, mode: str) -> Dataset:
    '''
    segment-label:      aux = one-hot segment label
    lagged-observation: aux(t) = x(t-1), the first time point is dropped
    '''
    if mode == "segment-label":
        if dataset.segments is None:
            raise ContractError("ERROR: segment-label auxiliary needs segment labels")
        one_hot = np.eye(dataset.n_segments)[dataset.segments - 1]
        return dataset.replace(aux=one_hot)
    if mode == "lagged-observation":
        if dataset.T < 2:
            raise ContractError("ERROR: lagged-observation auxiliary needs T >= 2")
        lagged = dataset.x[:-1]
        return dataset.take(np.arange(1, dataset.T)).replace(aux=lagged)
    raise ContractError(f"ERROR: unknown auxiliary mode '{mode}', expected one of {AUX_MODES}")
