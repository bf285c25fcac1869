from typing import List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import pdist, squareform
from scipy.stats import ortho_group

from autodiff import Tensor, as_tensor
from nica_errors import ContractError, DegenerateInputError, DimensionError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("eval_service")

# ============================================
# eval_service MODULE OVERVIEW
#
# mcc()                   matched |correlation| between true and estimated
#                         components, Hungarian assignment, invariant to
#                         order, sign and scale (spearman: any monotone map)
# hsic_independence()     gaussian kernel HSIC with a permutation null
# ks_uniformity()         Kolmogorov-Smirnov distance to uniform(0, 1)
# rotation_baseline_mcc() mcc of randomly rotated whitened sources, the
#                         reference for unidentifiable (gaussian) cases

CORRELATION_MODES = ["pearson", "spearman"]
DEFAULT_PERMUTATIONS = 200
HSIC_MIN_T = 500
HSIC_MAX_SAMPLES = 2000


class EvaluationReport:
    correlation_matrix: Tensor          # (d, d') |correlation| true x estimated
    assignment: List[Tuple[int, int]]   # (true index, estimated index) pairs
    mcc: float
    per_component: List[float]          # matched |correlation| per assigned pair
    mode: str
    independence: Optional[dict]        # statistic, threshold, reject
    uniformity: Optional[List[float]]   # KS distance per column

    def __init__(self, correlation_matrix, assignment, mcc: float, per_component, mode: str,
                 independence: dict = None, uniformity=None):
        self.correlation_matrix = np.asarray(correlation_matrix, dtype=np.float64)
        self.assignment = [(int(i), int(j)) for i, j in assignment]
        self.mcc = float(mcc)
        self.per_component = [float(v) for v in per_component]
        self.mode = mode
        self.independence = independence
        self.uniformity = None if uniformity is None else [float(v) for v in uniformity]
        self.validate_fields()

    def validate_fields(self):
        if not 0.0 <= self.mcc <= 1.0:
            raise ContractError(f"ERROR: mcc {self.mcc} outside [0, 1]")
        estimated = [j for _, j in self.assignment]
        true = [i for i, _ in self.assignment]
        if len(set(estimated)) != len(estimated) or len(set(true)) != len(true):
            raise ContractError("ERROR: assignment is not injective")

    def with_independence(self, statistic: float, threshold: float, reject: bool) -> "EvaluationReport":
        self.independence = {"statistic": float(statistic), "threshold": float(threshold), "reject": bool(reject)}
        return self

    def with_uniformity(self, distances) -> "EvaluationReport":
        self.uniformity = [float(v) for v in distances]
        return self

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mcc": self.mcc,
            "per_component": self.per_component,
            "assignment": [list(pair) for pair in self.assignment],
            "correlation_matrix": self.correlation_matrix.tolist(),
            "independence": self.independence,
            "uniformity": self.uniformity
        }

    def summary_row(self) -> dict:
        '''flat one-line summary, e.g. for a csv row'''
        row = {"mode": self.mode, "mcc": self.mcc}
        if self.independence is not None:
            row.update({f"hsic_{k}": v for k, v in self.independence.items()})
        if self.uniformity is not None:
            row.update({f"ks_{i + 1}": v for i, v in enumerate(self.uniformity)})
        return row


def check_columns(values: Tensor, what: str):
    for i in range(values.shape[1]):
        if np.ptp(values[:, i]) == 0:
            raise DegenerateInputError(f"ERROR: {what} column {i + 1} has zero variance")


def abs_correlation_matrix(s_true: Tensor, z: Tensor, mode: str = "pearson") -> Tensor:
    '''(d, d') matrix of |corr(s_i, z_j)|'''
    if mode not in CORRELATION_MODES:
        raise ContractError(f"ERROR: unknown correlation mode '{mode}', expected one of {CORRELATION_MODES}")
    if mode == "spearman":
        s_true = stats.rankdata(s_true, axis=0)
        z = stats.rankdata(z, axis=0)
    a = (s_true - s_true.mean(axis=0)) / s_true.std(axis=0)
    b = (z - z.mean(axis=0)) / z.std(axis=0)
    return np.clip(np.abs(a.T @ b) / a.shape[0], 0.0, 1.0)


def mcc(s_true, z, mode: str = "pearson") -> EvaluationReport:
    '''
    Mean matched |correlation| under a maximum-weight assignment. With
    d' < d only the best-matched subset of true components is scored.
    '''
    s_true = as_tensor(s_true, "s_true")
    z = as_tensor(z, "z")
    if s_true.shape[0] != z.shape[0]:
        raise DimensionError(f"ERROR: s_true has {s_true.shape[0]} time points, z has {z.shape[0]}")
    if z.shape[1] > s_true.shape[1]:
        raise DimensionError(f"ERROR: z has {z.shape[1]} components, more than the {s_true.shape[1]} sources")
    check_columns(s_true, "s_true")
    check_columns(z, "z")
    corr = abs_correlation_matrix(s_true, z, mode)
    rows, cols = linear_sum_assignment(corr, maximize=True)
    matched = corr[rows, cols]
    return EvaluationReport(corr, list(zip(rows, cols)), float(np.mean(matched)), matched, mode)


def gaussian_gram(column: Tensor) -> Tensor:
    '''gaussian kernel matrix with the median pairwise distance as width'''
    distances = pdist(column.reshape(-1, 1))
    positive = distances[distances > 0]
    width = np.median(positive) if positive.size else 1.0
    return np.exp(-squareform(distances) ** 2 / (2.0 * width ** 2))


def centered(gram: Tensor) -> Tensor:
    return gram - gram.mean(axis=0, keepdims=True) - gram.mean(axis=1, keepdims=True) + gram.mean()


def even_subsample(n: int, max_samples: int) -> np.ndarray:
    if n <= max_samples:
        return np.arange(n)
    return np.linspace(0, n - 1, max_samples).round().astype(int)


def block_permutation(rng: np.random.Generator, n: int, block_length: int) -> np.ndarray:
    '''
    Shuffle the order of contiguous blocks of block_length rows (the last
    block may be shorter). block_length = 1 is rng.permutation(n).
    '''
    order = rng.permutation(-(-n // block_length))
    if block_length == 1:
        return order
    starts = order * block_length
    return np.concatenate([np.arange(start, min(start + block_length, n)) for start in starts])


def hsic_independence(z, n_permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0, level: float = 0.05,
                      max_samples: int = HSIC_MAX_SAMPLES, block_length: int = 1) -> Tuple[float, float, bool]:
    '''
    Biased HSIC of the two columns of z and the (1 - level) quantile of
    its permutation null. Returns (statistic, threshold, reject). Each
    permutation draws from its own SeedSequence child, so the null does
    not depend on evaluation order. Longer inputs are evenly subsampled
    to max_samples points.

    For time series the null shuffles contiguous blocks of block_length
    subsampled rows, keeping the serial dependence inside each column.
    '''
    z = as_tensor(z, "z")
    T, d = z.shape
    if d != 2:
        raise DimensionError(f"ERROR: hsic_independence compares 2 columns not {d}")
    if T < HSIC_MIN_T:
        raise ContractError(f"ERROR: hsic_independence needs T >= {HSIC_MIN_T} not {T}")
    if n_permutations < DEFAULT_PERMUTATIONS:
        raise ContractError(f"ERROR: need at least {DEFAULT_PERMUTATIONS} permutations not {n_permutations}")
    check_columns(z, "z")

    rows = even_subsample(T, max_samples)
    n = len(rows)
    if not 1 <= block_length <= n // 2:
        raise ContractError(f"ERROR: block_length must be in [1, {n // 2}] not {block_length}")
    K = centered(gaussian_gram(z[rows, 0]))
    L = gaussian_gram(z[rows, 1])
    statistic = float(np.sum(K * L) / n ** 2)

    null = np.empty(n_permutations)
    for k, child in enumerate(np.random.SeedSequence(int(seed)).spawn(n_permutations)):
        perm = block_permutation(np.random.default_rng(child), n, block_length)
        null[k] = np.sum(K * L[np.ix_(perm, perm)]) / n ** 2
    threshold = float(np.quantile(null, 1.0 - level))
    reject = statistic > threshold
    logger.debug(f"hsic_independence() n:{n} block_length:{block_length} statistic:{statistic:.6g} "
                 f"threshold:{threshold:.6g} reject:{reject}")
    return statistic, threshold, bool(reject)


def ks_uniformity(column) -> float:
    '''sup distance between the empirical CDF and the uniform(0, 1) CDF'''
    column = np.asarray(column, dtype=np.float64).ravel()
    if column.size == 0:
        raise DimensionError("ERROR: ks_uniformity needs a nonempty column")
    if np.any(~np.isfinite(column)) or column.min() < 0.0 or column.max() > 1.0:
        raise ContractError("ERROR: ks_uniformity values must lie in [0, 1]")
    return float(stats.kstest(column, "uniform").statistic)


def rotation_baseline_mcc(s_true, n_rotations: int = 200, seed: int = 0, mode: str = "pearson") -> np.ndarray:
    '''
    mcc against s_true of its whitened version turned by Haar random
    rotations: what an estimator that only whitens can be expected to
    score when the sources are not identifiable.
    '''
    s_true = as_tensor(s_true, "s_true")
    d = s_true.shape[1]
    centered_s = s_true - s_true.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(np.cov(centered_s, rowvar=False).reshape(d, d))
    if eigvals.min() <= 0:
        raise DegenerateInputError("ERROR: s_true covariance is singular")
    white = centered_s @ eigvecs / np.sqrt(eigvals)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    values = np.empty(n_rotations)
    for k in range(n_rotations):
        rotation = ortho_group.rvs(dim=d, random_state=rng) if d > 1 else np.ones((1, 1))
        values[k] = mcc(s_true, white @ rotation.T, mode).mcc
    return values


def baseline_band(values: np.ndarray, coverage: float = 0.95) -> Tuple[float, float]:
    '''central interval of a baseline mcc distribution'''
    tail = (1.0 - coverage) / 2.0
    return float(np.quantile(values, tail)), float(np.quantile(values, 1.0 - tail))
