import math
from typing import Optional

import numpy as np
from scipy import stats

from autodiff import Tensor, as_tensor
from nica_errors import DegenerateInputError, DimensionError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("darmois")

# ============================================
# darmois MODULE OVERVIEW
#
# The recursive conditional-CDF construction for two variables:
#   z1 = F(x1)           empirical CDF, rank / (T + 1)
#   z2 = F(x2 | x1)      Nadaraya-Watson estimate with a gaussian kernel
#                        over x1
# Both outputs are uniform and independent, whatever the data, which is
# why they are used as a negative baseline: they need not match the
# sources at all.
#
# The kernel width of row t is the distance from x1(t) to its k-th
# nearest neighbour, k = ceil(sqrt(T)). A bandwidth tuned for the density
# of x1 oversmooths F(x2 | x1) wherever the conditional changes quickly;
# with about sqrt(T) neighbours z2(t) is a local rank of x2(t), which is
# close to uniform and carries no information about x1.

STABLE_T = 1000
BLOCK_ROWS = 512


def neighbor_count(T: int) -> int:
    return max(1, min(T - 1, int(math.ceil(math.sqrt(T)))))


def neighbor_bandwidths(column: Tensor, k: int) -> Tensor:
    '''distance from every point to its k-th nearest other point'''
    T = column.shape[0]
    floor = 1e-12 * float(np.ptp(column))
    out = np.empty(T)
    for start in range(0, T, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, T)
        distances = np.abs(column[start:stop, None] - column[None, :])
        # position 0 of every row is the point itself
        out[start:stop] = np.partition(distances, k, axis=1)[:, k]
    return np.maximum(out, floor)


def conditional_cdf(x1: Tensor, x2: Tensor, bandwidth) -> Tensor:
    '''
    F(x2(t) | x1(t)) = sum_j w_tj [x2_j <= x2_t] / sum_j w_tj with the
    own point counted half, which keeps every value inside (0, 1).
    bandwidth is one width for all rows or one per row.
    '''
    T = x1.shape[0]
    widths = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (T,))
    out = np.empty(T)
    for start in range(0, T, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, T)
        diff = (x1[start:stop, None] - x1[None, :]) / widths[start:stop, None]
        weights = np.exp(-0.5 * diff ** 2)
        below = x2[None, :] <= x2[start:stop, None]
        numerator = (weights * below).sum(axis=1) - 0.5
        out[start:stop] = numerator / weights.sum(axis=1)
    return out


def darmois_transform(x, bandwidth: Optional[float] = None) -> Tensor:
    '''
    Map a (T, 2) sample to (T, 2) values in (0, 1) with independent
    uniform columns. z1 depends on x1 alone and is increasing in it.
    A fixed bandwidth replaces the nearest-neighbour widths.
    '''
    x = as_tensor(x, "x")
    T, d = x.shape
    if d != 2:
        raise DimensionError(f"ERROR: darmois_transform is defined for d = 2 not d = {d}")
    for i in range(d):
        if np.ptp(x[:, i]) == 0:
            raise DegenerateInputError(f"ERROR: x column {i + 1} is constant")
    if T < STABLE_T:
        logger.warning(f"darmois_transform() T={T} < {STABLE_T}, conditional CDF estimate will be noisy")

    z1 = stats.rankdata(x[:, 0]) / (T + 1.0)
    if bandwidth is None:
        k = neighbor_count(T)
        widths = neighbor_bandwidths(x[:, 0], k)
        logger.debug(f"darmois_transform() T:{T} neighbours:{k} median width:{np.median(widths):.5g}")
    else:
        widths = float(bandwidth)
        logger.debug(f"darmois_transform() T:{T} bandwidth:{widths:.5g}")
    z2 = conditional_cdf(x[:, 0], x[:, 1], widths)
    return np.column_stack([z1, z2])
