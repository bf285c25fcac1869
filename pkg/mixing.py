from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import ortho_group

from autodiff import Tensor, as_tensor, check_finite
from dataset import Dataset
from nica_errors import ConfigurationError, ContractError, DimensionError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("mixing")

# ============================================
# mixing MODULE OVERVIEW
#
# An invertible mixing f built from square layers. Row convention: a
# batch h is (T, d) and a layer computes h @ W.T, so x(t) = W s(t) per row.
# Every layer but the last applies a leaky relu; the last is linear so
# the outputs are unbounded. The inverse is closed form:
#   leaky relu:  y > 0 ? y : y / alpha
#   linear:      h @ inv(W).T
# n_layers = 0 gives the identity mixing.

DEFAULT_CONDITION_BOUND = 10.0
MAX_REJECTION_DRAWS = 1000
CONDITION_TOLERANCE = 1e-9
DEFAULT_FOLD_TILT = 0.1
MIXING_KINDS = ["random", "fold"]


def leaky_relu(h: Tensor, alpha: float) -> Tensor:
    return np.where(h > 0, h, alpha * h)


def inverse_leaky_relu(y: Tensor, alpha: float) -> Tensor:
    return np.where(y > 0, y, y / alpha)


class MixingNetwork:
    weights: List[Tensor]       # square (d, d), condition number <= condition_bound
    alphas: List[float]         # leaky slope per layer, unused on the last layer
    condition_bound: float
    inverse_weights: List[Tensor]

    def __init__(self, weights: Sequence, alphas: Sequence[float], condition_bound: float = DEFAULT_CONDITION_BOUND,
                 d: Optional[int] = None):
        self.weights = [as_tensor(w, f"mixing weight {i}") for i, w in enumerate(weights)]
        self.alphas = [float(a) for a in alphas]
        self.condition_bound = float(condition_bound)
        self._d = d if d is not None else (self.weights[0].shape[0] if self.weights else None)
        self.validate_fields()
        self.inverse_weights = [np.linalg.inv(w) for w in self.weights]

    def validate_fields(self):
        if self._d is None or self._d < 1:
            raise ConfigurationError("ERROR: an empty mixing network needs an explicit positive d")
        if len(self.alphas) != len(self.weights):
            raise ConfigurationError(f"ERROR: {len(self.weights)} layers need {len(self.weights)} slopes not {len(self.alphas)}")
        for i, (w, alpha) in enumerate(zip(self.weights, self.alphas)):
            if w.shape != (self._d, self._d):
                raise DimensionError(f"ERROR: mixing layer {i} weight has shape {w.shape}, expected ({self._d}, {self._d})")
            cond = np.linalg.cond(w)
            if not cond <= self.condition_bound * (1.0 + CONDITION_TOLERANCE):
                raise ConfigurationError(f"ERROR: mixing layer {i} condition number {cond:.4g} exceeds {self.condition_bound:g}")
            if not 0.0 < alpha < 1.0:
                raise ConfigurationError(f"ERROR: mixing layer {i} slope {alpha} outside (0, 1)")

    @property
    def d(self) -> int:
        return self._d

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def _check_width(self, batch, what: str) -> Tensor:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.d:
            raise DimensionError(f"ERROR: mixing {what} expects (T, {self.d}) not {batch.shape}")
        return batch

    def forward(self, s) -> Tensor:
        h = self._check_width(s, "forward")
        last = self.n_layers - 1
        for i, (w, alpha) in enumerate(zip(self.weights, self.alphas)):
            h = h @ w.T
            if i < last:
                h = leaky_relu(h, alpha)
        return check_finite(h, "mixing output")

    def inverse(self, x) -> Tensor:
        h = self._check_width(x, "inverse")
        last = self.n_layers - 1
        for i in reversed(range(self.n_layers)):
            if i < last:
                h = inverse_leaky_relu(h, self.alphas[i])
            h = h @ self.inverse_weights[i].T
        return h

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "condition_bound": self.condition_bound,
            "layers": [{"weight": w.tolist(), "alpha": a} for w, a in zip(self.weights, self.alphas)]
        }

    @classmethod
    def from_dict(cls, input_dict: dict) -> "MixingNetwork":
        layers = input_dict["layers"]
        return cls([layer["weight"] for layer in layers], [layer["alpha"] for layer in layers],
                   input_dict["condition_bound"], input_dict["d"])


def sample_condition_bounded(d: int, condition_bound: float, rng: np.random.Generator) -> Tensor:
    '''
    Draw a standard normal (d, d) matrix until its condition number is
    within the bound. A bound of 1 is met exactly by Haar orthogonal
    matrices, which are returned directly.
    '''
    if condition_bound < 1.0:
        raise ConfigurationError(f"ERROR: condition_bound must be >= 1 not {condition_bound}")
    if d == 1:
        return rng.standard_normal((1, 1)) + 0.0
    if condition_bound == 1.0:
        return ortho_group.rvs(dim=d, random_state=rng)
    for _ in range(MAX_REJECTION_DRAWS):
        w = rng.standard_normal((d, d))
        if np.linalg.cond(w) <= condition_bound:
            return w
    raise ConfigurationError(f"ERROR: no ({d}, {d}) weight with condition number <= {condition_bound:g} "
                             f"in {MAX_REJECTION_DRAWS} draws")


def build_mixing(d: int, n_layers: int, condition_bound: float = DEFAULT_CONDITION_BOUND, seed: int = 0,
                 alpha: float = 0.2) -> MixingNetwork:
    '''
    n_layers square layers; leaky relu (slope alpha) between them and an
    identity activation on the last one. n_layers = 1 is linear mixing.
    '''
    if n_layers < 0:
        raise ConfigurationError(f"ERROR: n_layers must be >= 0 not {n_layers}")
    if d < 1:
        raise ConfigurationError(f"ERROR: d must be positive not {d}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    weights = [sample_condition_bounded(d, condition_bound, rng) for _ in range(n_layers)]
    logger.debug(f"build_mixing() d:{d} n_layers:{n_layers} condition_bound:{condition_bound} seed:{seed}")
    return MixingNetwork(weights, [alpha] * n_layers, condition_bound, d)


def build_fold_mixing(tilt: float = DEFAULT_FOLD_TILT, alpha: float = 0.2, seed: int = 0) -> MixingNetwork:
    '''
    Two-layer d = 2 mixing that folds a random rotation u = R s:
        h = leaky_relu([[1, tilt], [-1, tilt]] @ u)
        x = [[1, 1], [1, -1]] @ h
    so x1 ~ (1 - alpha)|u1| + (1 + alpha) tilt u2 and the sign of u1 goes
    to x2. The first layer has condition number 1 / tilt.
    '''
    if not 0.0 < tilt <= 1.0:
        raise ConfigurationError(f"ERROR: fold tilt must be in (0, 1] not {tilt}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    rotation = ortho_group.rvs(dim=2, random_state=rng)
    first = np.array([[1.0, tilt], [-1.0, tilt]]) @ rotation
    second = np.array([[1.0, 1.0], [1.0, -1.0]])
    logger.debug(f"build_fold_mixing() tilt:{tilt} alpha:{alpha} seed:{seed}")
    return MixingNetwork([first, second], [alpha, alpha], max(DEFAULT_CONDITION_BOUND, 1.0 / tilt), 2)


def apply_mixing(net: MixingNetwork, dataset: Dataset) -> Dataset:
    '''x = f(s_true) row by row; every other field passes through'''
    if dataset.s_true is None:
        raise ContractError("ERROR: apply_mixing needs a dataset with s_true")
    if dataset.s_true.shape[1] != net.d:
        raise DimensionError(f"ERROR: mixing expects {net.d} sources, dataset has {dataset.s_true.shape[1]}")
    spec = dict(dataset.spec)
    spec["mixing"] = {"d": net.d, "n_layers": net.n_layers, "condition_bound": net.condition_bound}
    return dataset.replace(x=net.forward(dataset.s_true), spec=spec)
