from typing import Callable, Dict, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from autodiff import Tape, Tensor, as_tensor
from dataset import Dataset
from logger_utils import log_timer_info
from mlp import (Layer, Mlp, activation_pair, forward, leaky_soft_log_derivative,
                 leaky_soft_log_derivative_grad)
from nica_errors import ContractError, DimensionError, NumericError
from train_config import MLE_DENSITIES, EstimatorResult, TrainConfig

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("mle_service")

# ============================================
# mle_service MODULE OVERVIEW
#
# Noise-free maximum likelihood for z = g(x), g built from square layers
# z = h @ W + b with the leaky-soft nonlinearity between them and none
# after the last one. Per time point
#   log p(x) = sum_i log p_i(g_i(x)) + log|det Jg(x)|
#   log|det Jg(x)| = sum_layers log|det W| + sum_hidden_units log phi'(pre)
# The weights are updated with the relative gradient
#   W <- W + eps * W (W^T G + I)
# where G is the gradient of the data terms (everything but log|det W|),
# so no matrix is ever inverted during training.

SINGULAR_DET = 1e-12
GMM_MEAN = 1.0
GMM_STD = 0.5
STUDENT_DF = 5.0


def laplace_logpdf(z: Tensor) -> Tensor:
    return stats.laplace.logpdf(z)


def laplace_score(z: Tensor) -> Tensor:
    return -np.sign(z)


def gmm2_logpdf(z: Tensor) -> Tensor:
    # equal mixture of N(-1, 0.5^2) and N(1, 0.5^2), sub-gaussian
    return np.logaddexp(stats.norm.logpdf(z, -GMM_MEAN, GMM_STD), stats.norm.logpdf(z, GMM_MEAN, GMM_STD)) - np.log(2.0)


def gmm2_score(z: Tensor) -> Tensor:
    variance = GMM_STD ** 2
    return (GMM_MEAN * np.tanh(GMM_MEAN * z / variance) - z) / variance


def student_logpdf(z: Tensor) -> Tensor:
    return stats.t.logpdf(z, df=STUDENT_DF)


def student_score(z: Tensor) -> Tensor:
    return -(STUDENT_DF + 1.0) * z / (STUDENT_DF + z ** 2)


# name -> (log density, d log density / dz)
DENSITIES: Dict[str, Tuple[Callable, Callable]] = {
    "laplace": (laplace_logpdf, laplace_score),
    "gmm2": (gmm2_logpdf, gmm2_score),
    "student": (student_logpdf, student_score),
}


class MleModel:
    mlp: Mlp        # square layers, leaky_soft on all but the last
    density: str

    def __init__(self, mlp: Mlp, density: str = "laplace"):
        self.mlp = mlp
        self.density = density
        self.validate_fields()

    def validate_fields(self):
        if self.density not in DENSITIES:
            raise ContractError(f"ERROR: unknown density '{self.density}', expected one of {MLE_DENSITIES}")
        d = self.mlp.input_dim
        last = len(self.mlp.layers) - 1
        for i, layer in enumerate(self.mlp.layers):
            if layer.weight.shape != (d, d):
                raise DimensionError(f"ERROR: MLE layer {i} weight {layer.weight.shape} is not ({d}, {d})")
            expected = "identity" if i == last else "leaky_soft"
            if layer.activation != expected:
                raise ContractError(f"ERROR: MLE layer {i} activation must be {expected} not {layer.activation}")

    @property
    def d(self) -> int:
        return self.mlp.input_dim

    @classmethod
    def identity(cls, d: int, n_layers: int = 1, density: str = "laplace", alpha: float = 0.2) -> "MleModel":
        '''identity weights and zero biases'''
        last = n_layers - 1
        layers = [Layer(np.eye(d), np.zeros((1, d)), "identity" if i == last else "leaky_soft", alpha)
                  for i in range(n_layers)]
        return cls(Mlp(layers, "g"), density)

    def forward(self, x) -> Tensor:
        return forward(self.mlp, x)

    def log_abs_dets(self) -> Tensor:
        '''log|det W| per layer; a (near) singular layer is a numeric error'''
        values = []
        for i, layer in enumerate(self.mlp.layers):
            sign, logabs = np.linalg.slogdet(layer.weight)
            if sign == 0 or logabs < np.log(SINGULAR_DET):
                raise NumericError(f"ERROR: MLE layer {i} weight is singular (|det| < {SINGULAR_DET:g})")
            values.append(logabs)
        return np.array(values)

    def log_det_jacobian(self, x) -> Tensor:
        '''log|det Jg(x(t))| for every row, shape (T,)'''
        h = as_tensor(x, "x")
        total = np.full(h.shape[0], float(self.log_abs_dets().sum()))
        last = len(self.mlp.layers) - 1
        for i, layer in enumerate(self.mlp.layers):
            pre = h @ layer.weight + layer.bias
            if i < last:
                total += leaky_soft_log_derivative(pre, layer.alpha).sum(axis=1)
                h = activation_pair(layer.activation, layer.alpha)[0](pre)
            else:
                h = pre
        return total

    def point_log_likelihood(self, x) -> Tensor:
        logpdf, _ = DENSITIES[self.density]
        z = self.forward(x)
        return logpdf(z).sum(axis=1) + self.log_det_jacobian(x)

    def log_likelihood(self, x) -> float:
        '''exact log-likelihood, averaged over time points'''
        return float(np.mean(self.point_log_likelihood(x)))

    def with_parameters(self, params: Dict[str, Tensor]) -> "MleModel":
        return MleModel(self.mlp.with_parameters(params), self.density)

    def as_dict(self) -> dict:
        return {"density": self.density, "g": self.mlp.as_dict()}


def data_term_gradients(model: MleModel, batch: Tensor) -> Dict[str, Tensor]:
    '''
    Gradient of the batch mean of sum_i log p_i(z_i) + sum log phi'(pre),
    the likelihood without its log|det W| terms.
    '''
    logpdf, score = DENSITIES[model.density]
    mlp = model.mlp
    tape = Tape()
    h = tape.constant(batch, "x")
    terms = []
    last = len(mlp.layers) - 1
    for i, layer in enumerate(mlp.layers):
        weight = tape.parameter(mlp.param_name(i, "weight"), layer.weight)
        bias = tape.parameter(mlp.param_name(i, "bias"), layer.bias)
        pre = tape.add(tape.matmul(h, weight), bias, f"g.{i}.pre")
        if i < last:
            alpha = layer.alpha
            log_derivative = tape.elementwise(pre, lambda v, a=alpha: leaky_soft_log_derivative(v, a),
                                              lambda v, a=alpha: leaky_soft_log_derivative_grad(v, a),
                                              f"g.{i}.log_derivative")
            terms.append(tape.sum(log_derivative))
            fn, dfn = activation_pair(layer.activation, alpha)
            h = tape.elementwise(pre, fn, dfn, f"g layer {i} leaky_soft")
        else:
            h = pre
    terms.append(tape.sum(tape.elementwise(h, logpdf, score, "log_density")))
    total = terms[0]
    for term in terms[1:]:
        total = tape.add(total, term)
    objective = tape.mul(total, tape.constant(1.0 / batch.shape[0], "1/n"))
    # the tape returns d objective / d parameter, used here for ascent
    return tape.backward(objective)


def relative_gradient_step(model: MleModel, grads: Dict[str, Tensor], step: float) -> MleModel:
    params = {}
    for i, layer in enumerate(model.mlp.layers):
        w_name = model.mlp.param_name(i, "weight")
        b_name = model.mlp.param_name(i, "bias")
        W = layer.weight
        G = grads[w_name]
        params[w_name] = W + step * W @ (W.T @ G + np.eye(W.shape[0]))
        params[b_name] = layer.bias + step * grads[b_name]
        if not np.all(np.isfinite(params[w_name])):
            raise NumericError(f"ERROR: non-finite weights in MLE layer {i}")
    return model.with_parameters(params)


@log_timer_info
def train_mle(dataset: Dataset, cfg: TrainConfig) -> EstimatorResult:
    '''
    Maximize the exact likelihood with mini-batch relative gradient
    ascent from the identity map. The curves hold the exact full-data
    log-likelihood per point after every epoch. With cfg.patience the
    best-likelihood model is kept.
    '''
    x = dataset.x
    d = x.shape[1]
    d_out = d if cfg.output_dim is None else cfg.output_dim
    if d_out != d:
        raise ContractError(f"ERROR: maximum likelihood needs output_dim == input dimension, got {d_out} != {d}")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    model = MleModel.identity(d, cfg.mle_layers, cfg.density, cfg.alpha)

    rows_out = []
    best_model = model
    best_ll = -np.inf
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(dataset.T)
        for start in range(0, dataset.T, cfg.batch_size):
            batch = x[order[start:start + cfg.batch_size]]
            model = relative_gradient_step(model, data_term_gradients(model, batch), cfg.learning_rate)
        log_det = model.log_det_jacobian(x)
        ll = model.log_likelihood(x)
        if not np.isfinite(ll):
            raise NumericError(f"ERROR: non-finite log-likelihood at epoch {epoch}")
        rows_out.append({"epoch": epoch, "log_likelihood": ll, "mean_log_det": float(np.mean(log_det))})
        logger.debug(f"epoch:{epoch} log_likelihood:{ll:.6f}")

        if ll > best_ll:
            best_ll = ll
            best_model = model
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                logger.info(f"early stop at epoch {epoch}, best log-likelihood {best_ll:.6f}")
                break

    final = best_model if cfg.patience is not None else model
    z = final.forward(x)
    logger.info(f"train_mle() density:{cfg.density} layers:{cfg.mle_layers} log_likelihood:{final.log_likelihood(x):.6f}")
    return EstimatorResult(final.mlp, z, pd.DataFrame(rows_out), "mle",
                           extras={"density": final.density, "log_likelihood": final.log_likelihood(x)})
