import warnings
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from sklearn.decomposition import PCA

from autodiff import Tensor, as_tensor
from nica_errors import ConvergenceWarning, DegenerateInputError, DimensionError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("linear_ica")

# ============================================
# linear_ica MODULE OVERVIEW
#
# Symmetric (parallel) FastICA with the tanh contrast, on PCA-whitened
# data, and the PCA baseline itself. Both take X as (T, d) and return
# components as (T, n_components).
#
#   unmixing, z, converged = linear_ica(X, 4)
#   z == (X - X.mean(axis=0)) @ unmixing.T

MAX_ITER = 500
TOLERANCE = 1e-6
DEGENERATE_RATIO = 1e-12


def fit_whitening(X: Tensor, n_components: int) -> PCA:
    '''centered PCA whitening; degenerate covariance is an error'''
    T, d = X.shape
    if T <= d:
        raise DimensionError(f"ERROR: need more time points than dimensions, got T={T} d={d}")
    if not 1 <= n_components <= d:
        raise DimensionError(f"ERROR: n_components must be in 1..{d} not {n_components}")
    pca = PCA(n_components=n_components, whiten=True, svd_solver="full")
    pca.fit(X)
    variances = pca.explained_variance_
    if variances[-1] <= DEGENERATE_RATIO * max(variances[0], DEGENERATE_RATIO):
        raise DegenerateInputError(f"ERROR: degenerate covariance, principal variances {variances.tolist()}")
    return pca


def whitening_matrix(pca: PCA) -> Tensor:
    # rows map centered X to unit-variance principal components
    return pca.components_ / np.sqrt(pca.explained_variance_)[:, None]


def sym_decorrelation(W: Tensor) -> Tensor:
    '''W <- (W W^T)^{-1/2} W'''
    s, u = linalg.eigh(W @ W.T)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def linear_ica(X, n_components: Optional[int] = None, seed: int = 0, max_iter: int = MAX_ITER,
               tol: float = TOLERANCE) -> Tuple[Tensor, Tensor, bool]:
    '''
    Returns (unmixing, z, converged). unmixing is (n_components, d) and
    acts on centered X; its rows have unit norm in whitened space.
    Non-convergence emits a ConvergenceWarning and still returns the
    last iterate with converged = False.
    '''
    X = as_tensor(X, "X")
    n_components = X.shape[1] if n_components is None else int(n_components)
    pca = fit_whitening(X, n_components)
    K = whitening_matrix(pca)
    Xw = (X - pca.mean_) @ K.T
    T = Xw.shape[0]

    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    W = sym_decorrelation(rng.standard_normal((n_components, n_components)))
    converged = False
    lim = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        wx = Xw @ W.T
        g = np.tanh(wx)
        g_prime = 1.0 - g ** 2
        W1 = sym_decorrelation(g.T @ Xw / T - g_prime.mean(axis=0)[:, None] * W)
        lim = np.max(np.abs(np.abs(np.sum(W1 * W, axis=1)) - 1.0))
        W = W1
        if lim < tol:
            converged = True
            break

    if not converged:
        message = f"FastICA did not converge in {max_iter} iterations (last change {lim:.3g})"
        logger.warning(message)
        warnings.warn(message, ConvergenceWarning)
    else:
        logger.debug(f"linear_ica() converged in {it} iterations")

    unmixing = W @ K
    z = (X - pca.mean_) @ unmixing.T
    return unmixing, z, converged


def pca_baseline(X, n_components: Optional[int] = None) -> Tensor:
    '''centered projection on the top principal directions, unit variance'''
    X = as_tensor(X, "X")
    n_components = X.shape[1] if n_components is None else int(n_components)
    pca = fit_whitening(X, n_components)
    return pca.transform(X)
