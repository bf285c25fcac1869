from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import train_test_split

from adam import AdamState, adam_step
from autodiff import Node, Tape, Tensor
from dataset import Dataset
from linear_ica import linear_ica
from logger_utils import log_timer_info
from mlp import Layer, Mlp, forward
from nica_errors import ContractError, DegenerateInputError, NumericError
from train_config import EstimatorResult, TrainConfig

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("contrastive_service")

# ============================================
# contrastive_service MODULE OVERVIEW
#
# The three contrastive estimators share one training loop (fit_pretext).
# Each supplies a pretext task:
#   ClassificationTask - TCL, multinomial regression of the segment label
#                        on the features h(x)
#   PairTask           - PCL and GCL, logistic discrimination of true pairs
#                        from shuffled ones with the regression function
#                        r(a, b) = sum_i psi_i(h_i(a), v_i(b))
#
# Inputs are standardized for training; the standardization is folded
# into the first layer of the returned extractor so z = forward(h, x).
#
# Networks are named "h", "classifier", "psi1".."psiD" and, for one-hot aux,
# "eta1".."etaD", so that one Tape and one AdamState cover all of them.


def standardize(values: Tensor, what: str = "x") -> Tuple[Tensor, Tensor, Tensor]:
    mean = values.mean(axis=0, keepdims=True)
    std = values.std(axis=0, keepdims=True)
    for i, s in enumerate(std.ravel()):
        if not s > 0:
            raise DegenerateInputError(f"ERROR: {what} column {i + 1} is constant")
    return (values - mean) / std, mean, std


def is_one_hot(values: Tensor) -> bool:
    return bool(np.all((values == 0.0) | (values == 1.0)) and np.all(values.sum(axis=1) == 1.0))


def init_extractor(input_dim: int, cfg: TrainConfig, output_activation: str,
                   rng: np.random.Generator) -> Mlp:
    '''the feature extractor h: input_dim -> hidden widths -> d' '''
    d_out = cfg.resolved_output_dim(input_dim)
    dims = [input_dim] + cfg.hidden_widths + [d_out]
    activations = [cfg.hidden_activation] * len(cfg.hidden_widths) + [output_activation]
    return Mlp.init_random(dims, activations, rng, name="h", alpha=cfg.alpha)


def fold_standardization(mlp: Mlp, mean: Tensor, std: Tensor) -> Mlp:
    '''
    Return the Mlp that computes mlp((x - mean) / std) directly on x:
    W' = W / std^T, b' = b - (mean / std) @ W
    '''
    first = mlp.layers[0]
    weight = first.weight / std.reshape(-1, 1)
    bias = first.bias - (mean / std) @ first.weight
    layers = [Layer(weight, bias, first.activation, first.alpha)] + mlp.layers[1:]
    return Mlp(layers, mlp.name)


def compose_linear(mlp: Mlp, unmixing: Tensor, center: Tensor) -> Mlp:
    '''append the affine step z = (h - center) @ unmixing^T'''
    center = np.asarray(center, dtype=np.float64).reshape(1, -1)
    layer = Layer(unmixing.T, -center @ unmixing.T, "identity", mlp.layers[-1].alpha)
    return Mlp(mlp.layers + [layer], mlp.name)


def compose_with_ica(result: EstimatorResult, method: str, seed: int = 0) -> EstimatorResult:
    '''
    Follow the learned features with FastICA. The returned extractor is
    the composed map; the raw features are kept in result.features.
    '''
    features = result.z
    unmixing, z, converged = linear_ica(features, seed=seed)
    extractor = compose_linear(result.extractor, unmixing, features.mean(axis=0))
    extras = dict(result.extras)
    extras["ica_converged"] = converged
    return EstimatorResult(extractor, z, result.pretext_metrics, method, features=features, extras=extras)


def binary_chance_se(n_positive: int, n_negative: int) -> float:
    # standard error of the AUC under the null of identical score distributions
    return float(np.sqrt((n_positive + n_negative + 1.0) / (12.0 * n_positive * n_negative)))


class PretextTask:
    '''hooks the shared training loop calls; subclasses set n_train'''
    n_train: int

    def networks(self, h: Mlp, cfg: TrainConfig, rng: np.random.Generator) -> Dict[str, Mlp]:
        raise NotImplementedError

    def resample(self, rng: np.random.Generator):
        pass

    def batch_loss(self, tape: Tape, nets: Dict[str, Mlp], rows: np.ndarray) -> Node:
        raise NotImplementedError

    def evaluate(self, nets: Dict[str, Mlp]) -> dict:
        raise NotImplementedError


class ClassificationTask(PretextTask):
    x: Tensor
    labels: np.ndarray      # 0-based
    n_classes: int
    train_rows: np.ndarray
    heldout_rows: np.ndarray

    def __init__(self, x: Tensor, labels: np.ndarray, train_rows: np.ndarray, heldout_rows: np.ndarray):
        self.x = x
        self.labels = labels
        self.n_classes = int(labels.max()) + 1
        self.train_rows = train_rows
        self.heldout_rows = heldout_rows
        self.n_train = len(train_rows)

    def networks(self, h, cfg, rng):
        classifier = Mlp.init_random([h.output_dim, self.n_classes], ["identity"], rng, name="classifier")
        return {"h": h, "classifier": classifier}

    def logits(self, tape: Tape, nets: Dict[str, Mlp], rows: np.ndarray) -> Node:
        features = forward(nets["h"], self.x[rows], tape)
        return forward(nets["classifier"], features, tape)

    def batch_loss(self, tape, nets, rows):
        rows = self.train_rows[rows]
        return tape.softmax_cross_entropy(self.logits(tape, nets, rows), self.labels[rows])

    def evaluate(self, nets):
        tape = Tape()
        rows = self.heldout_rows
        logits = self.logits(tape, nets, rows)
        loss = tape.softmax_cross_entropy(logits, self.labels[rows])
        accuracy = float(np.mean(np.argmax(logits.value, axis=1) == self.labels[rows]))
        chance = 1.0 / self.n_classes
        return {
            "heldout_loss": float(loss.value[0, 0]),
            "heldout_accuracy": accuracy,
            "chance": chance,
            "chance_se": float(np.sqrt(chance * (1.0 - chance) / len(rows)))
        }


class PairTask(PretextTask):
    '''
    Pair p joins left[left_index[p]] with right[right_index[p]] (a true
    pair) or with right[sampled index] (a shuffled pair). When
    right_through_h the right side goes through h as well (PCL), else it
    is fed to psi_i unchanged (GCL).
    '''
    left: Tensor
    right: Tensor
    left_index: np.ndarray
    right_index: np.ndarray
    right_through_h: bool
    exponential_term: bool      # add h_i a_i(u) + b_i(u) to psi_i
    negative_sampler: Callable[[np.random.Generator, np.ndarray], np.ndarray]
    train_pairs: np.ndarray
    heldout_pairs: np.ndarray
    heldout_negatives: np.ndarray
    train_negatives: Optional[np.ndarray]

    def __init__(self, left: Tensor, right: Tensor, left_index: np.ndarray, right_index: np.ndarray,
                 right_through_h: bool, negative_sampler, train_pairs: np.ndarray, heldout_pairs: np.ndarray,
                 heldout_rng: np.random.Generator, exponential_term: bool = False):
        self.left = left
        self.right = right
        self.left_index = left_index
        self.right_index = right_index
        self.right_through_h = right_through_h
        self.exponential_term = exponential_term and not right_through_h
        self.negative_sampler = negative_sampler
        self.train_pairs = train_pairs
        self.heldout_pairs = heldout_pairs
        self.n_train = len(train_pairs)
        # fixed held-out negatives so the held-out curve is comparable across epochs
        self.heldout_negatives = negative_sampler(heldout_rng, left_index[heldout_pairs])
        self.train_negatives = None

    def networks(self, h, cfg, rng):
        nets = {"h": h}
        right_width = 1 if self.right_through_h else self.right.shape[1]
        for i in range(h.output_dim):
            name = f"psi{i + 1}"
            nets[name] = Mlp.init_random([1 + right_width, cfg.psi_hidden, 1], [cfg.hidden_activation, "identity"],
                                         rng, name=name, alpha=cfg.alpha)
            if self.exponential_term:
                name = f"eta{i + 1}"
                nets[name] = Mlp.init_random([right_width, 2], ["identity"], rng, name=name)
        return nets

    def resample(self, rng):
        # fresh negatives every epoch
        self.train_negatives = self.negative_sampler(rng, self.left_index[self.train_pairs])

    def pair_logits(self, tape: Tape, nets: Dict[str, Mlp], left_rows: Tensor, right_rows: Tensor) -> Node:
        h = nets["h"]
        left_features = forward(h, left_rows, tape)
        if self.right_through_h:
            right_features = forward(h, right_rows, tape)
        else:
            right_features = tape.constant(right_rows, "aux")
        total = None
        for i in range(h.output_dim):
            left_i = tape.slice_cols(left_features, i, i + 1, f"h{i + 1}")
            if self.right_through_h:
                right_i = tape.slice_cols(right_features, i, i + 1, f"h{i + 1}_right")
            else:
                right_i = right_features
            psi = forward(nets[f"psi{i + 1}"], tape.concat_cols([left_i, right_i], f"psi{i + 1}.input"), tape)
            if self.exponential_term:
                eta = forward(nets[f"eta{i + 1}"], right_features, tape)
                coupling = tape.mul(left_i, tape.slice_cols(eta, 0, 1, f"eta{i + 1}.scale"), f"eta{i + 1}.coupling")
                offset = tape.slice_cols(eta, 1, 2, f"eta{i + 1}.offset")
                psi = tape.add(psi, tape.add(coupling, offset, f"eta{i + 1}.term"), f"psi{i + 1}.total")
            total = psi if total is None else tape.add(total, psi, "regression_sum")
        return total

    def stacked(self, pairs: np.ndarray, negatives: np.ndarray) -> Tuple[Tensor, Tensor, np.ndarray]:
        left_rows = self.left[self.left_index[pairs]]
        left = np.vstack([left_rows, left_rows])
        right = np.vstack([self.right[self.right_index[pairs]], self.right[negatives]])
        targets = np.concatenate([np.ones(len(pairs)), np.zeros(len(pairs))])
        return left, right, targets

    def batch_loss(self, tape, nets, rows):
        left, right, targets = self.stacked(self.train_pairs[rows], self.train_negatives[rows])
        return tape.logistic_loss(self.pair_logits(tape, nets, left, right), targets)

    def evaluate(self, nets):
        tape = Tape()
        left, right, targets = self.stacked(self.heldout_pairs, self.heldout_negatives)
        logits = self.pair_logits(tape, nets, left, right)
        loss = tape.logistic_loss(logits, targets)
        scores = logits.value.ravel()
        n = len(self.heldout_pairs)
        return {
            "heldout_loss": float(loss.value[0, 0]),
            "heldout_accuracy": float(np.mean((scores > 0) == (targets > 0.5))),
            "heldout_auc": float(roc_auc_score(targets, scores)),
            "chance": 0.5,
            "chance_se": binary_chance_se(n, n)
        }


def fit_pretext(task: PretextTask, nets: Dict[str, Mlp], cfg: TrainConfig,
                rng: np.random.Generator) -> Tuple[Dict[str, Mlp], pd.DataFrame]:
    '''
    Adam on mini-batches of the training rows, one held-out evaluation per
    epoch. With cfg.patience the loop stops once the held-out loss has not
    improved for that many epochs and the best networks are returned.
    '''
    params = {}
    for net in nets.values():
        params.update(net.parameters())
    state = AdamState.create(params, cfg.learning_rate)

    def rebuild(current: Dict[str, np.ndarray]) -> Dict[str, Mlp]:
        return {key: net.with_parameters(current) for key, net in nets.items()}

    rows_out = []
    best_loss = np.inf
    best_params = params
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        task.resample(rng)
        order = rng.permutation(task.n_train)
        current = rebuild(params)
        batch_losses = []
        for start in range(0, task.n_train, cfg.batch_size):
            tape = Tape()
            loss = task.batch_loss(tape, current, order[start:start + cfg.batch_size])
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise NumericError(f"ERROR: non-finite loss at epoch {epoch}")
            grads = tape.backward(loss)
            params, state = adam_step(params, grads, state)
            current = rebuild(params)
            batch_losses.append(value)

        metrics = task.evaluate(current)
        row = {"epoch": epoch, "train_loss": float(np.mean(batch_losses))}
        row.update(metrics)
        rows_out.append(row)
        logger.debug(f"epoch:{epoch} train_loss:{row['train_loss']:.5f} heldout_loss:{metrics['heldout_loss']:.5f} "
                     f"heldout_accuracy:{metrics['heldout_accuracy']:.4f}")

        if metrics["heldout_loss"] < best_loss:
            best_loss = metrics["heldout_loss"]
            best_params = params
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                logger.info(f"early stop at epoch {epoch}, best held-out loss {best_loss:.5f}")
                break

    final = best_params if cfg.patience is not None else params
    return rebuild(final), pd.DataFrame(rows_out)


def rng_pair(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    '''(initialization stream, training stream)'''
    init_seq, train_seq = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(train_seq)


def split_seed(seed: int) -> int:
    return int(seed) % (2 ** 32)


def finish(h: Mlp, mean: Tensor, std: Tensor, dataset: Dataset, curves: pd.DataFrame, method: str,
           extras: dict) -> EstimatorResult:
    extractor = fold_standardization(h, mean, std)
    z = forward(extractor, dataset.x)
    return EstimatorResult(extractor, z, curves, method, extras=extras)


@log_timer_info
def train_tcl(dataset: Dataset, cfg: TrainConfig) -> EstimatorResult:
    '''
    Time-contrastive learning: classify each x(t) into its segment with
    h followed by a softmax layer. z = h(x) recovers the sources only up
    to a linear map and pointwise nonlinearities; see tcl_pipeline.
    '''
    if dataset.segments is None or dataset.n_segments < 2:
        raise ContractError("ERROR: train_tcl needs at least 2 segments")
    counts = np.bincount(dataset.segments)[1:]
    if counts.min() < cfg.batch_size:
        raise ContractError(f"ERROR: smallest segment has {counts.min()} points, fewer than batch_size {cfg.batch_size}")
    x, mean, std = standardize(dataset.x)
    labels = dataset.segments - 1
    train_rows, heldout_rows = train_test_split(np.arange(dataset.T), test_size=cfg.holdout_fraction,
                                                stratify=labels, random_state=split_seed(cfg.seed))
    task = ClassificationTask(x, labels, np.sort(train_rows), np.sort(heldout_rows))

    init_rng, train_rng = rng_pair(cfg.seed)
    h = init_extractor(dataset.x.shape[1], cfg, cfg.output_activation or "abs", init_rng)
    nets, curves = fit_pretext(task, task.networks(h, cfg, init_rng), cfg, train_rng)
    logger.info(f"train_tcl() segments:{task.n_classes} heldout_accuracy:{curves['heldout_accuracy'].iloc[-1]:.4f} "
                f"chance:{1.0 / task.n_classes:.4f}")
    return finish(nets["h"], mean, std, dataset, curves, "tcl", {"n_classes": task.n_classes})


def tcl_pipeline(dataset: Dataset, cfg: TrainConfig) -> EstimatorResult:
    '''train_tcl followed by FastICA on the learned features'''
    return compose_with_ica(train_tcl(dataset, cfg), "tcl+ica", cfg.seed)


def untrained_pipeline(dataset: Dataset, cfg: TrainConfig, output_activation: str = "abs") -> EstimatorResult:
    '''
    Control: the extractor at its initialization (same architecture and
    seed as the trained one) followed by FastICA.
    '''
    _, mean, std = standardize(dataset.x)
    init_rng, _ = rng_pair(cfg.seed)
    h = init_extractor(dataset.x.shape[1], cfg, cfg.output_activation or output_activation, init_rng)
    result = finish(h, mean, std, dataset, pd.DataFrame(), "untrained+ica", {})
    return compose_with_ica(result, "untrained+ica", cfg.seed)


def pcl_negative_sampler(T: int) -> Callable[[np.random.Generator, np.ndarray], np.ndarray]:
    def sample(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
        # uniform over 0..T-1 without t-1 and t
        k = rng.integers(0, T - 2, size=len(t))
        return k + 2 * (k >= t - 1)
    return sample


def permutation_sampler(n: int) -> Callable[[np.random.Generator, np.ndarray], np.ndarray]:
    def sample(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
        return rng.permutation(n)[t]
    return sample


@log_timer_info
def train_pcl(dataset: Dataset, cfg: TrainConfig) -> EstimatorResult:
    '''
    Permutation-contrastive learning: discriminate (x(t), x(t-1)) from
    (x(t), x(t*)), t* uniform over the time points other than t and t-1.
    '''
    T = dataset.T
    if T < 3:
        raise ContractError(f"ERROR: train_pcl needs T >= 3 not {T}")
    x, mean, std = standardize(dataset.x)
    t = np.arange(1, T)
    pairs = np.arange(T - 1)
    train_pairs, heldout_pairs = train_test_split(pairs, test_size=cfg.holdout_fraction,
                                                  random_state=split_seed(cfg.seed))
    init_rng, train_rng = rng_pair(cfg.seed)
    task = PairTask(x, x, t, t - 1, True, pcl_negative_sampler(T), np.sort(train_pairs), np.sort(heldout_pairs),
                    init_rng)
    h = init_extractor(dataset.x.shape[1], cfg, cfg.output_activation or "identity", init_rng)
    nets, curves = fit_pretext(task, task.networks(h, cfg, init_rng), cfg, train_rng)
    logger.info(f"train_pcl() T:{T} heldout_auc:{curves['heldout_auc'].iloc[-1]:.4f}")
    return finish(nets["h"], mean, std, dataset, curves, "pcl", {})


@log_timer_info
def train_gcl(dataset: Dataset, cfg: TrainConfig) -> EstimatorResult:
    '''
    Generalized contrastive learning: discriminate (x(t), u(t)) from
    (x(t), u*(t)) with u* a within-dataset permutation of the aux rows.
    One-hot aux (segment labels) defaults to the abs output nonlinearity
    and adds an exponential family term to every regression function,
        psi_i = mlp_i(h_i, u) + h_i a_i(u) + b_i(u)
    with a_i and b_i linear in u: the log-density ratio of sources whose
    scale changes from segment to segment.
    '''
    if dataset.aux is None:
        raise ContractError("ERROR: train_gcl needs auxiliary variables")
    x, mean, std = standardize(dataset.x)
    one_hot = is_one_hot(dataset.aux)
    aux = dataset.aux if one_hot else standardize(dataset.aux, "aux")[0]
    T = dataset.T
    t = np.arange(T)
    train_pairs, heldout_pairs = train_test_split(t, test_size=cfg.holdout_fraction,
                                                  random_state=split_seed(cfg.seed))
    init_rng, train_rng = rng_pair(cfg.seed)
    task = PairTask(x, aux, t, t, False, permutation_sampler(T), np.sort(train_pairs), np.sort(heldout_pairs),
                    init_rng, exponential_term=one_hot)
    default_activation = "abs" if one_hot else "identity"
    h = init_extractor(dataset.x.shape[1], cfg, cfg.output_activation or default_activation, init_rng)
    nets, curves = fit_pretext(task, task.networks(h, cfg, init_rng), cfg, train_rng)
    logger.info(f"train_gcl() T:{T} aux_dim:{aux.shape[1]} heldout_auc:{curves['heldout_auc'].iloc[-1]:.4f}")
    return finish(nets["h"], mean, std, dataset, curves, "gcl", {"one_hot_aux": one_hot})


def gcl_pipeline(dataset: Dataset, cfg: TrainConfig) -> EstimatorResult:
    '''train_gcl; segment-label aux is followed by FastICA like TCL'''
    result = train_gcl(dataset, cfg)
    if result.extras.get("one_hot_aux"):
        return compose_with_ica(result, "gcl+ica", cfg.seed)
    return result
