from typing import List, Optional

import numpy as np
import pandas as pd

from autodiff import Tensor
from file_utils import write_frame_csv, write_json
from mlp import ACTIVATIONS, DEFAULT_LEAKY_SLOPE, Mlp, forward
from nica_errors import ConfigurationError, ContractError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("train_config")

MLE_DENSITIES = ["laplace", "gmm2", "student"]
METHODS = ["tcl", "tcl+ica", "pcl", "gcl", "gcl+ica", "mle", "ica", "pca", "untrained+ica", "darmois"]


class TrainConfig:
    hidden_widths: List[int]
    output_dim: Optional[int]       # d'; None means the input dimension
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int
    patience: Optional[int]         # epochs without held-out improvement before stopping
    hidden_activation: str
    output_activation: Optional[str]  # None picks the method default
    psi_hidden: int                 # hidden units of each psi_i in PCL / GCL
    density: str                    # MLE source log-density
    mle_layers: int                 # number of square layers of the MLE demixing
    holdout_fraction: float
    alpha: float                    # leaky slope

    def __init__(self, hidden_widths=(32, 32), output_dim: Optional[int] = None, epochs: int = 400,
                 batch_size: int = 256, learning_rate: float = 1e-3, seed: int = 0, patience: Optional[int] = None,
                 hidden_activation: str = "leaky_relu", output_activation: Optional[str] = None,
                 psi_hidden: int = 16, density: str = "laplace", mle_layers: int = 1,
                 holdout_fraction: float = 0.1, alpha: float = DEFAULT_LEAKY_SLOPE):
        self.hidden_widths = [int(w) for w in hidden_widths]
        self.output_dim = None if output_dim is None else int(output_dim)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.learning_rate = float(learning_rate)
        self.seed = int(seed)
        self.patience = None if patience is None else int(patience)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.psi_hidden = int(psi_hidden)
        self.density = density
        self.mle_layers = int(mle_layers)
        self.holdout_fraction = float(holdout_fraction)
        self.alpha = float(alpha)
        self.validate_fields()

    def validate_fields(self):
        counts = {"epochs": self.epochs, "batch_size": self.batch_size, "psi_hidden": self.psi_hidden,
                  "mle_layers": self.mle_layers}
        for name, value in counts.items():
            if value < 1:
                raise ConfigurationError(f"ERROR: {name} must be positive not {value}")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigurationError(f"ERROR: hidden widths must be positive not {self.hidden_widths}")
        if self.output_dim is not None and self.output_dim < 1:
            raise ConfigurationError(f"ERROR: output_dim must be positive not {self.output_dim}")
        if self.patience is not None and self.patience < 1:
            raise ConfigurationError(f"ERROR: patience must be positive not {self.patience}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"ERROR: learning_rate must be positive not {self.learning_rate}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigurationError(f"ERROR: holdout_fraction {self.holdout_fraction} outside (0, 1)")
        for activation in [self.hidden_activation, self.output_activation]:
            if activation is not None and activation not in ACTIVATIONS:
                raise ConfigurationError(f"ERROR: unknown activation '{activation}', expected one of {ACTIVATIONS}")
        if self.density not in MLE_DENSITIES:
            raise ConfigurationError(f"ERROR: unknown density '{self.density}', expected one of {MLE_DENSITIES}")

    def resolved_output_dim(self, input_dim: int) -> int:
        '''d' for a given input dimension; d' > input_dim is a contract error'''
        d_out = input_dim if self.output_dim is None else self.output_dim
        if d_out > input_dim:
            raise ContractError(f"ERROR: output_dim {d_out} exceeds input dimension {input_dim}")
        return d_out

    def replace(self, **changes) -> "TrainConfig":
        fields = self.as_dict()
        fields.update(changes)
        return TrainConfig(**fields)

    def as_dict(self) -> dict:
        return {
            "hidden_widths": self.hidden_widths,
            "output_dim": self.output_dim,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "patience": self.patience,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "psi_hidden": self.psi_hidden,
            "density": self.density,
            "mle_layers": self.mle_layers,
            "holdout_fraction": self.holdout_fraction,
            "alpha": self.alpha
        }


# What a trainer hands back: the learned map, the recovered components
# and the per-epoch pretext curves. z is always forward(extractor, x).
class EstimatorResult:
    extractor: Mlp
    z: Tensor                       # (T, d')
    pretext_metrics: pd.DataFrame   # one row per epoch
    method: str
    features: Optional[Tensor]      # raw h(x) when z went through a further linear step
    extras: dict                    # method specific diagnostics, json-serializable

    def __init__(self, extractor: Mlp, z, pretext_metrics: pd.DataFrame, method: str,
                 features=None, extras: dict = None):
        self.extractor = extractor
        self.z = np.asarray(z, dtype=np.float64)
        self.pretext_metrics = pretext_metrics.reset_index(drop=True)
        self.method = method
        self.features = None if features is None else np.asarray(features, dtype=np.float64)
        self.extras = dict(extras or {})
        self.validate_fields()

    def validate_fields(self):
        if self.method not in METHODS:
            raise ContractError(f"ERROR: unknown method tag '{self.method}'")
        if self.z.ndim != 2 or self.z.shape[1] != self.extractor.output_dim:
            raise ContractError(f"ERROR: z shape {self.z.shape} does not match extractor output {self.extractor.output_dim}")
        if "heldout_accuracy" in self.pretext_metrics:
            acc = self.pretext_metrics["heldout_accuracy"].to_numpy()
            if np.any((acc < 0.0) | (acc > 1.0)):
                raise ContractError("ERROR: pretext accuracy outside [0, 1]")

    def recompute_z(self, x) -> Tensor:
        return forward(self.extractor, x)

    def final_metrics(self) -> dict:
        if len(self.pretext_metrics) == 0:
            return {}
        row = self.pretext_metrics.iloc[-1]
        return {k: float(v) for k, v in row.items()}

    def save(self, prefix: str) -> List[str]:
        '''<prefix>_weights.json, <prefix>_z.csv, <prefix>_curves.csv'''
        weights_path = f"{prefix}_weights.json"
        write_json(weights_path, {"method": self.method, "extractor": self.extractor.as_dict(), "extras": self.extras})
        z_frame = pd.DataFrame(self.z, columns=[f"z{i + 1}" for i in range(self.z.shape[1])])
        z_path = write_frame_csv(f"{prefix}_z.csv", z_frame)
        curves_path = write_frame_csv(f"{prefix}_curves.csv", self.pretext_metrics)
        return [weights_path, z_path, curves_path]
