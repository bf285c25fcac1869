import json
import os
from typing import List, Optional

import numpy as np
import pandas as pd

from autodiff import Tensor, check_finite
from file_utils import read_json, write_frame_csv, write_json
from nica_errors import ContractError, DimensionError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("dataset")


# This class holds one time-indexed data set: observations x(t), and when
# synthetic the ground-truth sources s(t), segment labels tau(t) and
# auxiliary variables u(t). Rows are time points.
class Dataset:
    x: Tensor                       # (T, d_obs)
    s_true: Optional[Tensor]        # (T, d) or None
    segments: Optional[np.ndarray]  # (T,) labels in 1..n_segments or None
    aux: Optional[Tensor]           # (T, k) or None
    seed: int
    spec: dict                      # generator settings, written to the json sidecar

    def __init__(self, x, s_true=None, segments=None, aux=None, seed: int = 0, spec: dict = None):
        self.x = np.asarray(x, dtype=np.float64)
        self.s_true = None if s_true is None else np.asarray(s_true, dtype=np.float64)
        self.segments = None if segments is None else np.asarray(segments, dtype=int)
        self.aux = None if aux is None else np.asarray(aux, dtype=np.float64)
        self.seed = int(seed)
        self.spec = dict(spec or {})
        self.validate_fields()

    def validate_fields(self):
        if self.x.ndim != 2:
            raise DimensionError(f"ERROR: x must be 2-D not {self.x.ndim}-D")
        check_finite(self.x, "dataset x")
        T = self.x.shape[0]
        for field in ["s_true", "aux"]:
            value = getattr(self, field)
            if value is not None:
                if value.ndim != 2 or value.shape[0] != T:
                    raise DimensionError(f"ERROR: {field} has shape {value.shape}, expected {T} rows")
                check_finite(value, f"dataset {field}")
        if self.segments is not None:
            if self.segments.shape != (T,):
                raise DimensionError(f"ERROR: segments has shape {self.segments.shape}, expected ({T},)")
            present = set(np.unique(self.segments).tolist())
            expected = set(range(1, self.n_segments + 1))
            if present != expected:
                raise ContractError(f"ERROR: segment labels must cover 1..{self.n_segments} with no empty segment")

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def n_segments(self) -> int:
        return 0 if self.segments is None else int(self.segments.max())

    def replace(self, **changes) -> "Dataset":
        '''Return a new Dataset with some fields replaced'''
        fields = {
            "x": self.x, "s_true": self.s_true, "segments": self.segments,
            "aux": self.aux, "seed": self.seed, "spec": self.spec
        }
        fields.update(changes)
        return Dataset(**fields)

    def take(self, rows: np.ndarray) -> "Dataset":
        '''Return a new Dataset restricted to the given time rows (order kept)'''
        return Dataset(
            x=self.x[rows],
            s_true=None if self.s_true is None else self.s_true[rows],
            segments=None if self.segments is None else self.segments[rows],
            aux=None if self.aux is None else self.aux[rows],
            seed=self.seed,
            spec=self.spec)

    def column_groups(self) -> dict:
        groups = {}
        if self.s_true is not None:
            groups["s"] = [f"s{i + 1}" for i in range(self.s_true.shape[1])]
        groups["x"] = [f"x{i + 1}" for i in range(self.x.shape[1])]
        if self.segments is not None:
            groups["segment"] = ["segment"]
        if self.aux is not None:
            groups["u"] = [f"u{i + 1}" for i in range(self.aux.shape[1])]
        return groups

    def to_frame(self) -> pd.DataFrame:
        '''columnar layout: s1..sd, x1..xD, segment, u1..uk'''
        groups = self.column_groups()
        parts = []
        if "s" in groups:
            parts.append(pd.DataFrame(self.s_true, columns=groups["s"]))
        parts.append(pd.DataFrame(self.x, columns=groups["x"]))
        if "segment" in groups:
            parts.append(pd.DataFrame({"segment": self.segments}))
        if "u" in groups:
            parts.append(pd.DataFrame(self.aux, columns=groups["u"]))
        return pd.concat(parts, axis=1)

    def as_dict(self) -> dict:
        '''the json sidecar contents'''
        return {
            "seed": self.seed,
            "T": self.T,
            "spec": self.spec,
            "columns": self.column_groups()
        }

    def save(self, csv_path: str) -> List[str]:
        '''write <name>.csv and the <name>.json sidecar; returns both paths'''
        sidecar_path = os.path.splitext(csv_path)[0] + ".json"
        # full precision so that load() gives back the same floats
        write_frame_csv(csv_path, self.to_frame(), float_format="%.17g")
        write_json(sidecar_path, self.as_dict())
        return [csv_path, sidecar_path]

    @classmethod
    def load(cls, csv_path: str) -> "Dataset":
        sidecar = read_json(os.path.splitext(csv_path)[0] + ".json")
        df = pd.read_csv(csv_path, float_precision="round_trip")
        groups = sidecar["columns"]
        return cls(
            x=df[groups["x"]].to_numpy(dtype=np.float64),
            s_true=df[groups["s"]].to_numpy(dtype=np.float64) if "s" in groups else None,
            segments=df["segment"].to_numpy(dtype=int) if "segment" in groups else None,
            aux=df[groups["u"]].to_numpy(dtype=np.float64) if "u" in groups else None,
            seed=sidecar["seed"],
            spec=sidecar["spec"])

    def as_str(self) -> str:
        return json.dumps(self.as_dict())
