import json
import os
from typing import Any, Dict

import numpy as np
import pandas as pd

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("file_utils")

# fixed float format so that reruns write byte-identical csv files
CSV_FLOAT_FORMAT = "%.10g"


def ensure_dir(folder: str) -> str:
    '''Creates folder if needed and returns it'''
    if folder and not os.path.isdir(folder):
        os.makedirs(folder, exist_ok=True)
    return folder


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    raise TypeError(f"ERROR: {type(value).__name__} is not JSON serializable")


def write_json(path: str, data: Dict[str, Any]) -> str:
    '''
    Write data as indented json with sorted keys, so identical
    dicts always produce identical files
    '''
    ensure_dir(os.path.dirname(path))
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_to_jsonable)
        f.write("\n")
    logger.debug(f"write_json() {path}")
    return path


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r") as f:
        return json.load(f)


def write_frame_csv(path: str, df: pd.DataFrame, float_format: str = CSV_FLOAT_FORMAT) -> str:
    ensure_dir(os.path.dirname(path))
    df.to_csv(path, index=False, float_format=float_format)
    logger.debug(f"write_frame_csv() {path} shape:{df.shape}")
    return path


def compare_files(name1: str, name2: str) -> bool:
    '''
    Return True if the two files are byte-identical
    from https://www.quora.com/profile/Jon-Obermark-2
    '''
    with open(name1, "rb") as one:
        with open(name2, "rb") as two:
            chunk = other = True
            while chunk or other:
                chunk = one.read(1000)
                other = two.read(1000)
                if chunk != other:
                    return False
    return True
